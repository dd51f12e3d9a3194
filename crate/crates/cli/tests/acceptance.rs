//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use rtbm::cmaes::{self, CmaesConfig};
use rtbm::fit::{fit_density, FitConfig};
use rtbm::metrics::{conditional_mse, student_conditional_mse};
use rtbm::oracle::{
    gaussian_logpdf, quadrature_marginal_with, sample_student, trapezoid_nd, GridAxis,
    StudentTParams,
};
use rtbm::sampling::{
    empirical_conditional, mixture_components, sample_model, BinSpec, DEFAULT_WINDOW,
};
use rtbm::{
    condition, condition_on, fixtures, log_theta_reference, Dataset, Lattice, Rtbm, RtbmParams,
    ThetaSum,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_pd(rng: &mut ChaCha20Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let q = a.qr().q();
    let eig = DVector::from_fn(d, |_, _| rng.gen_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Theta sums against exhaustive summation over a generous cube.
fn theta_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let d = 1 + case % 3;
        let lattice = if case % 2 == 0 {
            Lattice::Full
        } else {
            Lattice::NonNeg
        };
        let omega = random_pd(&mut rng, d, 0.5, 50.0);
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        // Cube radius: centre offset plus enough Gaussian tail for exp(−40).
        let inv = omega.clone().try_inverse().ok_or("singular Ω")?;
        let centre = &inv * DVector::from_column_slice(&z);
        let lambda_min = omega.symmetric_eigenvalues().min();
        let radius = (centre.amax() + (80.0 / lambda_min).sqrt()).ceil() as u32 + 1;
        let fast = ThetaSum::new(&omega, lattice, 1e-12)
            .and_then(|s| s.log_theta(&z))
            .map_err(err)?;
        let slow = log_theta_reference(&z, &omega, lattice, radius).map_err(err)?;
        worst = worst.max((fast - slow).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && secs <= 60.0,
        format!("max |Δ log θ| = {worst:.2e} over 200 cases, {secs:.1}s"),
    )
}

/// `W = 0` machines are Gaussians with precision `T` and mean `−T⁻¹B_v`.
fn gaussian_reduction() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for model_ix in 0..4 {
        let nv = 1 + model_ix % 3;
        let nh = 1 + model_ix % 2;
        let t = random_pd(&mut rng, nv, 0.3, 5.0);
        let q = random_pd(&mut rng, nh, 0.5, 20.0);
        let bv = DVector::from_fn(nv, |_, _| rng.gen_range(-2.0..2.0));
        let bh = DVector::from_fn(nh, |_, _| rng.gen_range(-2.0..2.0));
        let cov = t.clone().try_inverse().ok_or("singular T")?;
        let mean = -(&cov * &bv);
        let params =
            RtbmParams::new(t, q, DMatrix::zeros(nv, nh), bv, bh, Lattice::Full).map_err(err)?;
        let model = Rtbm::new(params).map_err(err)?;
        for _ in 0..250 {
            let v: Vec<f64> = (0..nv)
                .map(|i| mean[i] + rng.gen_range(-4.0..4.0))
                .collect();
            let a = model.log_pdf(&v).map_err(err)?;
            let b = gaussian_logpdf(&mean, &cov, &v).map_err(err)?;
            worst = worst.max((a - b).abs());
            count += 1;
        }
    }
    check(
        worst <= 1e-12,
        format!("max |Δ log P| = {worst:.2e} at {count} points"),
    )
}

/// Per-coordinate mean and standard deviation from model samples.
fn moments(model: &Rtbm, seed: u64) -> Result<(Vec<f64>, Vec<f64>), String> {
    let s = sample_model(model, 20_000, seed).map_err(err)?;
    let n = s.len() as f64;
    let mut mean = vec![0.0; s.dim()];
    let mut sd = vec![0.0; s.dim()];
    for j in 0..s.dim() {
        let col = s.column(j);
        mean[j] = col.iter().sum::<f64>() / n;
        sd[j] = (col.iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok((mean, sd))
}

/// `log P(y, d) = log P(y | d) + log P(d)` on a 50-point tensor grid.
fn product_rule() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for params in fixtures::valid_fixtures() {
        let nv = params.n_v();
        let model = Rtbm::new(params.clone()).map_err(err)?;
        let (mean, sd) = moments(&model, 5)?;
        let nodes: &[usize] = if nv == 2 { &[10, 5] } else { &[5, 5, 2] };
        let axes: Vec<GridAxis> = (0..nv)
            .map(|j| GridAxis::new(mean[j] - 2.0 * sd[j], mean[j] + 2.0 * sd[j], nodes[j]))
            .collect::<rtbm::Result<_>>()
            .map_err(err)?;
        let mut points = Vec::new();
        rtbm::oracle::for_each_node(&axes, |_, x| points.push(x.to_vec()));
        for m in 1..nv {
            let marginal = model.marginal(m).map_err(err)?;
            for v in &points {
                let (y, d) = v.split_at(m);
                let child = Rtbm::new(condition(&params, m, d).map_err(err)?).map_err(err)?;
                let lhs = model.log_pdf(v).map_err(err)?;
                let rhs = child.log_pdf(y).map_err(err)? + marginal.log_density(d).map_err(err)?;
                worst = worst.max((lhs - rhs).abs());
                checks += 1;
            }
        }
    }
    check(
        worst <= 1e-9,
        format!("max |Δ| = {worst:.2e} over {checks} (fixture, split, point) checks"),
    )
}

/// Analytic marginals against trapezoid quadrature over the integrated block.
fn marginal_quadrature() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for params in fixtures::valid_fixtures() {
        let nv = params.n_v();
        let model = Rtbm::new(params.clone()).map_err(err)?;
        let (mean, sd) = moments(&model, 6)?;
        for m in 1..nv.min(3) {
            let nodes = if m == 1 { 801 } else { 241 };
            let axes: Vec<GridAxis> = (0..m)
                .map(|j| GridAxis::new(mean[j] - 14.0 * sd[j], mean[j] + 14.0 * sd[j], nodes))
                .collect::<rtbm::Result<_>>()
                .map_err(err)?;
            let marginal = model.marginal(m).map_err(err)?;
            for shift in [-1.0, 0.0, 1.5] {
                let d: Vec<f64> = (m..nv).map(|j| mean[j] + shift * sd[j]).collect();
                let quad = quadrature_marginal_with(&model, m, &d, &axes).map_err(err)?;
                let exact = marginal.log_density(&d).map_err(err)?.exp();
                worst = worst.max((quad - exact).abs() / exact);
                checks += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs <= 120.0,
        format!("max relative error {worst:.2e} over {checks} marginals, {secs:.1}s"),
    )
}

/// Conditional machines integrate to one over their free coordinates.
fn normalization() -> Outcome {
    let cases: Vec<(RtbmParams, Vec<usize>, Vec<f64>)> = vec![
        (fixtures::fitted_student_t(), vec![0], vec![-2.0]),
        (fixtures::fitted_student_t(), vec![1], vec![1.0]),
        (fixtures::mixture_2d(), vec![1], vec![0.1]),
        (fixtures::mixture_3d(), vec![0], vec![0.3]),
        (fixtures::mixture_3d(), vec![2, 0], vec![-0.1, 0.2]),
    ];
    let mut worst: f64 = 0.0;
    let mut dims = Vec::new();
    for (params, idx, values) in cases {
        let (child, _) = condition_on(&params, &idx, &values).map_err(err)?;
        let model = Rtbm::new(child).map_err(err)?;
        let (mean, sd) = moments(&model, 8)?;
        let k = model.params().n_v();
        let nodes = if k == 1 { 2001 } else { 301 };
        let axes: Vec<GridAxis> = (0..k)
            .map(|j| GridAxis::new(mean[j] - 14.0 * sd[j], mean[j] + 14.0 * sd[j], nodes))
            .collect::<rtbm::Result<_>>()
            .map_err(err)?;
        let total = trapezoid_nd(&axes, |y| {
            model.log_pdf(y).map(f64::exp).unwrap_or(f64::NAN)
        });
        worst = worst.max((total - 1.0).abs());
        dims.push(k);
    }
    check(
        worst <= 1e-4,
        format!("max |∫P − 1| = {worst:.2e} for children of dimension {dims:?}"),
    )
}

const STUDENT_SEED: u64 = 20_180_531;
const STUDENT_SAMPLES: usize = 5000;
const CONDITIONING: [f64; 3] = [-2.0, 0.0, 1.0];

fn student_fit_config() -> FitConfig {
    FitConfig {
        n_h: 2,
        restarts: 5,
        max_evals: 4000,
        seed: 7,
        ..Default::default()
    }
}

/// Scaled Student-t experiment; returns the three conditional MSEs and the NLL.
fn student_experiment() -> Result<(Vec<f64>, f64, f64), String> {
    let tp = StudentTParams::reference();
    let data = sample_student(&tp, STUDENT_SAMPLES, STUDENT_SEED).map_err(err)?;
    let start = Instant::now();
    let fit = fit_density(&data, &student_fit_config()).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let x2 = data.column(1);
    let mses = CONDITIONING
        .iter()
        .map(|&x1| student_conditional_mse(&fit.params, &tp, x1, &x2))
        .collect::<rtbm::Result<Vec<_>>>()
        .map_err(err)?;
    Ok((mses, fit.nll, secs))
}

fn student_outcome(mses: &[f64], detail: String) -> Outcome {
    let listed: Vec<String> = CONDITIONING
        .iter()
        .zip(mses)
        .map(|(x, e)| format!("x₁={x}: {e:.3e}"))
        .collect();
    check(
        mses.iter().all(|e| *e <= 1e-3),
        format!("{} ({detail})", listed.join(", ")),
    )
}

/// Empirical conditional of model samples against the conditional machine.
fn sampler_fidelity() -> Outcome {
    let params = fixtures::fitted_student_t();
    let model = Rtbm::new(params.clone()).map_err(err)?;
    let samples = sample_model(&model, 50_000, 99).map_err(err)?;
    let hist = empirical_conditional(
        &samples,
        &[0],
        &[-2.0],
        &[DEFAULT_WINDOW],
        &BinSpec::default(),
    )
    .map_err(err)?;
    let (child, _) = condition_on(&params, &[0], &[-2.0]).map_err(err)?;
    let child = Rtbm::new(child).map_err(err)?;
    let exact = hist
        .centers()
        .iter()
        .map(|c| child.log_pdf(c).map(f64::exp))
        .collect::<rtbm::Result<Vec<_>>>()
        .map_err(err)?;
    let e = conditional_mse(&hist.density, &exact).map_err(err)?;
    let kept: u64 = hist.counts.iter().sum();
    check(
        e <= 1e-3,
        format!(
            "MSE {e:.3e} over {} bins from {kept} conditioned samples",
            exact.len()
        ),
    )
}

/// Mixture-of-Gaussians form against the closed-form density.
fn mixture_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for (k, params) in fixtures::valid_fixtures().into_iter().enumerate() {
        let model = Rtbm::new(params.clone()).map_err(err)?;
        let cov = params.t().clone().try_inverse().ok_or("singular T")?;
        let components = mixture_components(&model).map_err(err)?;
        let (mean, sd) = moments(&model, 10 + k as u64)?;
        let mut rng = ChaCha20Rng::seed_from_u64(31 + k as u64);
        for _ in 0..100 {
            let v: Vec<f64> = (0..params.n_v())
                .map(|j| mean[j] + sd[j] * rng.gen_range(-3.0..3.0))
                .collect();
            let direct = model.log_pdf(&v).map_err(err)?.exp();
            let mut mixture = 0.0;
            for (lw, mu) in &components {
                mixture += (lw + gaussian_logpdf(mu, &cov, &v).map_err(err)?).exp();
            }
            worst = worst.max((mixture - direct).abs() / direct);
        }
    }
    check(
        worst <= 1e-9,
        format!("max relative error {worst:.2e} at 100 points × 3 fixtures"),
    )
}

fn cmaes_sanity() -> Outcome {
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
    let sc = CmaesConfig {
        max_evals: 10_000,
        seed: 1,
        sigma0: 0.5,
        ..Default::default()
    };
    let rc = CmaesConfig {
        max_evals: 20_000,
        seed: 1,
        sigma0: 0.5,
        ..Default::default()
    };
    let s1 = cmaes::minimize(sphere, &[1.0; 10], &sc).map_err(err)?;
    let s2 = cmaes::minimize(sphere, &[1.0; 10], &sc).map_err(err)?;
    let r1 = cmaes::minimize(rosen, &[-1.2, 1.0], &rc).map_err(err)?;
    let r2 = cmaes::minimize(rosen, &[-1.2, 1.0], &rc).map_err(err)?;
    let deterministic =
        s1.trace == s2.trace && r1.trace == r2.trace && s1.x == s2.x && r1.x == r2.x;
    check(
        s1.f <= 1e-10 && s1.evals <= 10_000 && r1.f <= 1e-6 && r1.evals <= 20_000 && deterministic,
        format!(
            "sphere {:.1e} in {} evals, Rosenbrock {:.1e} in {} evals, deterministic: {deterministic}",
            s1.f, s1.evals, r1.f, r1.evals
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rtbm"))
        .args(args)
        .current_dir(dir)
        .env_remove("RTBM_SEED")
        .env_remove("RTBM_THETA_EPS")
        .env_remove("RTBM_RESTARTS")
        .env_remove("RTBM_MAX_EVALS")
        .output()
        .map_err(err)?;
    if out.status.code() != Some(0) {
        return Err(format!(
            "`rtbm {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

/// The Student-t experiment through files and the command line only.
fn cli_pipeline(library_mses: Option<&[f64]>) -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let d = tmp.path();
    let cfg = student_fit_config();
    let (seed, count) = (STUDENT_SEED.to_string(), STUDENT_SAMPLES.to_string());
    let (fit_seed, restarts, evals) = (
        cfg.seed.to_string(),
        cfg.restarts.to_string(),
        cfg.max_evals.to_string(),
    );
    run_cli(
        d,
        &[
            "student", "sample", "--count", &count, "--seed", &seed, "--out", "t.csv",
        ],
    )?;
    run_cli(
        d,
        &[
            "fit",
            "--data",
            "t.csv",
            "--nh",
            "2",
            "--seed",
            &fit_seed,
            "--restarts",
            &restarts,
            "--max-evals",
            &evals,
            "--out",
            "fit.json",
        ],
    )?;
    let mut mses = Vec::new();
    for x1 in CONDITIONING {
        let on = format!("0={x1}");
        run_cli(
            d,
            &[
                "conditional",
                "--model",
                "fit.json",
                "--on",
                &on,
                "--out",
                "child.json",
            ],
        )?;
        run_cli(
            d,
            &[
                "density",
                "--model",
                "child.json",
                "--points",
                "t.csv",
                "--columns",
                "1",
                "--out",
                "cand.csv",
            ],
        )?;
        run_cli(
            d,
            &[
                "student",
                "conditional",
                "--on",
                &on,
                "--points",
                "t.csv",
                "--columns",
                "1",
                "--out",
                "ref.csv",
            ],
        )?;
        let report = run_cli(
            d,
            &["mse", "--reference", "ref.csv", "--candidate", "cand.csv"],
        )?;
        let report: serde_json::Value = serde_json::from_slice(&report).map_err(err)?;
        mses.push(report["mse"].as_f64().ok_or("mse report lacks a value")?);
    }
    // Model files must survive load → save unchanged.
    let text = std::fs::read_to_string(d.join("fit.json")).map_err(err)?;
    let reloaded = RtbmParams::from_json(&text).map_err(err)?;
    let stable = reloaded.to_json() == text
        && RtbmParams::from_json(&reloaded.to_json()).map_err(err)? == reloaded;
    let matches_library = library_mses.map(|lib| lib == mses.as_slice());
    let data_identical = Dataset::load_csv(d.join("t.csv")).map_err(err)?
        == sample_student(&StudentTParams::reference(), STUDENT_SAMPLES, STUDENT_SEED)
            .map_err(err)?;
    let base = student_outcome(
        &mses,
        format!(
        "round-trip stable: {stable}, data identical: {data_identical}, equals in-process run: {}",
        matches_library.map_or("n/a".into(), |b| b.to_string())
    ),
    );
    match base {
        Ok(s) if stable && data_identical && matches_library != Some(false) => Ok(s),
        Ok(s) | Err(s) => Err(s),
    }
}

fn main() {
    // Let `cargo test -- --list` and filters pass through harmlessly.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failures = 0;
    let mut report = |n: u32, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {n:>2} — {name}: {detail}");
    };

    report(1, "theta oracle equivalence", theta_oracle());
    report(2, "Gaussian reduction", gaussian_reduction());
    report(3, "product rule", product_rule());
    report(4, "marginal vs quadrature", marginal_quadrature());
    report(5, "conditional normalization", normalization());
    let student = student_experiment();
    let library_mses = student.as_ref().ok().map(|s| s.0.clone());
    report(
        6,
        "Student-t experiment",
        student.and_then(|(mses, nll, secs)| {
            student_outcome(
                &mses,
                format!("NLL {nll:.1} on {STUDENT_SAMPLES} samples, fit {secs:.0}s"),
            )
        }),
    );
    report(7, "sampler fidelity", sampler_fidelity());
    report(8, "mixture equivalence", mixture_equivalence());
    report(9, "CMA-ES sanity", cmaes_sanity());
    report(10, "end-to-end CLI", cli_pipeline(library_mses.as_deref()));

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
