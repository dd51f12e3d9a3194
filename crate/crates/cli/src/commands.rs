use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use rtbm::fit::{fit_density, FitConfig};
use rtbm::metrics::mse;
use rtbm::oracle::{sample_student, student_conditional, StudentTParams};
use rtbm::sampling::{empirical_conditional, histogram, sample_model, BinSpec, RNG_NAME};
use rtbm::{condition_on, validate, Dataset, Rtbm};

use crate::args::{Assignments, Usage};
use crate::output::{
    dataset_bytes, emit, grid_csv, load_data, load_model, write_atomic, DensitySource,
};
use crate::{
    Cli, Command, ConditionalArgs, DensityArgs, FitArgs, HistogramArgs, MseArgs, PointArgs,
    SampleArgs, StudentCommand, StudentParams, ValidateArgs,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

pub fn run(cli: Cli) -> Result<()> {
    let eps = cli.theta_eps;
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(usage(format!(
            "--theta-eps must lie in (0, 1e-3], got {eps}"
        )));
    }
    match cli.command {
        Command::Fit(a) => fit(a, eps),
        Command::Density(a) => density(a, eps),
        Command::Conditional(a) => conditional(a),
        Command::Sample(a) => sample(a, eps),
        Command::Histogram(a) => hist(a),
        Command::Mse(a) => mse_cmd(a, eps),
        Command::Validate(a) => validate_cmd(a),
        Command::Student(c) => student(c),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn fit(a: FitArgs, eps: f64) -> Result<()> {
    if a.nh == 0 || a.restarts == 0 || a.max_evals == 0 {
        return Err(usage("--nh, --restarts and --max-evals must be positive"));
    }
    if a.population.is_some_and(|p| p < 2) {
        return Err(usage("--population must be at least 2"));
    }
    let data = load_data(&a.data)?;
    let config = FitConfig {
        n_h: a.nh,
        restarts: a.restarts,
        population: a.population,
        sigma0: a.sigma0,
        max_evals: a.max_evals,
        seed: a.seed,
        theta_eps: eps,
        lattice: a.lattice,
        standardize: a.standardize,
    };
    let start = Instant::now();
    let result = fit_density(&data, &config)?;
    let wall = start.elapsed().as_secs_f64();

    let trace_path = a.trace.unwrap_or_else(|| with_suffix(&a.out, ".trace.csv"));
    let meta_path = a.meta.unwrap_or_else(|| with_suffix(&a.out, ".meta.json"));
    let mut trace = String::from("eval_count,best_nll\n");
    for (e, f) in &result.trace {
        trace.push_str(&format!("{e},{f:?}\n"));
    }
    let meta = json!({
        "command": "fit",
        "data": a.data,
        "samples": data.len(),
        "seed": a.seed,
        "rng": RNG_NAME,
        "config": config,
        "wall_time_seconds": wall,
        "nll": result.nll,
        "evals": result.evals,
        "restarts": result.restarts,
        "model": a.out,
        "trace": trace_path,
    });
    write_atomic(&a.out, result.params.to_json().as_bytes())?;
    write_atomic(&trace_path, trace.as_bytes())?;
    write_atomic(&meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    eprintln!(
        "nll {:.6} after {} evaluations in {wall:.1}s",
        result.nll, result.evals
    );
    Ok(())
}

/// Points selected by `--grid` or `--points/--columns`, if any.
fn resolve_points(at: &PointArgs) -> Result<Option<Vec<Vec<f64>>>> {
    if let Some(g) = &at.grid {
        return Ok(Some(g.points()));
    }
    let Some(path) = &at.points else {
        return Ok(None);
    };
    let mut data = load_data(path)?;
    if let Some(cols) = &at.columns {
        if let Some(c) = cols.iter().find(|c| **c >= data.dim()) {
            return Err(usage(format!(
                "column {c} out of range for {} ({} columns)",
                path.display(),
                data.dim()
            )));
        }
        data = data.select_columns(cols)?;
    }
    Ok(Some(data.rows().map(<[f64]>::to_vec).collect()))
}

fn require_points(at: &PointArgs) -> Result<Vec<Vec<f64>>> {
    resolve_points(at)?.ok_or_else(|| usage("one of --grid or --points is required"))
}

fn check_dims(points: &[Vec<f64>], dim: usize) -> Result<()> {
    match points.iter().find(|p| p.len() != dim) {
        Some(p) => Err(usage(format!(
            "evaluation points have {} coordinates, the density has {dim}",
            p.len()
        ))),
        None => Ok(()),
    }
}

fn density(a: DensityArgs, eps: f64) -> Result<()> {
    let points = require_points(&a.at)?;
    let model = Rtbm::with_eps(load_model(&a.model)?, eps)?;
    check_dims(&points, model.params().n_v())?;
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let logp = model.log_pdf_batch(&Dataset::new(model.params().n_v(), flat)?)?;
    emit(a.out.as_deref(), &grid_csv(&points, &logp))
}

fn check_assignments(on: &Assignments, dim: usize) -> Result<()> {
    if let Some(i) = on.indices.iter().find(|i| **i >= dim) {
        return Err(usage(format!(
            "index {i} out of range for {dim} coordinates"
        )));
    }
    if on.indices.len() >= dim {
        return Err(usage("at least one coordinate must stay free"));
    }
    Ok(())
}

fn conditional(a: ConditionalArgs) -> Result<()> {
    let params = load_model(&a.model)?;
    check_assignments(&a.on, params.n_v())?;
    let (child, free) = condition_on(&params, &a.on.indices, &a.on.values)?;
    write_atomic(&a.out, child.to_json().as_bytes())?;
    eprintln!("free coordinates (in child order): {free:?}");
    Ok(())
}

fn sample(a: SampleArgs, eps: f64) -> Result<()> {
    if a.count == 0 {
        return Err(usage("--count must be positive"));
    }
    let model = Rtbm::with_eps(load_model(&a.model)?, eps)?;
    let data = sample_model(&model, a.count, a.seed)?;
    emit(a.out.as_deref(), &dataset_bytes(&data)?)
}

fn hist(a: HistogramArgs) -> Result<()> {
    let samples = load_data(&a.samples)?;
    let spec = BinSpec {
        bins: a.bins,
        ranges: a.range.map(|r| r.0),
    };
    if spec.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let h = match &a.on {
        Some(on) => {
            check_assignments(on, samples.dim())?;
            let window = match a.window.len() {
                1 => vec![a.window[0]; on.indices.len()],
                n if n == on.indices.len() => a.window.clone(),
                n => {
                    return Err(usage(format!(
                        "{n} windows for {} conditioned indices",
                        on.indices.len()
                    )))
                }
            };
            empirical_conditional(&samples, &on.indices, &on.values, &window, &spec)?
        }
        None => histogram(&samples, &spec)?,
    };
    emit(a.out.as_deref(), h.to_json().as_bytes())
}

fn mse_cmd(a: MseArgs, eps: f64) -> Result<()> {
    let reference = DensitySource::load(&a.reference, eps)?;
    let candidate = DensitySource::load(&a.candidate, eps)?;
    let points = match resolve_points(&a.at)? {
        Some(p) => p,
        None => reference
            .points()
            .or(candidate.points())
            .map(<[Vec<f64>]>::to_vec)
            .ok_or_else(|| usage("both sources are models; give --grid or --points"))?,
    };
    let r = reference.density_at(&points).context("reference")?;
    let c = candidate.density_at(&points).context("candidate")?;
    let value = mse(&r, &c)?;
    let report = json!({ "mse": value, "points": points.len() });
    let text = format!("{report}\n");
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<()> {
    let report = validate(&load_model(&a.model)?);
    if report.valid {
        println!("valid");
        Ok(())
    } else {
        Err(anyhow!("{report}"))
    }
}

fn student_params(p: &StudentParams) -> Result<StudentTParams> {
    let reference = StudentTParams::reference();
    let mu =
        p.mu.as_ref()
            .map_or(reference.mu.clone(), |m| DVector::from_vec(m.0.clone()));
    let k = mu.len();
    let sigma = match &p.sigma {
        Some(s) if s.0.len() == k * k => DMatrix::from_row_slice(k, k, &s.0),
        Some(s) => {
            return Err(usage(format!(
                "--sigma has {} entries, expected {}",
                s.0.len(),
                k * k
            )))
        }
        None if k == reference.p() => reference.sigma.clone(),
        None => return Err(usage("--sigma is required when --mu is not bivariate")),
    };
    Ok(StudentTParams::new(
        mu,
        sigma,
        p.nu.unwrap_or(reference.nu),
    )?)
}

fn student(c: StudentCommand) -> Result<()> {
    match c {
        StudentCommand::Sample {
            params,
            count,
            seed,
            out,
        } => {
            if count == 0 {
                return Err(usage("--count must be positive"));
            }
            let tp = student_params(&params)?;
            emit(
                out.as_deref(),
                &dataset_bytes(&sample_student(&tp, count, seed)?)?,
            )
        }
        StudentCommand::Conditional {
            params,
            on,
            at,
            out,
        } => {
            let tp = student_params(&params)?;
            let p = tp.p();
            check_assignments(&on, p)?;
            let points = require_points(&at)?;
            // Move the conditioned coordinates to the front.
            let free = (0..p).filter(|i| !on.indices.contains(i));
            let order: Vec<usize> = on.indices.iter().copied().chain(free).collect();
            let mu = DVector::from_fn(p, |i, _| tp.mu[order[i]]);
            let sigma = DMatrix::from_fn(p, p, |i, j| tp.sigma[(order[i], order[j])]);
            let permuted = StudentTParams::new(mu, sigma, tp.nu)?;
            let cond = student_conditional(&permuted, on.indices.len(), &on.values)?;
            check_dims(&points, cond.p2)?;
            let logp = points
                .iter()
                .map(|x| cond.log_pdf(x))
                .collect::<rtbm::Result<Vec<_>>>()?;
            emit(out.as_deref(), &grid_csv(&points, &logp))
        }
    }
}
