//! Maximum-likelihood fitting with CMA-ES over an unconstrained encoding.
//!
//! The encoding stores `T` and `Q` through lower-triangular factors with
//! log-diagonals, so every decoded vector has positive definite `T` and `Q`.
//! Positive definiteness of `Q − WᵀT⁻¹W` is not structural; candidates that
//! violate it receive a large penalty instead of a likelihood.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cmaes::{self, CmaesConfig, Termination};
use crate::data::Dataset;
use crate::density::Rtbm;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{validate, Lattice, RtbmParams};
use crate::theta::DEFAULT_EPS;

/// Smallest admissible eigenvalue of `Q − WᵀT⁻¹W` during the search.
pub const LAMBDA_FLOOR: f64 = 1e-8;
/// Objective value assigned to any candidate below the floor, before the
/// proportional term. Far above any likelihood seen at desk scale.
pub const PENALTY_BASE: f64 = 1e12;
pub const PENALTY_SLOPE: f64 = 1e6;

const INIT_SD: f64 = 0.5;
const BH_OFFSET_SD: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitConfig {
    pub n_h: usize,
    pub restarts: usize,
    /// CMA-ES population; `None` uses the standard default for the encoding size.
    pub population: Option<usize>,
    pub sigma0: f64,
    /// Evaluation budget per restart.
    pub max_evals: usize,
    pub seed: u64,
    pub theta_eps: f64,
    pub lattice: Lattice,
    /// Fit on per-column standardized data and map the parameters back.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_h: 2,
            restarts: 5,
            population: None,
            sigma0: 0.3,
            max_evals: 50_000,
            seed: 0,
            theta_eps: DEFAULT_EPS,
            lattice: Lattice::Full,
            standardize: false,
        }
    }
}

impl FitConfig {
    fn check(&self) -> Result<()> {
        let bad = |what: &'static str, v: String| Err(Error::OutOfRange { what, value: v });
        if self.n_h == 0 {
            return bad("n_h", "0".into());
        }
        if self.restarts == 0 {
            return bad("restarts", "0".into());
        }
        if self.max_evals == 0 {
            return bad("max_evals", "0".into());
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0", self.sigma0.to_string());
        }
        if let Some(p) = self.population {
            if p < 2 {
                return bad("population", p.to_string());
            }
        }
        Ok(())
    }
}

/// Outcome of one restart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary {
    pub nll: f64,
    pub evals: usize,
    pub termination: Termination,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: RtbmParams,
    /// Negative log-likelihood of `params` on the training data.
    pub nll: f64,
    /// `(cumulative evaluations, best objective so far)` across all restarts,
    /// expressed on the original data scale.
    pub trace: Vec<(usize, f64)>,
    pub evals: usize,
    pub restarts: Vec<RestartSummary>,
}

/// Length of the encoding for the given sizes.
pub fn encoded_len(n_v: usize, n_h: usize) -> usize {
    n_v * (n_v + 1) / 2 + n_h * (n_h + 1) / 2 + n_v * n_h + n_v + n_h
}

fn push_factor(out: &mut Vec<f64>, a: &DMatrix<f64>, what: &'static str) -> Result<()> {
    let l = linalg::cholesky(a, what)?.l();
    for i in 0..a.nrows() {
        for j in 0..=i {
            out.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
        }
    }
    Ok(())
}

fn take_factor(x: &[f64], k: usize) -> (DMatrix<f64>, &[f64]) {
    let mut l = DMatrix::zeros(k, k);
    let mut it = x.iter();
    for i in 0..k {
        for j in 0..=i {
            let v = *it.next().expect("length checked");
            l[(i, j)] = if i == j { v.exp() } else { v };
        }
    }
    let a = &l * l.transpose();
    (a, &x[k * (k + 1) / 2..])
}

/// Unconstrained coordinates of `params`: Cholesky factor of `T` (row-major
/// lower triangle, log-diagonal), the same for `Q`, then `W` row-major,
/// `B_v`, `B_h`.
pub fn encode(params: &RtbmParams) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(encoded_len(params.n_v(), params.n_h()));
    push_factor(&mut out, params.t(), "T")?;
    push_factor(&mut out, params.q(), "Q")?;
    let w = params.w();
    for i in 0..params.n_v() {
        for k in 0..params.n_h() {
            out.push(w[(i, k)]);
        }
    }
    out.extend(params.bv().iter());
    out.extend(params.bh().iter());
    Ok(out)
}

/// Inverse of [`encode`]; `T` and `Q` are positive definite for every finite
/// input.
pub fn decode(x: &[f64], n_v: usize, n_h: usize, lattice: Lattice) -> Result<RtbmParams> {
    let expected = encoded_len(n_v, n_h);
    if x.len() != expected {
        return Err(Error::Dimension {
            context: "encoding",
            expected,
            found: x.len(),
        });
    }
    let (t, rest) = take_factor(x, n_v);
    let (q, rest) = take_factor(rest, n_h);
    let w = DMatrix::from_row_slice(n_v, n_h, &rest[..n_v * n_h]);
    let rest = &rest[n_v * n_h..];
    let bv = DVector::from_column_slice(&rest[..n_v]);
    let bh = DVector::from_column_slice(&rest[n_v..]);
    RtbmParams::new(t, q, w, bv, bh, lattice)
}

/// `−Σᵢ log P(vᵢ)`. Any row whose log-density is non-finite or cannot be
/// evaluated makes the result `+∞`.
pub fn negative_log_likelihood(params: &RtbmParams, data: &Dataset) -> Result<f64> {
    nll_with_eps(params, data, DEFAULT_EPS)
}

pub fn nll_with_eps(params: &RtbmParams, data: &Dataset, eps: f64) -> Result<f64> {
    if data.dim() != params.n_v() {
        return Err(Error::Dimension {
            context: "dataset width",
            expected: params.n_v(),
            found: data.dim(),
        });
    }
    if data.is_empty() {
        return Err(Error::OutOfRange {
            what: "dataset length",
            value: "0".into(),
        });
    }
    let model = match Rtbm::with_eps(params.clone(), eps) {
        Ok(m) => m,
        Err(Error::InvalidModel(_)) => return Err(Error::InvalidModel(validate(params))),
        Err(_) => return Ok(f64::INFINITY),
    };
    Ok(nll_of(&model, data))
}

fn nll_of(model: &Rtbm, data: &Dataset) -> f64 {
    match model.log_pdf_batch(data) {
        Ok(values) => {
            let total: f64 = values.iter().sum();
            if total.is_finite() {
                -total
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Search objective: NLL of the decoded machine, or the validity penalty
/// when `Q − WᵀT⁻¹W` has an eigenvalue at or below [`LAMBDA_FLOOR`].
pub fn penalized_objective(
    x: &[f64],
    data: &Dataset,
    n_h: usize,
    lattice: Lattice,
    eps: f64,
) -> f64 {
    let Ok(params) = decode(x, data.dim(), n_h, lattice) else {
        return f64::INFINITY;
    };
    let Some(schur) = params.schur() else {
        return f64::INFINITY;
    };
    let (lambda_min, _) = linalg::eigen_range(&schur);
    if !lambda_min.is_finite() {
        return f64::INFINITY;
    }
    if lambda_min <= LAMBDA_FLOOR {
        return PENALTY_BASE + PENALTY_SLOPE * (LAMBDA_FLOOR - lambda_min);
    }
    match Rtbm::with_eps(params, eps) {
        Ok(model) => nll_of(&model, data),
        Err(_) => f64::INFINITY,
    }
}

/// Per-column location and scale used by the standardization option.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl Standardizer {
    fn new(data: &Dataset) -> Result<Self> {
        let n = data.len() as f64;
        let dim = data.dim();
        let mut mean = DVector::zeros(dim);
        let mut scale = DVector::zeros(dim);
        for j in 0..dim {
            let col = data.column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            if !(var > 0.0 && var.is_finite()) {
                return Err(Error::OutOfRange {
                    what: "column variance",
                    value: var.to_string(),
                });
            }
            mean[j] = m;
            scale[j] = var.sqrt();
        }
        Ok(Self { mean, scale })
    }

    fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let dim = data.dim();
        let values = data
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, x)| (x - self.mean[k % dim]) / self.scale[k % dim])
            .collect();
        Dataset::new(dim, values)
    }

    /// `N · Σ log s_j`: NLL on the original scale minus NLL on the standardized one.
    fn nll_shift(&self, count: usize) -> f64 {
        count as f64 * self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// Parameters on the original scale for a machine fitted to
    /// `x' = D⁻¹(x − μ)`.
    fn unmap(&self, p: &RtbmParams) -> Result<RtbmParams> {
        let dinv = DMatrix::from_diagonal(&self.scale.map(|s| 1.0 / s));
        let t = &dinv * p.t() * &dinv;
        let w = &dinv * p.w();
        let bv = &dinv * p.bv() - &t * &self.mean;
        let bh = p.bh() - w.transpose() * &self.mean;
        RtbmParams::new(t, p.q().clone(), w, bv, bh, p.lattice())
    }
}

fn initial_point(n_v: usize, n_h: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let len = encoded_len(n_v, n_h);
    let init = Normal::new(0.0, INIT_SD).expect("finite sd");
    let offset = Normal::new(0.0, BH_OFFSET_SD).expect("finite sd");
    let mut x: Vec<f64> = (0..len).map(|_| init.sample(rng)).collect();
    for v in &mut x[len - n_h..] {
        *v += offset.sample(rng);
    }
    x
}

/// Fits an RTBM with `config.n_h` hidden units to `data` by running
/// `config.restarts` independent CMA-ES searches and keeping the best valid
/// one.
pub fn fit_density(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.check()?;
    if data.is_empty() {
        return Err(Error::OutOfRange {
            what: "dataset length",
            value: "0".into(),
        });
    }
    let n_v = data.dim();
    let n_h = config.n_h;
    let standardizer = if config.standardize {
        Some(Standardizer::new(data)?)
    } else {
        None
    };
    let work = match &standardizer {
        Some(s) => s.apply(data)?,
        None => data.clone(),
    };
    let shift = standardizer
        .as_ref()
        .map_or(0.0, |s| s.nll_shift(data.len()));

    let mut seeds = ChaCha20Rng::seed_from_u64(config.seed);
    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut summaries = Vec::with_capacity(config.restarts);
    let mut best: Option<(RtbmParams, f64)> = None;
    let mut best_invalid = f64::INFINITY;
    let mut evals = 0usize;
    let mut global_best = f64::INFINITY;

    for _ in 0..config.restarts {
        let x0 = initial_point(n_v, n_h, &mut seeds);
        let cma = CmaesConfig {
            population: config.population,
            sigma0: config.sigma0,
            max_evals: config.max_evals,
            seed: seeds.gen(),
        };
        let objective =
            |x: &[f64]| penalized_objective(x, &work, n_h, config.lattice, config.theta_eps);
        let run = cmaes::minimize(objective, &x0, &cma)?;
        for &(e, f) in &run.trace {
            global_best = global_best.min(f + shift);
            trace.push((evals + e, global_best));
        }
        evals += run.evals;

        let candidate =
            decode(&run.x, n_v, n_h, config.lattice).and_then(|p| match &standardizer {
                Some(s) => s.unmap(&p),
                None => Ok(p),
            });
        let outcome = candidate.ok().and_then(|p| {
            if !validate(&p).valid || run.f >= PENALTY_BASE {
                return None;
            }
            let nll = nll_with_eps(&p, data, config.theta_eps).ok()?;
            nll.is_finite().then_some((p, nll))
        });
        let valid = outcome.is_some();
        let nll = outcome.as_ref().map_or(run.f + shift, |o| o.1);
        summaries.push(RestartSummary {
            nll,
            evals: run.evals,
            termination: run.termination,
            valid,
        });
        match outcome {
            Some((p, nll)) if best.as_ref().map_or(true, |b| nll < b.1) => best = Some((p, nll)),
            Some(_) => {}
            None => best_invalid = best_invalid.min(run.f),
        }
    }

    match best {
        Some((params, nll)) => Ok(FitResult {
            params,
            nll,
            trace,
            evals,
            restarts: summaries,
        }),
        None => Err(Error::AllRestartsInvalid {
            restarts: config.restarts,
            best: best_invalid,
        }),
    }
}
