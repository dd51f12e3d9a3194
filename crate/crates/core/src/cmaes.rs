//! Covariance matrix adaptation evolution strategy, (μ/μ_w, λ) variant with
//! cumulative step-size adaptation and rank-one plus rank-μ covariance
//! updates, using the standard default tuning.
//!
//! Candidates of one generation are evaluated in parallel; everything that
//! depends on the random stream runs sequentially, so results depend only on
//! the seed.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-size floor below which the search is considered collapsed.
pub const SIGMA_FLOOR: f64 = 1e-12;
/// Relative spread of generation-best values over the last `50·n`
/// evaluations below which the search is considered stagnant.
pub const STAGNATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CmaesConfig {
    /// Offspring per generation; `None` selects `4 + ⌊3 ln n⌋`.
    pub population: Option<usize>,
    pub sigma0: f64,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        Self {
            population: None,
            sigma0: 0.3,
            max_evals: 50_000,
            seed: 0,
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxEvals,
    SigmaCollapse,
    Stagnation,
    Exact,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// `(evaluations so far, best value so far)` after every generation.
    pub trace: Vec<(usize, f64)>,
    pub termination: Termination,
}

pub fn default_population(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

/// Minimizes `objective` starting from `x0`. The objective may return `+∞`
/// (or NaN, treated as `+∞`) for infeasible points.
pub fn minimize<F>(objective: F, x0: &[f64], config: &CmaesConfig) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::OutOfRange {
            what: "search dimension",
            value: "0".into(),
        });
    }
    if !(config.sigma0 > 0.0 && config.sigma0.is_finite()) {
        return Err(Error::OutOfRange {
            what: "sigma0",
            value: config.sigma0.to_string(),
        });
    }
    let lambda = config.population.unwrap_or_else(|| default_population(n));
    if lambda < 2 {
        return Err(Error::OutOfRange {
            what: "population",
            value: lambda.to_string(),
        });
    }
    if config.max_evals == 0 {
        return Err(Error::OutOfRange {
            what: "max_evals",
            value: "0".into(),
        });
    }

    let nf = n as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cc = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let cs = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let cmu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let damps = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = config.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);

    let mut best_x = x0.to_vec();
    let mut best_f = f64::INFINITY;
    let mut evals = 0usize;
    let mut trace = Vec::new();
    // Generation-best values over the trailing stagnation window.
    let mut recent: VecDeque<(usize, f64)> = VecDeque::new();
    let stagnation_window = 50 * n;
    let mut generation = 0u64;

    let termination = loop {
        let batch = lambda.min(config.max_evals - evals);
        let z: Vec<DVector<f64>> = (0..batch)
            .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let y: Vec<DVector<f64>> = z
            .iter()
            .map(|zk| &basis * zk.component_mul(&scales))
            .collect();
        let x: Vec<DVector<f64>> = y.iter().map(|yk| &mean + yk * sigma).collect();
        let f: Vec<f64> = x
            .par_iter()
            .map(|xk| {
                let v = objective(xk.as_slice());
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            })
            .collect();
        evals += batch;
        generation += 1;

        let mut order: Vec<usize> = (0..batch).collect();
        order.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
        let top = order[0];
        if f[top] < best_f {
            best_f = f[top];
            best_x = x[top].as_slice().to_vec();
        }
        trace.push((evals, best_f));

        recent.push_back((evals, f[top]));
        while recent
            .front()
            .is_some_and(|&(e, _)| e + stagnation_window <= evals - batch)
        {
            recent.pop_front();
        }
        if best_f == 0.0 {
            break Termination::Exact;
        }
        if evals >= config.max_evals || batch < lambda {
            break Termination::MaxEvals;
        }
        if evals >= stagnation_window && is_flat(&recent) {
            break Termination::Stagnation;
        }

        // Recombination.
        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &k) in weights.iter().zip(&order) {
            y_w.axpy(*w, &y[k], 1.0);
        }
        mean.axpy(sigma, &y_w, 1.0);

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w.
        let inv_sqrt_y = &basis * (basis.transpose() * &y_w).component_div(&scales);
        ps = ps * (1.0 - cs) + inv_sqrt_y * (cs * (2.0 - cs) * mu_eff).sqrt();
        let ps_norm = ps.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * generation as f64)).sqrt() / chi_n
            < 1.4 + 2.0 / (nf + 1.0);
        let hs = if h_sigma { 1.0 } else { 0.0 };
        pc = pc * (1.0 - cc) + &y_w * (hs * (cc * (2.0 - cc) * mu_eff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &k) in weights.iter().zip(&order) {
            rank_mu.ger(*w, &y[k], &y[k], 1.0);
        }
        let delta_h = (1.0 - hs) * cc * (2.0 - cc);
        cov = cov * (1.0 - c1 - cmu + c1 * delta_h) + (&pc * pc.transpose()) * c1 + rank_mu * cmu;
        cov = (&cov + cov.transpose()) * 0.5;

        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();
        if !(sigma.is_finite() && sigma >= SIGMA_FLOOR) {
            break Termination::SigmaCollapse;
        }

        let eig = SymmetricEigen::new(cov.clone());
        let floor = 1e-20 * eig.eigenvalues.max().max(1e-300);
        scales = eig.eigenvalues.map(|l| l.max(floor).sqrt());
        basis = eig.eigenvectors;
    };

    Ok(Minimum {
        x: best_x,
        f: best_f,
        evals,
        trace,
        termination,
    })
}

fn is_flat(recent: &VecDeque<(usize, f64)>) -> bool {
    let (lo, hi) = recent
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, f)| {
            (lo.min(f), hi.max(f))
        });
    lo.is_finite() && hi.is_finite() && hi - lo <= STAGNATION_TOL * lo.abs()
}
