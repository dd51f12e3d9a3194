//! Visible-sector densities, analytic marginals and conditional machines.
//!
//! For `v ∈ ℝ^{N_v}`,
//!
//! ```text
//! log P(v) = ½ log det T − (N_v/2) log 2π − ½ (v + T⁻¹B_v)ᵀ T (v + T⁻¹B_v)
//!          + log θ̃(B_h + Wᵀv | Q) − log θ̃(B_h − WᵀT⁻¹B_v | Q − WᵀT⁻¹W).
//! ```
//!
//! Splitting `v = (y, d)` into a leading free block of size `m` and a
//! trailing conditioned block, the marginal `P(d)` integrates out `y` with
//! the generalized Gaussian integral, and `P(y | d)` is again an RTBM with
//!
//! ```text
//! T → T̄₀,   W → W₀,   B_v → B_{v,0} + T̄₁ᵀ d,   B_h → B_h + W₁ᵀ d.
//! ```

use nalgebra::{Cholesky, DVector, Dyn};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, block_split, validate, BlockDecomposition, RtbmParams};
use crate::theta::{ThetaSum, DEFAULT_EPS};

const LN_2PI: f64 = 1.8378770664093453;

/// An RTBM with its factorizations and normalizing theta precomputed.
#[derive(Debug, Clone)]
pub struct Rtbm {
    params: RtbmParams,
    t_chol: Cholesky<f64, Dyn>,
    numerator: ThetaSum,
    /// `log θ̃(B_h − WᵀT⁻¹B_v | Q − WᵀT⁻¹W)`.
    log_norm: f64,
    /// `½ log det T − (N_v/2) log 2π − ½ B_vᵀT⁻¹B_v − log_norm`.
    offset: f64,
    eps: f64,
}

impl Rtbm {
    pub fn new(params: RtbmParams) -> Result<Self> {
        Self::with_eps(params, DEFAULT_EPS)
    }

    /// Build the evaluator. Fails with [`Error::InvalidModel`] when the
    /// parameters violate any validity rule.
    pub fn with_eps(params: RtbmParams, eps: f64) -> Result<Self> {
        let report = validate(&params);
        if !report.valid {
            return Err(Error::InvalidModel(report));
        }
        let t_chol = linalg::cholesky(params.t(), "T")?;
        let log_det_t = linalg::log_det(&t_chol);
        let tinv_bv = linalg::solve(&t_chol, params.bv());
        let bv_tinv_bv = params.bv().dot(&tinv_bv);
        let schur = params.q() - linalg::quad_form_inv(&t_chol, params.w());
        let z = params.bh() - params.w().transpose() * &tinv_bv;
        let log_norm = ThetaSum::new(&schur, params.lattice(), eps)?.log_theta(z.as_slice())?;
        let numerator = ThetaSum::new(params.q(), params.lattice(), eps)?;
        let nv = params.n_v() as f64;
        let offset = 0.5 * log_det_t - 0.5 * nv * LN_2PI - 0.5 * bv_tinv_bv - log_norm;
        Ok(Self {
            params,
            t_chol,
            numerator,
            log_norm,
            offset,
            eps,
        })
    }

    pub fn params(&self) -> &RtbmParams {
        &self.params
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub(crate) fn t_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.t_chol
    }

    /// `log P(v)`.
    pub fn log_pdf(&self, v: &[f64]) -> Result<f64> {
        let p = &self.params;
        let nv = p.n_v();
        if v.len() != nv {
            return Err(Error::Dimension {
                context: "density point",
                expected: nv,
                found: v.len(),
            });
        }
        let t = p.t();
        let bv = p.bv();
        let mut quad = 0.0;
        for i in 0..nv {
            let mut row = 0.0;
            for j in 0..nv {
                row += t[(i, j)] * v[j];
            }
            quad += v[i] * (row + 2.0 * bv[i]);
        }
        let w = p.w();
        let z: Vec<f64> = (0..p.n_h())
            .map(|k| p.bh()[k] + (0..nv).map(|i| w[(i, k)] * v[i]).sum::<f64>())
            .collect();
        Ok(self.offset - 0.5 * quad + self.numerator.log_theta(&z)?)
    }

    /// `log P(v)` for every row, evaluated in parallel; order matches rows.
    pub fn log_pdf_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.dim() != self.params.n_v() {
            return Err(Error::Dimension {
                context: "dataset width",
                expected: self.params.n_v(),
                found: data.dim(),
            });
        }
        let rows: Vec<&[f64]> = data.rows().collect();
        rows.par_iter().map(|r| self.log_pdf(r)).collect()
    }

    /// Marginal of the trailing `N_v − m` coordinates.
    pub fn marginal(&self, m: usize) -> Result<Marginal> {
        Marginal::new(self, m)
    }

    /// `log P(d)` where `d` are the trailing `N_v − m` coordinates.
    pub fn log_marginal(&self, m: usize, d: &[f64]) -> Result<f64> {
        self.marginal(m)?.log_density(d)
    }

    /// Parameters of the conditional density of the leading `m` coordinates
    /// given the trailing ones equal `d`.
    pub fn condition(&self, m: usize, d: &[f64]) -> Result<RtbmParams> {
        condition_params(&self.params, m, d)
    }
}

/// Precomputed marginal over the leading `m` coordinates.
#[derive(Debug, Clone)]
pub struct Marginal {
    blocks: BlockDecomposition,
    t0_chol: Cholesky<f64, Dyn>,
    theta: ThetaSum,
    bh: DVector<f64>,
    /// constant part of the log marginal
    offset: f64,
}

impl Marginal {
    fn new(model: &Rtbm, m: usize) -> Result<Self> {
        let p = &model.params;
        let nv = p.n_v();
        if m == 0 || m >= nv {
            return Err(Error::OutOfRange {
                what: "marginal split m (need 0 < m < n_v)",
                value: format!("{m} (n_v = {nv})"),
            });
        }
        let blocks = block_split(p, m)?;
        let t0_chol = linalg::cholesky(&blocks.t0_bar, "T̄₀")?;
        let omega = p.q() - linalg::quad_form_inv(&t0_chol, &blocks.w0);
        let theta = ThetaSum::new(&omega, p.lattice(), model.eps).map_err(|e| match e {
            Error::NotPositiveDefinite { min_eigenvalue, .. } => Error::NotPositiveDefinite {
                what: "Q - W0^T T0^-1 W0",
                min_eigenvalue,
            },
            other => other,
        })?;
        let log_det_t = linalg::log_det(&model.t_chol);
        let log_det_t0 = linalg::log_det(&t0_chol);
        let tinv_bv = linalg::solve(&model.t_chol, p.bv());
        let bv_tinv_bv = p.bv().dot(&tinv_bv);
        let offset = 0.5 * log_det_t - 0.5 * nv as f64 * LN_2PI + 0.5 * m as f64 * LN_2PI
            - 0.5 * log_det_t0
            - 0.5 * bv_tinv_bv
            - model.log_norm;
        Ok(Self {
            blocks,
            t0_chol,
            theta,
            bh: p.bh().clone(),
            offset,
        })
    }

    pub fn m(&self) -> usize {
        self.blocks.m
    }

    pub fn log_density(&self, d: &[f64]) -> Result<f64> {
        let b = &self.blocks;
        if d.len() != b.n {
            return Err(Error::Dimension {
                context: "conditioned values",
                expected: b.n,
                found: d.len(),
            });
        }
        let dv = DVector::from_column_slice(d);
        let u = &b.bv0 + b.t1_bar.transpose() * &dv;
        let t0inv_u = linalg::solve(&self.t0_chol, &u);
        let z = &self.bh + b.w1.transpose() * &dv - b.w0.transpose() * &t0inv_u;
        let log_theta = self.theta.log_theta(z.as_slice())?;
        Ok(
            self.offset - 0.5 * dv.dot(&(&b.t_tilde * &dv)) - b.bv1.dot(&dv)
                + 0.5 * u.dot(&t0inv_u)
                + log_theta,
        )
    }
}

fn condition_params(params: &RtbmParams, m: usize, d: &[f64]) -> Result<RtbmParams> {
    let nv = params.n_v();
    if m == 0 || m >= nv {
        return Err(Error::OutOfRange {
            what: "conditional split m (need 0 < m < n_v)",
            value: format!("{m} (n_v = {nv})"),
        });
    }
    if d.len() != nv - m {
        return Err(Error::Dimension {
            context: "conditioned values",
            expected: nv - m,
            found: d.len(),
        });
    }
    let b = block_split(params, m)?;
    let dv = DVector::from_column_slice(d);
    let child = RtbmParams::new(
        b.t0_bar.clone(),
        params.q().clone(),
        b.w0.clone(),
        &b.bv0 + b.t1_bar.transpose() * &dv,
        params.bh() + b.w1.transpose() * &dv,
        params.lattice(),
    )?;
    let report = validate(&child);
    if !report.valid {
        return Err(Error::Internal(format!(
            "conditional machine failed validation: {report}"
        )));
    }
    Ok(child)
}

/// `log P(v)` with the default theta tolerance.
pub fn log_pdf(params: &RtbmParams, v: &[f64]) -> Result<f64> {
    Rtbm::new(params.clone())?.log_pdf(v)
}

/// `log P(d)` for the trailing `N_v − m` coordinates `d`.
pub fn log_marginal(params: &RtbmParams, m: usize, d: &[f64]) -> Result<f64> {
    Rtbm::new(params.clone())?.log_marginal(m, d)
}

/// Child machine for `P(y | d)`, `y` the leading `m` coordinates.
pub fn condition(params: &RtbmParams, m: usize, d: &[f64]) -> Result<RtbmParams> {
    let report = validate(params);
    if !report.valid {
        return Err(Error::InvalidModel(report));
    }
    condition_params(params, m, d)
}

/// Condition on arbitrary coordinates. Returns the child machine and the
/// original indices of its coordinates, which keep their relative order.
pub fn condition_on(
    params: &RtbmParams,
    indices: &[usize],
    values: &[f64],
) -> Result<(RtbmParams, Vec<usize>)> {
    let nv = params.n_v();
    if indices.len() != values.len() {
        return Err(Error::Dimension {
            context: "conditioned values",
            expected: indices.len(),
            found: values.len(),
        });
    }
    let mut seen = vec![false; nv];
    for &i in indices {
        if i >= nv || seen[i] {
            return Err(Error::OutOfRange {
                what: "conditioned index",
                value: i.to_string(),
            });
        }
        seen[i] = true;
    }
    let free: Vec<usize> = (0..nv).filter(|i| !seen[*i]).collect();
    let perm: Vec<usize> = free.iter().chain(indices.iter()).copied().collect();
    let permuted = model::permute(params, &perm)?;
    let child = condition(&permuted, free.len(), values)?;
    Ok((child, free))
}

/// Multivariate normal log density for covariance given by its precision
/// factorization. Used by the Gaussian reduction checks.
#[cfg(test)]
fn gaussian_log_density_precision(
    precision: &nalgebra::DMatrix<f64>,
    mean: &DVector<f64>,
    x: &[f64],
) -> Result<f64> {
    let chol = linalg::cholesky(precision, "precision")?;
    let diff = DVector::from_column_slice(x) - mean;
    let k = x.len() as f64;
    Ok(0.5 * linalg::log_det(&chol) - 0.5 * k * LN_2PI - 0.5 * diff.dot(&(precision * &diff)))
}
