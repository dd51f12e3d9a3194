//! Analytic and brute-force references: multivariate Student-t densities
//! and their conditionals, the generalized Gaussian integral, trapezoid
//! quadrature, and Student-t sampling for training data.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::density::Rtbm;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::RtbmParams;
use crate::sampling::seeded_rows;

/// Location `μ`, scale matrix `Σ` and degrees of freedom `ν` of a
/// `p`-variate Student-t.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub nu: f64,
}

impl StudentTParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, nu: f64) -> Result<Self> {
        let p = mu.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::Dimension {
                context: "Student-t scale matrix",
                expected: p,
                found: sigma.nrows(),
            });
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::OutOfRange {
                what: "degrees of freedom",
                value: nu.to_string(),
            });
        }
        linalg::cholesky(&sigma, "Σ")?;
        Ok(Self { mu, sigma, nu })
    }

    /// The bivariate reference distribution: `μ = 0`,
    /// `Σ = [[2, −1], [−1, 4]]`, `ν = 6`.
    pub fn reference() -> Self {
        Self::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 4.0]),
            6.0,
        )
        .expect("reference Student-t is valid")
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        student_logpdf(self, x)
    }
}

/// `log f(x)` of the multivariate Student-t.
pub fn student_logpdf(tp: &StudentTParams, x: &[f64]) -> Result<f64> {
    let p = tp.p();
    if x.len() != p {
        return Err(Error::Dimension {
            context: "Student-t point",
            expected: p,
            found: x.len(),
        });
    }
    let chol = linalg::cholesky(&tp.sigma, "Σ")?;
    let diff = DVector::from_column_slice(x) - &tp.mu;
    let maha = diff.dot(&chol.solve(&diff));
    let pf = p as f64;
    let nu = tp.nu;
    Ok(ln_gamma(0.5 * (nu + pf))
        - ln_gamma(0.5 * nu)
        - 0.5 * pf * (nu * PI).ln()
        - 0.5 * linalg::log_det(&chol)
        - 0.5 * (nu + pf) * (maha / nu).ln_1p())
}

/// Conditional of the trailing block given the leading `p1` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTParams {
    pub loc: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub df: f64,
    pub p1: usize,
    pub p2: usize,
}

impl ConditionalTParams {
    pub fn as_student(&self) -> Result<StudentTParams> {
        StudentTParams::new(self.loc.clone(), self.scale.clone(), self.df)
    }

    pub fn log_pdf(&self, x2: &[f64]) -> Result<f64> {
        student_logpdf(&self.as_student()?, x2)
    }
}

/// Conditional distribution of `x₂ | x₁` for `x = (x₁, x₂)`, `x₁` the
/// leading `p1` coordinates:
///
/// ```text
/// x₂ | x₁ ~ t_{p₂}( μ₂ + Σ₂₁Σ₁₁⁻¹(x₁ − μ₁),
///                   (ν + d₁)/(ν + p₁) · (Σ₂₂ − Σ₂₁Σ₁₁⁻¹Σ₁₂),
///                   ν + p₁ ),
/// d₁ = (x₁ − μ₁)ᵀ Σ₁₁⁻¹ (x₁ − μ₁).
/// ```
pub fn student_conditional(
    tp: &StudentTParams,
    p1: usize,
    x1: &[f64],
) -> Result<ConditionalTParams> {
    let p = tp.p();
    if p1 == 0 || p1 >= p {
        return Err(Error::OutOfRange {
            what: "conditioned block size p1",
            value: format!("{p1} (p = {p})"),
        });
    }
    if x1.len() != p1 {
        return Err(Error::Dimension {
            context: "conditioned values",
            expected: p1,
            found: x1.len(),
        });
    }
    let p2 = p - p1;
    let s11 = tp.sigma.view((0, 0), (p1, p1)).into_owned();
    let s21 = tp.sigma.view((p1, 0), (p2, p1)).into_owned();
    let s22 = tp.sigma.view((p1, p1), (p2, p2)).into_owned();
    let chol11 = linalg::cholesky(&s11, "Σ₁₁")?;
    let diff = DVector::from_column_slice(x1) - tp.mu.rows(0, p1);
    let s11inv_diff = chol11.solve(&diff);
    let loc = tp.mu.rows(p1, p2) + &s21 * &s11inv_diff;
    let d1 = diff.dot(&s11inv_diff);
    let schur = &s22 - linalg::quad_form_inv(&chol11, &s21.transpose());
    let factor = (tp.nu + d1) / (tp.nu + p1 as f64);
    let mut scale = schur * factor;
    linalg::symmetrize(&mut scale);
    Ok(ConditionalTParams {
        loc,
        scale,
        df: tp.nu + p1 as f64,
        p1,
        p2,
    })
}

/// Draw `count` Student-t points as `μ + L ξ · sqrt(ν / χ²_ν)` with
/// `Σ = L Lᵀ` and `ξ` standard normal.
pub fn sample_student(tp: &StudentTParams, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::OutOfRange {
            what: "sample count",
            value: "0".into(),
        });
    }
    let chol = linalg::cholesky(&tp.sigma, "Σ")?;
    let l = chol.l();
    let p = tp.p();
    let chi = ChiSquared::new(tp.nu).map_err(|e| Error::OutOfRange {
        what: "degrees of freedom",
        value: e.to_string(),
    })?;
    seeded_rows(count, p, seed, |rng, row| {
        let xi: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let w = (tp.nu / chi.sample(rng)).sqrt();
        for i in 0..p {
            let mut s = 0.0;
            for j in 0..=i {
                s += l[(i, j)] * xi[j];
            }
            row[i] = tp.mu[i] + w * s;
        }
    })
}

/// `log ∫ exp(−½xᵀAx + bᵀx) dx = (n/2) log 2π − ½ log det A + ½ bᵀA⁻¹b`.
pub fn log_gaussian_integral(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension {
            context: "Gaussian integral matrix",
            expected: n,
            found: a.nrows(),
        });
    }
    let chol = linalg::cholesky(a, "A")?;
    Ok(
        0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * linalg::log_det(&chol)
            + 0.5 * b.dot(&chol.solve(b)),
    )
}

/// Multivariate normal log density with mean `mean` and covariance `cov`.
pub fn gaussian_logpdf(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    let chol = linalg::cholesky(cov, "covariance")?;
    let diff = DVector::from_column_slice(x) - mean;
    Ok(-0.5 * x.len() as f64 * (2.0 * PI).ln()
        - 0.5 * linalg::log_det(&chol)
        - 0.5 * diff.dot(&chol.solve(&diff)))
}

/// One axis of a tensor-product grid: `nodes` equispaced points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(lo < hi) || nodes < 2 {
            return Err(Error::OutOfRange {
                what: "grid axis",
                value: format!("{lo}:{hi}:{nodes}"),
            });
        }
        Ok(Self { lo, hi, nodes })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.node(i)).collect()
    }
}

/// Visit every node of a tensor grid in row-major order (last axis fastest).
pub fn for_each_node(axes: &[GridAxis], mut f: impl FnMut(&[usize], &[f64])) {
    let k = axes.len();
    let mut idx = vec![0usize; k];
    let mut x: Vec<f64> = axes.iter().map(|a| a.lo).collect();
    if axes.iter().any(|a| a.nodes == 0) {
        return;
    }
    loop {
        for (j, a) in axes.iter().enumerate() {
            x[j] = a.node(idx[j]);
        }
        f(&idx, &x);
        let mut j = k;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < axes[j].nodes {
                break;
            }
            idx[j] = 0;
        }
    }
}

fn trapezoid_parts(axes: &[GridAxis], mut f: impl FnMut(&[f64]) -> f64) -> (f64, f64) {
    let cell: f64 = axes.iter().map(|a| a.step()).product();
    let mut total = 0.0;
    let mut edge = 0.0;
    for_each_node(axes, |idx, x| {
        let v = f(x);
        let mut w = cell;
        let mut on_edge = false;
        for (j, a) in axes.iter().enumerate() {
            if idx[j] == 0 || idx[j] + 1 == a.nodes {
                w *= 0.5;
                on_edge = true;
            }
        }
        total += w * v;
        if on_edge {
            edge += cell * v.abs();
        }
    });
    (total, edge)
}

/// Tensor-product trapezoid rule.
pub fn trapezoid_nd(axes: &[GridAxis], f: impl FnMut(&[f64]) -> f64) -> f64 {
    trapezoid_parts(axes, f).0
}

/// Relative edge mass above which [`quadrature_marginal`] rejects the grid.
pub const EDGE_MASS_TOL: f64 = 1e-10;
/// Minimum nodes per axis for [`quadrature_marginal`].
pub const MIN_QUADRATURE_NODES: usize = 101;

/// `P(d)` by trapezoid integration of the joint density over the leading
/// `m ≤ 2` coordinates at fixed trailing values `d`.
pub fn quadrature_marginal(
    params: &RtbmParams,
    m: usize,
    d: &[f64],
    grid: &[GridAxis],
) -> Result<f64> {
    let model = Rtbm::new(params.clone())?;
    quadrature_marginal_with(&model, m, d, grid)
}

/// [`quadrature_marginal`] on a prebuilt evaluator.
pub fn quadrature_marginal_with(
    model: &Rtbm,
    m: usize,
    d: &[f64],
    grid: &[GridAxis],
) -> Result<f64> {
    let nv = model.params().n_v();
    if m == 0 || m > 2 || m >= nv {
        return Err(Error::OutOfRange {
            what: "quadrature dimension m",
            value: m.to_string(),
        });
    }
    if grid.len() != m {
        return Err(Error::Dimension {
            context: "quadrature grid axes",
            expected: m,
            found: grid.len(),
        });
    }
    if d.len() != nv - m {
        return Err(Error::Dimension {
            context: "conditioned values",
            expected: nv - m,
            found: d.len(),
        });
    }
    if let Some(a) = grid.iter().find(|a| a.nodes < MIN_QUADRATURE_NODES) {
        return Err(Error::OutOfRange {
            what: "quadrature nodes",
            value: a.nodes.to_string(),
        });
    }
    let mut v = vec![0.0; nv];
    v[m..].copy_from_slice(d);
    let mut failure = None;
    let (total, edge) = trapezoid_parts(grid, |y| {
        v[..m].copy_from_slice(y);
        match model.log_pdf(&v) {
            Ok(l) => l.exp(),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let edge_fraction = edge / total;
    if !(edge_fraction <= EDGE_MASS_TOL) {
        return Err(Error::GridTooSmall { edge_fraction });
    }
    Ok(total)
}
