//! Real-argument Riemann-Theta sums
//!
//! ```text
//! θ̃(z | Ω) = Σ_{n ∈ L} exp(−½ nᵀΩn + nᵀz)
//! ```
//!
//! over the lattice `L = ℤ^d` or `ℕ^d`, evaluated in log space.
//!
//! The summand is a displaced Gaussian on the lattice. Let `n*` maximise the
//! exponent `f(n) = −½nᵀΩn + nᵀz` over the continuous domain (`Ω⁻¹z` for the
//! full lattice, the non-negative quadratic-program solution otherwise) and
//! `M = f(n*)`. Then for every lattice point
//!
//! ```text
//! f(n) ≤ M − ½ ‖U(n − n*)‖²,     Ω = UᵀU,
//! ```
//!
//! so only lattice points inside an ellipsoid around `n*` matter. Those are
//! enumerated exactly (Fincke–Pohst order), and the ellipsoid radius is
//! chosen from a certified Gaussian tail bound so that the omitted mass is
//! below `eps` times the returned sum.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Lattice;

pub const DEFAULT_EPS: f64 = 1e-12;
/// Largest lattice extent (per coordinate, around the centre) that the
/// truncated sum may require before it fails.
pub const DEFAULT_RADIUS_CAP: u32 = 64;
/// Upper limit on `d · (2r + 1)^d` for [`log_theta_reference`].
pub const REFERENCE_POINT_CAP: f64 = 1e8;

/// Arguments of a single theta evaluation.
#[derive(Debug, Clone)]
pub struct ThetaQuery {
    pub z: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub lattice: Lattice,
    pub eps: f64,
}

impl ThetaQuery {
    pub fn new(z: DVector<f64>, omega: DMatrix<f64>, lattice: Lattice) -> Self {
        Self {
            z,
            omega,
            lattice,
            eps: DEFAULT_EPS,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

/// `log θ̃(z | Ω)` with certified truncation.
pub fn log_theta(q: &ThetaQuery) -> Result<f64> {
    ThetaSum::new(&q.omega, q.lattice, q.eps)?.log_theta(q.z.as_slice())
}

/// Number of gap buckets in the precomputed radius table.
const RADIUS_TABLE: usize = 32;
/// Radial step of the tail-bound shells.
const TAIL_STEP: f64 = 0.5;

/// A theta sum with fixed `Ω`, lattice and tolerance, reusable across many
/// arguments `z`.
#[derive(Debug, Clone)]
pub struct ThetaSum {
    omega: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Row-major upper factor `U` with `Ω = UᵀU`.
    upper: Vec<f64>,
    dim: usize,
    lattice: Lattice,
    eps: f64,
    radius_cap: u32,
    /// `sqrt((Ω⁻¹)_ii)`: lattice extent per unit of ellipsoid radius.
    extent: Vec<f64>,
    /// Largest possible gap `M − f(round(n*))`.
    max_gap: f64,
    /// Ellipsoid radius for gap bucket `k` (gap ≤ (k+1)/RADIUS_TABLE · max_gap).
    radius_table: Vec<f64>,
    log_det_u: f64,
    rho: f64,
}

/// Per-argument enumeration data.
struct Center {
    /// Continuous maximiser `n*`.
    point: Vec<f64>,
    /// `∇f(n*)`, zero for the full lattice.
    grad: Vec<f64>,
    /// `M = f(n*)`.
    peak: f64,
}

impl ThetaSum {
    pub fn new(omega: &DMatrix<f64>, lattice: Lattice, eps: f64) -> Result<Self> {
        Self::with_radius_cap(omega, lattice, eps, DEFAULT_RADIUS_CAP)
    }

    pub fn with_radius_cap(
        omega: &DMatrix<f64>,
        lattice: Lattice,
        eps: f64,
        radius_cap: u32,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1e-3) {
            return Err(Error::OutOfRange {
                what: "theta tolerance",
                value: eps.to_string(),
            });
        }
        let dim = omega.nrows();
        if dim == 0 || omega.ncols() != dim {
            return Err(Error::Dimension {
                context: "theta Ω",
                expected: dim.max(1),
                found: omega.ncols(),
            });
        }
        let chol = linalg::cholesky(omega, "Ω")?;
        let l = chol.l();
        let mut upper = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                upper[i * dim + j] = l[(j, i)];
            }
        }
        let log_det_u = 0.5 * linalg::log_det(&chol);
        let inv = chol.inverse();
        let extent = (0..dim).map(|i| inv[(i, i)].sqrt()).collect();
        let abs_sum: f64 = omega.iter().map(|x| x.abs()).sum();
        let rho = 0.5 * abs_sum.sqrt();
        let max_gap = 0.5 * rho * rho;

        let mut sum = Self {
            omega: omega.clone(),
            chol,
            upper,
            dim,
            lattice,
            eps,
            radius_cap,
            extent,
            max_gap,
            radius_table: Vec::new(),
            log_det_u,
            rho,
        };
        sum.radius_table = (0..RADIUS_TABLE)
            .map(|k| sum.radius_for_gap((k + 1) as f64 / RADIUS_TABLE as f64 * max_gap))
            .collect();
        Ok(sum)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// `log` of the certified upper bound on the omitted mass outside radius
    /// `r`, relative to `exp(M)`.
    fn log_tail_bound(&self, r: f64) -> f64 {
        let d = self.dim as f64;
        let log_ball = 0.5 * d * std::f64::consts::PI.ln() - ln_gamma(0.5 * d + 1.0);
        let mut terms = Vec::new();
        let mut k = 0usize;
        loop {
            let rk = r + k as f64 * TAIL_STEP;
            let t =
                log_ball + d * (rk + TAIL_STEP + self.rho).ln() - self.log_det_u - 0.5 * rk * rk;
            terms.push(t);
            // the shell terms decay like exp(−½r²) once past the polynomial peak
            if rk > d.sqrt() + self.rho && t < terms[0] - 60.0 {
                break;
            }
            k += 1;
        }
        linalg::log_sum_exp(&terms)
    }

    /// Smallest ellipsoid radius whose tail bound is below `eps · exp(−gap)`.
    fn radius_for_gap(&self, gap: f64) -> f64 {
        let target = self.eps.ln() - gap;
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.log_tail_bound(hi) > target {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.log_tail_bound(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    fn radius(&self, gap: f64) -> f64 {
        if self.max_gap <= 0.0 || gap <= 0.0 {
            return self.radius_table[0];
        }
        let k = ((gap / self.max_gap) * RADIUS_TABLE as f64).ceil() as usize;
        if k == 0 {
            self.radius_table[0]
        } else if k <= RADIUS_TABLE {
            self.radius_table[k - 1]
        } else {
            self.radius_for_gap(gap)
        }
    }

    fn exponent(&self, n: &[f64], z: &[f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.omega[(i, j)] * n[j];
            }
            quad += n[i] * row;
            lin += n[i] * z[i];
        }
        -0.5 * quad + lin
    }

    fn center(&self, z: &[f64]) -> Center {
        let d = self.dim;
        let zv = DVector::from_column_slice(z);
        let point: Vec<f64> = match self.lattice {
            Lattice::Full => self.chol.solve(&zv).iter().copied().collect(),
            Lattice::NonNeg => self.nonneg_maximizer(z),
        };
        let mut grad = vec![0.0; d];
        if self.lattice == Lattice::NonNeg {
            for i in 0..d {
                let mut row = 0.0;
                for j in 0..d {
                    row += self.omega[(i, j)] * point[j];
                }
                grad[i] = z[i] - row;
            }
        }
        let peak = match self.lattice {
            Lattice::Full => 0.5 * zv.dot(&DVector::from_column_slice(&point)),
            Lattice::NonNeg => self.exponent(&point, z),
        };
        Center { point, grad, peak }
    }

    /// Maximise `−½xᵀΩx + zᵀx` over `x ≥ 0`: projected coordinate ascent
    /// followed by an exact solve on the identified free set.
    fn nonneg_maximizer(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let om = &self.omega;
        let mut x = vec![0.0; d];
        for _ in 0..10_000 {
            let mut delta = 0.0f64;
            for i in 0..d {
                let mut r = z[i];
                for j in 0..d {
                    if j != i {
                        r -= om[(i, j)] * x[j];
                    }
                }
                let xi = (r / om[(i, i)]).max(0.0);
                delta = delta.max((xi - x[i]).abs());
                x[i] = xi;
            }
            if delta < 1e-12 {
                break;
            }
        }
        let free: Vec<usize> = (0..d).filter(|&i| x[i] > 0.0).collect();
        if free.is_empty() {
            return x;
        }
        let k = free.len();
        let sub = DMatrix::from_fn(k, k, |a, b| om[(free[a], free[b])]);
        let rhs = DVector::from_fn(k, |a, _| z[free[a]]);
        if let Some(c) = Cholesky::new(sub) {
            let sol = c.solve(&rhs);
            if sol.iter().all(|&v| v > 0.0) {
                let mut exact = vec![0.0; d];
                for (a, &i) in free.iter().enumerate() {
                    exact[i] = sol[a];
                }
                return exact;
            }
        }
        x
    }

    /// Visit every lattice point with `‖U(n − n*)‖ ≤ r`, passing the point and
    /// its exponent relative to `M`.
    fn enumerate(&self, c: &Center, r: f64, visit: &mut dyn FnMut(&[i64], f64)) -> Result<()> {
        let worst = self.extent.iter().map(|e| r * e).fold(0.0f64, f64::max);
        if worst > self.radius_cap as f64 {
            return Err(Error::TruncationCap {
                required: worst,
                cap: self.radius_cap,
            });
        }
        let mut x = vec![0i64; self.dim];
        self.descend(self.dim, 0.0, r * r, c, &mut x, visit);
        Ok(())
    }

    fn descend(
        &self,
        level: usize,
        partial: f64,
        r2: f64,
        c: &Center,
        x: &mut [i64],
        visit: &mut dyn FnMut(&[i64], f64),
    ) {
        if level == 0 {
            let mut lin = 0.0;
            for i in 0..self.dim {
                lin += c.grad[i] * (x[i] as f64 - c.point[i]);
            }
            visit(x, lin - 0.5 * partial);
            return;
        }
        let i = level - 1;
        let d = self.dim;
        let uii = self.upper[i * d + i];
        let mut s = 0.0;
        for j in (i + 1)..d {
            s += self.upper[i * d + j] * (x[j] as f64 - c.point[j]);
        }
        let mid = c.point[i] - s / uii;
        let rem = (r2 - partial).max(0.0);
        let half = rem.sqrt() / uii;
        let mut lo = (mid - half).ceil() as i64;
        let hi = (mid + half).floor() as i64;
        if self.lattice == Lattice::NonNeg {
            lo = lo.max(0);
        }
        for xi in lo..=hi {
            let t = uii * (xi as f64 - mid);
            let p = partial + t * t;
            if p > r2 {
                continue;
            }
            x[i] = xi;
            self.descend(level - 1, p, r2, c, x, visit);
        }
        x[i] = 0;
    }

    fn prepare(&self, z: &[f64]) -> Result<(Center, f64)> {
        if z.len() != self.dim {
            return Err(Error::Dimension {
                context: "theta argument",
                expected: self.dim,
                found: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange {
                what: "theta argument",
                value: format!("{z:?}"),
            });
        }
        let c = self.center(z);
        let rounded: Vec<f64> = c
            .point
            .iter()
            .map(|&p| match self.lattice {
                Lattice::Full => p.round(),
                Lattice::NonNeg => p.round().max(0.0),
            })
            .collect();
        let gap = (c.peak - self.exponent(&rounded, z)).max(0.0);
        let r = self.radius(gap);
        Ok((c, r))
    }

    /// `log θ̃(z | Ω)`.
    pub fn log_theta(&self, z: &[f64]) -> Result<f64> {
        let (c, r) = self.prepare(z)?;
        let mut anchor = f64::NEG_INFINITY;
        let mut acc = 0.0;
        self.enumerate(&c, r, &mut |_, e| {
            if e > anchor {
                acc = acc * (anchor - e).exp() + 1.0;
                anchor = e;
            } else {
                acc += (e - anchor).exp();
            }
        })?;
        if !anchor.is_finite() {
            return Err(Error::Internal("empty theta enumeration".into()));
        }
        Ok(c.peak + anchor + acc.ln())
    }

    /// Every lattice point kept by the truncation together with its
    /// absolute log-term `−½nᵀΩn + nᵀz`, in enumeration order.
    pub fn terms(&self, z: &[f64]) -> Result<Vec<(Vec<i64>, f64)>> {
        let (c, r) = self.prepare(z)?;
        let mut out = Vec::new();
        self.enumerate(&c, r, &mut |n, e| out.push((n.to_vec(), c.peak + e)))?;
        Ok(out)
    }
}

/// Exhaustive summation over all lattice points with max-norm at most
/// `radius` (`0..=radius` per coordinate for the non-negative lattice).
/// Independent of [`ThetaSum`]; intended as a test oracle.
pub fn log_theta_reference(
    z: &[f64],
    omega: &DMatrix<f64>,
    lattice: Lattice,
    radius: u32,
) -> Result<f64> {
    let d = z.len();
    if omega.nrows() != d || omega.ncols() != d {
        return Err(Error::Dimension {
            context: "reference theta Ω",
            expected: d,
            found: omega.nrows(),
        });
    }
    let side = match lattice {
        Lattice::Full => 2 * radius as i64 + 1,
        Lattice::NonNeg => radius as i64 + 1,
    };
    let points = d as f64 * (2.0 * radius as f64 + 1.0).powi(d as i32);
    if points > REFERENCE_POINT_CAP {
        return Err(Error::EnumerationCap { points });
    }
    let start = match lattice {
        Lattice::Full => -(radius as i64),
        Lattice::NonNeg => 0,
    };
    let exponent = |n: &[i64]| {
        let mut s = 0.0;
        for i in 0..d {
            let ni = n[i] as f64;
            s += ni * z[i];
            for j in 0..d {
                s -= 0.5 * ni * omega[(i, j)] * n[j] as f64;
            }
        }
        s
    };
    let for_each = |f: &mut dyn FnMut(f64)| {
        let mut n = vec![start; d];
        loop {
            f(exponent(&n));
            let mut k = 0;
            loop {
                if k == d {
                    return;
                }
                n[k] += 1;
                if n[k] < start + side {
                    break;
                }
                n[k] = start;
                k += 1;
            }
        }
    };
    let mut max = f64::NEG_INFINITY;
    for_each(&mut |e| max = max.max(e));
    let mut sum = 0.0;
    for_each(&mut |e| sum += (e - max).exp());
    Ok(max + sum.ln())
}
