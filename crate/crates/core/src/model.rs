//! RTBM parameter records, validity rules, block decomposition, coordinate
//! permutation and the on-disk model format.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute tolerance on `|A - Aᵀ|` accepted before symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Summation domain of the hidden lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Lattice {
    /// All integer vectors, ℤ^{N_h}.
    #[default]
    #[serde(rename = "FULL")]
    Full,
    /// Non-negative integer vectors, ℕ^{N_h}.
    #[serde(rename = "NONNEG")]
    NonNeg,
}

impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lattice::Full => f.write_str("FULL"),
            Lattice::NonNeg => f.write_str("NONNEG"),
        }
    }
}

impl std::str::FromStr for Lattice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FULL" => Ok(Lattice::Full),
            "NONNEG" => Ok(Lattice::NonNeg),
            other => Err(Error::Parse(format!("unknown lattice `{other}`"))),
        }
    }
}

/// The quintuple `(T, Q, W, B_v, B_h)` defining a Riemann-Theta Boltzmann
/// machine with `n_v` visible and `n_h` hidden units.
///
/// Construction checks shapes and symmetrizes `T` and `Q` when their
/// asymmetry is within [`SYMMETRY_TOL`]. Positive definiteness is checked
/// separately by [`validate`] so that invalid models can still be
/// inspected and reported on.
#[derive(Debug, Clone, PartialEq)]
pub struct RtbmParams {
    t: DMatrix<f64>,
    q: DMatrix<f64>,
    w: DMatrix<f64>,
    bv: DVector<f64>,
    bh: DVector<f64>,
    lattice: Lattice,
}

impl RtbmParams {
    pub fn new(
        t: DMatrix<f64>,
        q: DMatrix<f64>,
        w: DMatrix<f64>,
        bv: DVector<f64>,
        bh: DVector<f64>,
        lattice: Lattice,
    ) -> Result<Self> {
        let n_v = bv.len();
        let n_h = bh.len();
        if n_v == 0 || n_h == 0 {
            return Err(Error::OutOfRange {
                what: "unit count",
                value: format!("n_v={n_v}, n_h={n_h}"),
            });
        }
        check_shape("T", &t, n_v, n_v)?;
        check_shape("Q", &q, n_h, n_h)?;
        check_shape("W", &w, n_v, n_h)?;
        let mut t = t;
        let mut q = q;
        if linalg::asymmetry(&t) <= SYMMETRY_TOL {
            linalg::symmetrize(&mut t);
        }
        if linalg::asymmetry(&q) <= SYMMETRY_TOL {
            linalg::symmetrize(&mut q);
        }
        Ok(Self {
            t,
            q,
            w,
            bv,
            bh,
            lattice,
        })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_rows(
        t: &[f64],
        q: &[f64],
        w: &[f64],
        bv: &[f64],
        bh: &[f64],
        lattice: Lattice,
    ) -> Result<Self> {
        let n_v = bv.len();
        let n_h = bh.len();
        if t.len() != n_v * n_v {
            return Err(dim_err("T", n_v * n_v, t.len()));
        }
        if q.len() != n_h * n_h {
            return Err(dim_err("Q", n_h * n_h, q.len()));
        }
        if w.len() != n_v * n_h {
            return Err(dim_err("W", n_v * n_h, w.len()));
        }
        Self::new(
            DMatrix::from_row_slice(n_v, n_v, t),
            DMatrix::from_row_slice(n_h, n_h, q),
            DMatrix::from_row_slice(n_v, n_h, w),
            DVector::from_column_slice(bv),
            DVector::from_column_slice(bh),
            lattice,
        )
    }

    pub fn n_v(&self) -> usize {
        self.bv.len()
    }

    pub fn n_h(&self) -> usize {
        self.bh.len()
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn bv(&self) -> &DVector<f64> {
        &self.bv
    }

    pub fn bh(&self) -> &DVector<f64> {
        &self.bh
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn with_lattice(mut self, lattice: Lattice) -> Self {
        self.lattice = lattice;
        self
    }

    /// `Q − Wᵀ T⁻¹ W`, or `None` when `T` cannot be factorized.
    pub fn schur(&self) -> Option<DMatrix<f64>> {
        let chol = linalg::cholesky(&self.t, "T").ok()?;
        Some(&self.q - linalg::quad_form_inv(&chol, &self.w))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }
}

fn dim_err(context: &'static str, expected: usize, found: usize) -> Error {
    Error::Dimension {
        context,
        expected,
        found,
    }
}

fn check_shape(name: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(dim_err(name, rows, m.nrows()));
    }
    if m.ncols() != cols {
        return Err(dim_err(name, cols, m.ncols()));
    }
    Ok(())
}

/// Serialized form of [`RtbmParams`]: matrices as row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub nv: usize,
    pub nh: usize,
    #[serde(default)]
    pub lattice: Lattice,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub bv: Vec<f64>,
    pub bh: Vec<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(
    name: &'static str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(dim_err(name, nrows, rows.len()));
    }
    let mut flat = Vec::with_capacity(nrows * ncols);
    for r in rows {
        if r.len() != ncols {
            return Err(dim_err(name, ncols, r.len()));
        }
        flat.extend_from_slice(r);
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

impl From<&RtbmParams> for ModelFile {
    fn from(p: &RtbmParams) -> Self {
        ModelFile {
            nv: p.n_v(),
            nh: p.n_h(),
            lattice: p.lattice,
            t: to_rows(&p.t),
            q: to_rows(&p.q),
            w: to_rows(&p.w),
            bv: p.bv.iter().copied().collect(),
            bh: p.bh.iter().copied().collect(),
        }
    }
}

impl TryFrom<ModelFile> for RtbmParams {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.bv.len() != f.nv {
            return Err(dim_err("bv", f.nv, f.bv.len()));
        }
        if f.bh.len() != f.nh {
            return Err(dim_err("bh", f.nh, f.bh.len()));
        }
        RtbmParams::new(
            from_rows("T", &f.t, f.nv, f.nv)?,
            from_rows("Q", &f.q, f.nh, f.nh)?,
            from_rows("W", &f.w, f.nv, f.nh)?,
            DVector::from_vec(f.bv),
            DVector::from_vec(f.bh),
            f.lattice,
        )
    }
}

/// One failed validity rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    pub message: String,
    pub quantity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            return f.write_str("valid");
        }
        let msgs: Vec<_> = self
            .violations
            .iter()
            .map(|v| format!("[{}] {} ({:e})", v.rule, v.message, v.quantity))
            .collect();
        f.write_str(&msgs.join("; "))
    }
}

pub mod rules {
    pub const NON_FINITE: &str = "non-finite";
    pub const T_ASYMMETRIC: &str = "T-asymmetric";
    pub const Q_ASYMMETRIC: &str = "Q-asymmetric";
    pub const T_NOT_PD: &str = "T-not-pd";
    pub const Q_NOT_PD: &str = "Q-not-pd";
    pub const SCHUR_NOT_PD: &str = "schur-not-pd";
}

/// Check every validity rule and report all failures.
pub fn validate(params: &RtbmParams) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |rule, message: &str, quantity| {
        violations.push(Violation {
            rule,
            message: message.to_string(),
            quantity,
        })
    };

    let finite = params.t.iter().all(|x| x.is_finite())
        && params.q.iter().all(|x| x.is_finite())
        && params.w.iter().all(|x| x.is_finite())
        && params.bv.iter().all(|x| x.is_finite())
        && params.bh.iter().all(|x| x.is_finite());
    if !finite {
        push(
            rules::NON_FINITE,
            "parameters contain non-finite entries",
            f64::NAN,
        );
        return ValidationReport {
            valid: false,
            violations,
        };
    }

    let t_asym = linalg::asymmetry(&params.t);
    if t_asym > SYMMETRY_TOL {
        push(rules::T_ASYMMETRIC, "T not symmetric", t_asym);
    }
    let q_asym = linalg::asymmetry(&params.q);
    if q_asym > SYMMETRY_TOL {
        push(rules::Q_ASYMMETRIC, "Q not symmetric", q_asym);
    }

    let t_pd = linalg::check_pd(&params.t);
    if let Err(lo) = t_pd {
        push(rules::T_NOT_PD, "T not positive definite", lo);
    }
    if let Err(lo) = linalg::check_pd(&params.q) {
        push(rules::Q_NOT_PD, "Q not positive definite", lo);
    }
    if t_pd.is_ok() {
        if let Some(s) = params.schur() {
            if let Err(lo) = linalg::check_pd(&s) {
                push(
                    rules::SCHUR_NOT_PD,
                    "Q - W^T T^-1 W not positive definite",
                    lo,
                );
            }
        }
    }

    ValidationReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// Blocks of `T`, `W` and `B_v` for the split `v = (y, d)` with `y` the
/// leading `m` coordinates and `d` the trailing `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub m: usize,
    pub n: usize,
    /// `m × m` top-left block of `T`.
    pub t0_bar: DMatrix<f64>,
    /// `n × m` lower-left block of `T`.
    pub t1_bar: DMatrix<f64>,
    /// `n × n` bottom-right block of `T`.
    pub t_tilde: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub bv0: DVector<f64>,
    pub bv1: DVector<f64>,
}

impl BlockDecomposition {
    /// Reassemble `(T, W, B_v)`.
    pub fn reassemble(&self) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let (m, n) = (self.m, self.n);
        let nv = m + n;
        let nh = self.w0.ncols();
        let mut t = DMatrix::zeros(nv, nv);
        t.view_mut((0, 0), (m, m)).copy_from(&self.t0_bar);
        t.view_mut((m, 0), (n, m)).copy_from(&self.t1_bar);
        t.view_mut((0, m), (m, n))
            .copy_from(&self.t1_bar.transpose());
        t.view_mut((m, m), (n, n)).copy_from(&self.t_tilde);
        let mut w = DMatrix::zeros(nv, nh);
        w.view_mut((0, 0), (m, nh)).copy_from(&self.w0);
        w.view_mut((m, 0), (n, nh)).copy_from(&self.w1);
        let mut bv = DVector::zeros(nv);
        bv.rows_mut(0, m).copy_from(&self.bv0);
        bv.rows_mut(m, n).copy_from(&self.bv1);
        (t, w, bv)
    }
}

pub fn block_split(params: &RtbmParams, m: usize) -> Result<BlockDecomposition> {
    let nv = params.n_v();
    if m == 0 || m > nv {
        return Err(Error::OutOfRange {
            what: "split point m",
            value: format!("{m} (n_v = {nv})"),
        });
    }
    let n = nv - m;
    let nh = params.n_h();
    let t = &params.t;
    Ok(BlockDecomposition {
        m,
        n,
        t0_bar: t.view((0, 0), (m, m)).into_owned(),
        t1_bar: t.view((m, 0), (n, m)).into_owned(),
        t_tilde: t.view((m, m), (n, n)).into_owned(),
        w0: params.w.view((0, 0), (m, nh)).into_owned(),
        w1: params.w.view((m, 0), (n, nh)).into_owned(),
        bv0: params.bv.rows(0, m).into_owned(),
        bv1: params.bv.rows(m, n).into_owned(),
    })
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidPermutation(n));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidPermutation(n));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Reorder visible coordinates: coordinate `i` of the returned model is
/// coordinate `perm[i]` of `params`. With `v'_i = v_{perm[i]}` the two
/// densities agree pointwise.
pub fn permute(params: &RtbmParams, perm: &[usize]) -> Result<RtbmParams> {
    let nv = params.n_v();
    check_permutation(perm, nv)?;
    let nh = params.n_h();
    let t = DMatrix::from_fn(nv, nv, |i, j| params.t[(perm[i], perm[j])]);
    let w = DMatrix::from_fn(nv, nh, |i, j| params.w[(perm[i], j)]);
    let bv = DVector::from_fn(nv, |i, _| params.bv[perm[i]]);
    Ok(RtbmParams {
        t,
        q: params.q.clone(),
        w,
        bv,
        bh: params.bh.clone(),
        lattice: params.lattice,
    })
}

/// Apply a permutation to a point: `out[i] = v[perm[i]]`.
pub fn permute_point(v: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&p| v[p]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fitted_student_fixture_is_valid() {
        let report = validate(&fixtures::fitted_student_t());
        assert!(report.valid, "{report}");
    }

    #[test]
    fn negative_t_is_rejected() {
        let p =
            RtbmParams::from_rows(&[-1.0], &[1.0], &[0.0], &[0.0], &[0.0], Lattice::Full).unwrap();
        let report = validate(&p);
        assert!(!report.valid);
        assert!(report.has(rules::T_NOT_PD));
        assert_eq!(
            report.violations[0].message,
            "T not positive definite".to_string()
        );
    }

    #[test]
    fn printed_mixture_2d_has_indefinite_q() {
        let report = validate(&fixtures::mixture_2d_as_printed());
        assert!(!report.valid);
        assert!(report.has(rules::Q_NOT_PD));
        // the sign-corrected variant still fails the Schur rule
        let report = validate(&fixtures::mixture_2d_sign_corrected());
        assert!(!report.valid);
        assert!(!report.has(rules::Q_NOT_PD));
        assert!(report.has(rules::SCHUR_NOT_PD));
        assert!(validate(&fixtures::mixture_2d()).valid);
        assert!(validate(&fixtures::mixture_3d()).valid);
    }

    #[test]
    fn asymmetry_is_reported() {
        let p = RtbmParams::from_rows(
            &[1.0, 0.5, 0.0, 1.0],
            &[1.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[0.0],
            Lattice::Full,
        )
        .unwrap();
        let report = validate(&p);
        assert!(report.has(rules::T_ASYMMETRIC));
    }

    #[test]
    fn tiny_asymmetry_is_symmetrized() {
        let p = RtbmParams::from_rows(
            &[1.0, 0.5, 0.5 + 1e-12, 1.0],
            &[1.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[0.0],
            Lattice::Full,
        )
        .unwrap();
        assert_eq!(p.t()[(0, 1)], p.t()[(1, 0)]);
        assert!(validate(&p).valid);
    }

    #[test]
    fn shape_errors() {
        let err = RtbmParams::from_rows(&[1.0, 0.0], &[1.0], &[0.0], &[0.0], &[0.0], Lattice::Full);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn block_split_student_fixture() {
        let b = block_split(&fixtures::fitted_student_t(), 1).unwrap();
        assert_eq!(b.t0_bar[(0, 0)], 0.56);
        assert_eq!(b.t1_bar[(0, 0)], 0.18);
        assert_eq!(b.t_tilde[(0, 0)], 0.30);
        assert_eq!(b.w0.as_slice(), &[-1.11, 1.02]);
        assert_eq!(b.w1.as_slice(), &[-0.66, 0.60]);
        assert_eq!(b.bv0[0], 0.0);
        assert_eq!(b.bv1[0], 0.0);
    }

    #[test]
    fn block_split_three_dim_fixture() {
        let p = fixtures::mixture_3d();
        let b = block_split(&p, 2).unwrap();
        assert_eq!(b.t0_bar, p.t().view((0, 0), (2, 2)).into_owned());
        assert_eq!(b.t1_bar.as_slice(), &[-6.76, -2.56]);
        assert_eq!(b.w1.as_slice(), &[2.09]);
    }

    #[test]
    fn block_split_degenerate_and_out_of_range() {
        let p = fixtures::mixture_3d();
        let b = block_split(&p, 3).unwrap();
        assert_eq!(&b.t0_bar, p.t());
        assert_eq!(&b.w0, p.w());
        assert_eq!(&b.bv0, p.bv());
        assert_eq!(b.n, 0);
        assert_eq!(b.t_tilde.len(), 0);
        assert!(block_split(&p, 0).is_err());
        assert!(block_split(&p, 4).is_err());
    }

    #[test]
    fn block_round_trip_is_exact() {
        for p in fixtures::valid_fixtures() {
            for m in 1..=p.n_v() {
                let (t, w, bv) = block_split(&p, m).unwrap().reassemble();
                assert_eq!(&t, p.t());
                assert_eq!(&w, p.w());
                assert_eq!(&bv, p.bv());
            }
        }
    }

    #[test]
    fn permute_swap_and_identity() {
        let p = fixtures::fitted_student_t();
        assert_eq!(permute(&p, &[0, 1]).unwrap(), p);
        let s = permute(&p, &[1, 0]).unwrap();
        assert_eq!(s.t().as_slice(), &[0.30, 0.18, 0.18, 0.56]);
        assert_eq!(
            s.w().row(0).iter().copied().collect::<Vec<_>>(),
            vec![-0.66, 0.60]
        );
        assert_eq!(
            s.w().row(1).iter().copied().collect::<Vec<_>>(),
            vec![-1.11, 1.02]
        );
        assert_eq!(s.q(), p.q());
        assert_eq!(s.bh(), p.bh());
    }

    #[test]
    fn permute_rejects_non_bijection() {
        let p = fixtures::mixture_3d();
        assert!(matches!(
            permute(&p, &[0, 0, 1]),
            Err(Error::InvalidPermutation(3))
        ));
        assert!(permute(&p, &[0, 1]).is_err());
        assert!(permute(&p, &[0, 1, 3]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        for p in fixtures::valid_fixtures() {
            let back = RtbmParams::from_json(&p.to_json()).unwrap();
            assert_eq!(back, p);
        }
        let odd = RtbmParams::from_rows(
            &[std::f64::consts::PI],
            &[1.0 / 3.0],
            &[-1e-300],
            &[0.1 + 0.2],
            &[123456.789e10],
            Lattice::NonNeg,
        )
        .unwrap();
        let back = RtbmParams::from_json(&odd.to_json()).unwrap();
        assert_eq!(back, odd);
        assert_eq!(back.lattice(), Lattice::NonNeg);
    }

    #[test]
    fn json_field_names() {
        let text = fixtures::fitted_student_t().to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["nv", "nh", "lattice", "T", "Q", "W", "bv", "bh"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["lattice"], "FULL");
        assert_eq!(v["T"][0][1], 0.18);
    }
}
