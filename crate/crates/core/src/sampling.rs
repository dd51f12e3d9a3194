//! Exact sampling through the Gaussian-mixture form of an RTBM, histograms,
//! and empirical conditionals.
//!
//! Completing the square in `v` shows that the visible density is a mixture
//! over hidden lattice states `n`:
//!
//! ```text
//! P(v) = Σ_n p(n) · N(v; T⁻¹(Wn − B_v), T⁻¹),
//! p(n) ∝ exp(−½ nᵀ(Q − WᵀT⁻¹W)n + nᵀ(B_h − WᵀT⁻¹B_v)).
//! ```
//!
//! Sampling draws `n` by inverse CDF over the truncated, enumerated `p(n)`
//! and then the Gaussian component.
//!
//! Random streams: every sampler uses ChaCha20 seeded with
//! `ChaCha20Rng::seed_from_u64(seed)`; rows are produced in chunks of
//! [`CHUNK_ROWS`] and chunk `k` uses stream number `k`
//! (`ChaCha20Rng::set_stream(k)`). Output depends only on `(seed, count)`,
//! never on the number of worker threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::Rtbm;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::RtbmParams;
use crate::theta::{ThetaSum, DEFAULT_EPS};

/// Name of the generator, recorded in run metadata.
pub const RNG_NAME: &str = "ChaCha20 (rand_chacha), stream k for row chunk k";
pub const CHUNK_ROWS: usize = 1024;
/// Minimum number of in-window rows for [`empirical_conditional`].
pub const MIN_CONDITIONED_SAMPLES: usize = 100;
pub const DEFAULT_WINDOW: f64 = 0.05;
pub const DEFAULT_BINS: usize = 60;
/// Central fraction of the sample used for automatic histogram ranges.
pub const DEFAULT_COVERAGE: f64 = 0.99;

/// Fill `count` rows of width `dim` using per-chunk ChaCha20 streams.
pub(crate) fn seeded_rows<F>(count: usize, dim: usize, seed: u64, fill: F) -> Result<Dataset>
where
    F: Fn(&mut ChaCha20Rng, &mut [f64]) + Sync,
{
    let chunks = count.div_ceil(CHUNK_ROWS);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let rows = CHUNK_ROWS.min(count - k * CHUNK_ROWS);
            let mut out = vec![0.0; rows * dim];
            for row in out.chunks_exact_mut(dim) {
                fill(&mut rng, row);
            }
            out
        })
        .collect();
    Dataset::new(dim, parts.concat())
}

/// Truncated distribution of the hidden lattice state.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenDistribution {
    pub points: Vec<Vec<i64>>,
    /// Normalized: log-sum-exp of the weights is zero.
    pub log_weights: Vec<f64>,
    /// Relative truncation tolerance used for the enumeration.
    pub coverage: f64,
}

impl HiddenDistribution {
    pub fn probability(&self, n: &[i64]) -> f64 {
        self.points
            .iter()
            .position(|p| p == n)
            .map(|i| self.log_weights[i].exp())
            .unwrap_or(0.0)
    }
}

/// Enumerate `p(n)` with the same truncation as the normalizing theta.
pub fn hidden_distribution(params: &RtbmParams, eps: f64) -> Result<HiddenDistribution> {
    let model = Rtbm::with_eps(params.clone(), eps)?;
    hidden_distribution_of(&model)
}

fn hidden_distribution_of(model: &Rtbm) -> Result<HiddenDistribution> {
    let p = model.params();
    let chol = model.t_cholesky();
    let schur = p.q() - linalg::quad_form_inv(chol, p.w());
    let tinv_bv = linalg::solve(chol, p.bv());
    let z = p.bh() - p.w().transpose() * tinv_bv;
    let sum = ThetaSum::new(&schur, p.lattice(), model.eps())?;
    let terms = sum.terms(z.as_slice())?;
    let raw: Vec<f64> = terms.iter().map(|t| t.1).collect();
    let norm = linalg::log_sum_exp(&raw);
    Ok(HiddenDistribution {
        points: terms.into_iter().map(|t| t.0).collect(),
        log_weights: raw.iter().map(|r| r - norm).collect(),
        coverage: model.eps(),
    })
}

/// The mixture components `(log p(n), mean_n)`; the shared covariance is
/// `T⁻¹`.
pub fn mixture_components(model: &Rtbm) -> Result<Vec<(f64, DVector<f64>)>> {
    let hidden = hidden_distribution_of(model)?;
    let p = model.params();
    let chol = model.t_cholesky();
    Ok(hidden
        .points
        .iter()
        .zip(&hidden.log_weights)
        .map(|(n, &lw)| {
            let nv = DVector::from_iterator(n.len(), n.iter().map(|&k| k as f64));
            let mean = linalg::solve(chol, &(p.w() * nv - p.bv()));
            (lw, mean)
        })
        .collect())
}

/// Draw `count` visible samples.
pub fn sample_visible(params: &RtbmParams, count: usize, seed: u64) -> Result<Dataset> {
    let model = Rtbm::with_eps(params.clone(), DEFAULT_EPS)?;
    sample_model(&model, count, seed)
}

pub fn sample_model(model: &Rtbm, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::OutOfRange {
            what: "sample count",
            value: "0".into(),
        });
    }
    let components = mixture_components(model)?;
    let mut cdf = Vec::with_capacity(components.len());
    let mut acc = 0.0;
    for (lw, _) in &components {
        acc += lw.exp();
        cdf.push(acc);
    }
    let total = acc;
    let l = model.t_cholesky().l();
    let nv = model.params().n_v();
    seeded_rows(count, nv, seed, |rng, row| {
        let u: f64 = rng.gen::<f64>() * total;
        let k = cdf.partition_point(|&c| c <= u).min(components.len() - 1);
        let mean = &components[k].1;
        // x = L⁻ᵀ ξ has covariance (L Lᵀ)⁻¹ = T⁻¹
        let xi: Vec<f64> = (0..nv).map(|_| StandardNormal.sample(rng)).collect();
        let mut x = vec![0.0; nv];
        for i in (0..nv).rev() {
            let mut s = xi[i];
            for j in (i + 1)..nv {
                s -= l[(j, i)] * x[j];
            }
            x[i] = s / l[(i, i)];
        }
        for i in 0..nv {
            row[i] = mean[i] + x[i];
        }
    })
}

/// How to bin: number of bins per axis and optional explicit ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    pub bins: usize,
    /// One `(lo, hi)` per histogram axis; `None` uses the central
    /// [`DEFAULT_COVERAGE`] of the data.
    pub ranges: Option<Vec<(f64, f64)>>,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            ranges: None,
        }
    }
}

/// A 1D or 2D density histogram. Bins are stored row-major (last axis
/// fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<Vec<f64>>,
    pub density: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    fn shape(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for j in (0..shape.len()).rev() {
            idx[j] = flat % shape[j];
            flat /= shape[j];
        }
        idx
    }

    pub fn bin_volume(&self, flat: usize) -> f64 {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(j, &i)| self.edges[j][i + 1] - self.edges[j][i])
            .product()
    }

    /// Bin centers in storage order.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.density.len())
            .map(|flat| {
                self.unravel(flat)
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| 0.5 * (self.edges[j][i] + self.edges[j][i + 1]))
                    .collect()
            })
            .collect()
    }

    /// `Σ density · volume`.
    pub fn total_mass(&self) -> f64 {
        (0..self.density.len())
            .map(|i| self.density[i] * self.bin_volume(i))
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("histogram serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Histogram the points of a 1- or 2-column dataset, normalized to a density
/// over the binned region.
pub fn histogram(points: &Dataset, spec: &BinSpec) -> Result<Histogram> {
    let dims = points.dim();
    if !(1..=2).contains(&dims) {
        return Err(Error::OutOfRange {
            what: "histogram dimension",
            value: dims.to_string(),
        });
    }
    if spec.bins == 0 {
        return Err(Error::OutOfRange {
            what: "bin count",
            value: "0".into(),
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyRange(0));
    }
    let ranges: Vec<(f64, f64)> = match &spec.ranges {
        Some(r) => {
            if r.len() != dims {
                return Err(Error::Dimension {
                    context: "histogram ranges",
                    expected: dims,
                    found: r.len(),
                });
            }
            r.clone()
        }
        None => (0..dims)
            .map(|j| {
                let mut col = points.column(j);
                col.sort_by(f64::total_cmp);
                let tail = 0.5 * (1.0 - DEFAULT_COVERAGE);
                (quantile(&col, tail), quantile(&col, 1.0 - tail))
            })
            .collect(),
    };
    for (j, &(lo, hi)) in ranges.iter().enumerate() {
        if !(lo < hi) {
            return Err(Error::EmptyRange(j));
        }
    }
    let nb = spec.bins;
    let edges: Vec<Vec<f64>> = ranges
        .iter()
        .map(|&(lo, hi)| {
            (0..=nb)
                .map(|i| {
                    if i == nb {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / nb as f64
                    }
                })
                .collect()
        })
        .collect();
    let mut counts = vec![0u64; nb.pow(dims as u32)];
    let mut inside = 0u64;
    'rows: for r in points.rows() {
        let mut flat = 0;
        for j in 0..dims {
            let (lo, hi) = ranges[j];
            let x = r[j];
            if !(x >= lo && x <= hi) {
                continue 'rows;
            }
            let b = (((x - lo) / (hi - lo)) * nb as f64).floor() as usize;
            flat = flat * nb + b.min(nb - 1);
        }
        counts[flat] += 1;
        inside += 1;
    }
    if inside == 0 {
        return Err(Error::EmptyRange(0));
    }
    let mut h = Histogram {
        edges,
        density: vec![0.0; counts.len()],
        counts,
    };
    for i in 0..h.counts.len() {
        h.density[i] = h.counts[i] as f64 / (inside as f64 * h.bin_volume(i));
    }
    Ok(h)
}

/// Histogram of the free coordinates of the rows whose conditioned
/// coordinates lie within `window` of `cond_values`.
pub fn empirical_conditional(
    samples: &Dataset,
    cond_indices: &[usize],
    cond_values: &[f64],
    window: &[f64],
    bins: &BinSpec,
) -> Result<Histogram> {
    let dim = samples.dim();
    if cond_values.len() != cond_indices.len() || window.len() != cond_indices.len() {
        return Err(Error::Dimension {
            context: "conditioned values / windows",
            expected: cond_indices.len(),
            found: cond_values.len().min(window.len()),
        });
    }
    if let Some(w) = window.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::OutOfRange {
            what: "conditioning window",
            value: w.to_string(),
        });
    }
    let mut seen = vec![false; dim];
    for &i in cond_indices {
        if i >= dim || seen[i] {
            return Err(Error::OutOfRange {
                what: "conditioned index",
                value: i.to_string(),
            });
        }
        seen[i] = true;
    }
    let free: Vec<usize> = (0..dim).filter(|i| !seen[*i]).collect();
    let mut kept = Vec::new();
    for r in samples.rows() {
        let ok = cond_indices
            .iter()
            .zip(cond_values)
            .zip(window)
            .all(|((&i, &c), &w)| (r[i] - c).abs() <= w);
        if ok {
            kept.extend(free.iter().map(|&j| r[j]));
        }
    }
    let found = kept.len() / free.len().max(1);
    if found < MIN_CONDITIONED_SAMPLES {
        return Err(Error::InsufficientSample {
            found,
            required: MIN_CONDITIONED_SAMPLES,
        });
    }
    histogram(&Dataset::new(free.len(), kept)?, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::metrics::mse;
    use crate::model::Lattice;
    use proptest::prelude::*;

    #[test]
    fn narrow_gaussian_hidden_weights() {
        let p =
            RtbmParams::from_rows(&[1.0], &[50.0], &[0.0], &[0.0], &[0.0], Lattice::Full).unwrap();
        let h = hidden_distribution(&p, DEFAULT_EPS).unwrap();
        let p0 = h.probability(&[0]);
        assert!((p0 - (1.0 - 2.78e-11)).abs() < 1e-13);
        assert!((p0 - 1.0 / (1.0 + 2.0 * (-25f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn symmetric_hidden_weights() {
        // z = B_h − WᵀT⁻¹B_v = 0
        let p = RtbmParams::from_rows(
            &[1.0, 0.2, 0.2, 2.0],
            &[1.5, 0.3, 0.3, 2.0],
            &[0.4, -0.2, 0.1, 0.3],
            &[0.0, 0.0],
            &[0.0, 0.0],
            Lattice::Full,
        )
        .unwrap();
        let h = hidden_distribution(&p, DEFAULT_EPS).unwrap();
        for (n, lw) in h.points.iter().zip(&h.log_weights) {
            let neg: Vec<i64> = n.iter().map(|k| -k).collect();
            let i = h.points.iter().position(|q| *q == neg).unwrap();
            assert!((h.log_weights[i] - lw).abs() < 1e-13);
        }
    }

    #[test]
    fn hidden_weights_normalize() {
        for p in fixtures::valid_fixtures() {
            let h = hidden_distribution(&p, DEFAULT_EPS).unwrap();
            let total: f64 = h.log_weights.iter().map(|w| w.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_matches_density() {
        for p in fixtures::valid_fixtures() {
            let model = Rtbm::new(p.clone()).unwrap();
            let comps = mixture_components(&model).unwrap();
            let cov = model.t_cholesky().inverse();
            let pts = sample_model(&model, 30, 8).unwrap();
            for v in pts.rows() {
                let logs: Vec<f64> = comps
                    .iter()
                    .map(|(lw, mean)| lw + crate::oracle::gaussian_logpdf(mean, &cov, v).unwrap())
                    .collect();
                let mix = linalg::log_sum_exp(&logs);
                let direct = model.log_pdf(v).unwrap();
                assert!(((mix - direct).exp() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_sample_mean() {
        let t = [2.0, 0.5, 0.5, 1.0];
        let bv = [1.0, -0.5];
        let p = RtbmParams::from_rows(&t, &[2.0], &[0.0, 0.0], &bv, &[0.3], Lattice::Full).unwrap();
        let n = 100_000;
        let s = sample_visible(&p, n, 17).unwrap();
        let cov = nalgebra::DMatrix::from_row_slice(2, 2, &t)
            .try_inverse()
            .unwrap();
        let mean = -&cov * DVector::from_column_slice(&bv);
        for j in 0..2 {
            let m = s.column(j).iter().sum::<f64>() / n as f64;
            let se = (cov[(j, j)] / n as f64).sqrt();
            assert!((m - mean[j]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let p = fixtures::mixture_3d();
        let a = sample_visible(&p, 3000, 5).unwrap();
        let b = sample_visible(&p, 3000, 5).unwrap();
        let c = sample_visible(&p, 3000, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // prefix property of the chunked streams
        let short = sample_visible(&p, 1500, 5).unwrap();
        assert_eq!(short.as_slice(), &a.as_slice()[..1500 * 3]);
    }

    #[test]
    fn sampling_ignores_thread_count() {
        let p = fixtures::fitted_student_t();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| sample_visible(&p, 5000, 99).unwrap());
        let b = four.install(|| sample_visible(&p, 5000, 99).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn independent_product_conditional_matches_marginal() {
        // diagonal T and W = 0 give independent coordinates
        let p = RtbmParams::from_rows(
            &[1.0, 0.0, 0.0, 2.0],
            &[1.0],
            &[0.0, 0.0],
            &[0.0, 0.5],
            &[0.0],
            Lattice::Full,
        )
        .unwrap();
        let s = sample_visible(&p, 50_000, 3).unwrap();
        let spec = BinSpec {
            bins: 30,
            ranges: Some(vec![(-3.0, 3.0)]),
        };
        let cond = empirical_conditional(&s, &[1], &[-0.25], &[0.3], &spec).unwrap();
        let marg = histogram(&s.select_columns(&[0]).unwrap(), &spec).unwrap();
        assert!(mse(&marg.density, &cond.density).unwrap() <= 5e-3);
    }

    #[test]
    fn insufficient_window() {
        let s = sample_visible(&fixtures::fitted_student_t(), 2000, 1).unwrap();
        let err =
            empirical_conditional(&s, &[0], &[-2.0], &[1e-6], &BinSpec::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient conditioned sample"));
        assert!(empirical_conditional(&s, &[0], &[-2.0], &[0.0], &BinSpec::default()).is_err());
    }

    #[test]
    fn empty_range_is_rejected() {
        let d = Dataset::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert!(matches!(
            histogram(&d, &BinSpec::default()),
            Err(Error::EmptyRange(0))
        ));
    }

    #[test]
    fn histogram_json_round_trip() {
        let d = Dataset::from_rows(&[[0.1, 0.2], [0.3, -0.4], [0.5, 0.0], [0.7, 0.9]]).unwrap();
        let h = histogram(
            &d,
            &BinSpec {
                bins: 3,
                ranges: None,
            },
        )
        .unwrap();
        assert_eq!(Histogram::from_json(&h.to_json()).unwrap(), h);
        assert_eq!(h.centers().len(), 9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn histograms_normalize(
            values in proptest::collection::vec(-100.0f64..100.0, 4..400),
            bins in 1usize..80,
            two_d in any::<bool>(),
        ) {
            let dims = if two_d { 2 } else { 1 };
            let n = values.len() / dims * dims;
            let d = Dataset::new(dims, values[..n].to_vec()).unwrap();
            match histogram(&d, &BinSpec { bins, ranges: None }) {
                Ok(h) => {
                    prop_assert!((h.total_mass() - 1.0).abs() <= 1e-12);
                    prop_assert!(h.counts.iter().sum::<u64>() as usize <= d.len());
                }
                Err(Error::EmptyRange(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
