//! Atomic file output and the input formats shared between commands.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rtbm::sampling::Histogram;
use rtbm::{Dataset, Rtbm, RtbmParams};
use tempfile::NamedTempFile;

/// Write `contents` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Write to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, contents: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents)?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn dataset_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    Ok(buf)
}

/// Rows of coordinates followed by density and log-density.
pub fn grid_csv(points: &[Vec<f64>], log_density: &[f64]) -> Vec<u8> {
    let mut buf = String::new();
    for (x, lp) in points.iter().zip(log_density) {
        for v in x {
            buf.push_str(&format!("{v:?},"));
        }
        buf.push_str(&format!("{:?},{lp:?}\n", lp.exp()));
    }
    buf.into_bytes()
}

pub fn load_model(path: &Path) -> Result<RtbmParams> {
    RtbmParams::load(path).with_context(|| format!("reading model {}", path.display()))
}

pub fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load_csv(path).with_context(|| format!("reading data {}", path.display()))
}

/// Something that provides density values: a model evaluated anywhere, or
/// values tabulated at fixed points.
pub enum DensitySource {
    Model(Box<Rtbm>),
    Table {
        points: Vec<Vec<f64>>,
        density: Vec<f64>,
    },
}

impl DensitySource {
    /// Recognizes model files, histogram JSON and grid CSV by content.
    pub fn load(path: &Path, theta_eps: f64) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if let Ok(json) = serde_json::from_str::<serde_json::Value>(&text) {
            if json.get("edges").is_some() {
                let h = Histogram::from_json(&text)?;
                return Ok(Self::Table {
                    points: h.centers(),
                    density: h.density,
                });
            }
            let params = RtbmParams::from_json(&text)
                .with_context(|| format!("reading model {}", path.display()))?;
            return Ok(Self::Model(Box::new(Rtbm::with_eps(params, theta_eps)?)));
        }
        let grid = Dataset::read_csv(text.as_bytes())
            .with_context(|| format!("reading density grid {}", path.display()))?;
        if grid.dim() < 3 {
            bail!(
                "{}: a density grid needs coordinate, density and log-density columns",
                path.display()
            );
        }
        let k = grid.dim() - 2;
        Ok(Self::Table {
            points: grid.rows().map(|r| r[..k].to_vec()).collect(),
            density: grid.rows().map(|r| r[k]).collect(),
        })
    }

    pub fn points(&self) -> Option<&[Vec<f64>]> {
        match self {
            Self::Model(_) => None,
            Self::Table { points, .. } => Some(points),
        }
    }

    /// Linear-space density at `points`. Tables must have been tabulated at
    /// exactly these points.
    pub fn density_at(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Self::Model(model) => {
                let dim = model.params().n_v();
                let flat: Vec<f64> = points.iter().flatten().copied().collect();
                if points.iter().any(|p| p.len() != dim) {
                    bail!("model has {dim} coordinates but the evaluation points do not");
                }
                let data = Dataset::new(dim, flat)?;
                Ok(model
                    .log_pdf_batch(&data)?
                    .into_iter()
                    .map(f64::exp)
                    .collect())
            }
            Self::Table {
                points: own,
                density,
            } => {
                if own.len() != points.len()
                    || own.iter().zip(points).any(|(a, b)| !same_point(a, b))
                {
                    bail!("tabulated density is not given at the shared evaluation points");
                }
                Ok(density.clone())
            }
        }
    }
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0))
}
