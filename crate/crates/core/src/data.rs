//! Sample matrices and their headerless CSV form.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// `len` points of dimension `dim`, stored point after point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::Dimension {
                context: "dataset width",
                expected: dim,
                found: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Dimension {
                    context: "dataset row",
                    expected: dim,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Dimension {
                context: "column selection",
                expected: 1,
                found: 0,
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.dim) {
            return Err(Error::OutOfRange {
                what: "column index",
                value: bad.to_string(),
            });
        }
        let values = self
            .rows()
            .flat_map(|r| cols.iter().map(move |&c| r[c]))
            .collect();
        Self::new(cols.len(), values)
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::Dimension {
                context: "dataset concat",
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(self.dim, values)
    }

    /// Parse headerless comma-separated decimal rows. Blank lines are skipped.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut dim = 0;
        let mut values = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut count = 0;
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!(
                        "line {}: bad number `{}`",
                        lineno + 1,
                        field.trim()
                    ))
                })?;
                values.push(v);
                count += 1;
            }
            if dim == 0 {
                dim = count;
            } else if count != dim {
                return Err(Error::Parse(format!(
                    "line {}: expected {dim} columns, found {count}",
                    lineno + 1
                )));
            }
        }
        if dim == 0 {
            return Err(Error::Parse("empty data file".into()));
        }
        Self::new(dim, values)
    }

    pub fn load_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    /// Write one row per point. Values use the shortest representation that
    /// parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}
