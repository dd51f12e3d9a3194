//! Parsers for compound flag values.

use std::fmt;
use std::str::FromStr;

use rtbm::oracle::GridAxis;

/// Tensor grid given as `lo:hi:n[,lo:hi:n…]`, one triple per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec(pub Vec<GridAxis>);

impl GridSpec {
    /// Every node, last axis fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        rtbm::oracle::for_each_node(&self.0, |_, x| out.push(x.to_vec()));
        out
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut axes = Vec::new();
        for part in s.split(',') {
            let fields: Vec<&str> = part.split(':').collect();
            let [lo, hi, n] = fields[..] else {
                return Err(format!("`{part}` is not lo:hi:n"));
            };
            let lo: f64 = lo
                .trim()
                .parse()
                .map_err(|_| format!("bad lower bound `{lo}`"))?;
            let hi: f64 = hi
                .trim()
                .parse()
                .map_err(|_| format!("bad upper bound `{hi}`"))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| format!("bad node count `{n}`"))?;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(format!("need finite lo < hi in `{part}`"));
            }
            if n < 2 {
                return Err(format!("need at least 2 nodes in `{part}`"));
            }
            axes.push(GridAxis::new(lo, hi, n).map_err(|e| e.to_string())?);
        }
        Ok(Self(axes))
    }
}

/// Conditioning assignments `idx=value[,idx=value…]` with zero-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl FromStr for Assignments {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for part in s.split(',') {
            let (i, v) = part
                .split_once('=')
                .ok_or_else(|| format!("`{part}` is not idx=value"))?;
            let i: usize = i.trim().parse().map_err(|_| format!("bad index `{i}`"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("bad value `{v}`"))?;
            if !v.is_finite() {
                return Err(format!("value for index {i} is not finite"));
            }
            if indices.contains(&i) {
                return Err(format!("index {i} given twice"));
            }
            indices.push(i);
            values.push(v);
        }
        Ok(Self { indices, values })
    }
}

/// Comma-separated list of floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Floats(pub Vec<f64>);

impl FromStr for Floats {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad number `{f}`"))
            })
            .collect::<Result<_, _>>()
            .map(Self)
    }
}

/// Comma-separated `lo:hi` ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranges(pub Vec<(f64, f64)>);

impl FromStr for Ranges {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|part| {
                let (lo, hi) = part
                    .split_once(':')
                    .ok_or_else(|| format!("`{part}` is not lo:hi"))?;
                let lo: f64 = lo.trim().parse().map_err(|_| format!("bad bound `{lo}`"))?;
                let hi: f64 = hi.trim().parse().map_err(|_| format!("bad bound `{hi}`"))?;
                if lo < hi {
                    Ok((lo, hi))
                } else {
                    Err(format!("need lo < hi in `{part}`"))
                }
            })
            .collect::<Result<_, _>>()
            .map(Self)
    }
}

/// Error in the meaning of otherwise well-formed arguments; reported with
/// the usage exit status.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
