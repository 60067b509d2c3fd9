//! MinMax and ZScore feature scalers fitted on a designated row set
//! (training split by default, whole dataset in global scope).

use serde::{Deserialize, Serialize};

use crate::data::HourlyDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    None,
    MinMax,
    ZScore,
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormKind::None => write!(f, "none"),
            NormKind::MinMax => write!(f, "minmax"),
            NormKind::ZScore => write!(f, "zscore"),
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormKind::None),
            "minmax" => Ok(NormKind::MinMax),
            "zscore" => Ok(NormKind::ZScore),
            other => Err(Error::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

/// Where the scaler statistics come from. Train scope avoids leaking
/// test rows into the statistics; global scope mirrors whole-dataset
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Train,
    Global,
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Train => write!(f, "train"),
            Scope::Global => write!(f, "global"),
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Scope::Train),
            "global" => Ok(Scope::Global),
            other => Err(Error::Config(format!("unknown scope '{other}'"))),
        }
    }
}

/// Fitted per-feature statistics: `(min, max)` pairs for MinMax,
/// `(mean, population std)` pairs for ZScore, empty for None.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kind: NormKind,
    pub scope: Scope,
    pub stats: Vec<(f64, f64)>,
}

/// Compute scaler statistics over the present cells of `ds`.
///
/// ZScore uses the population standard deviation (divide by N).
pub fn fit(ds: &HourlyDataset, kind: NormKind, scope: Scope) -> Result<Normalizer> {
    if ds.n_rows() == 0 {
        return Err(Error::InsufficientData("cannot fit scaler on empty dataset".into()));
    }
    let d = ds.n_features();
    let stats = match kind {
        NormKind::None => Vec::new(),
        NormKind::MinMax => (0..d)
            .map(|f| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for row in &ds.cells {
                    if let Some(v) = row[f] {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                (lo, hi)
            })
            .collect(),
        NormKind::ZScore => (0..d)
            .map(|f| {
                let values: Vec<f64> = ds.cells.iter().filter_map(|row| row[f]).collect();
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect(),
    };
    Ok(Normalizer { kind, scope, stats })
}

/// Scale features in place on a copy; targets are never touched.
/// Zero-range and zero-std features map to 0.
pub fn apply(n: &Normalizer, ds: &HourlyDataset) -> Result<HourlyDataset> {
    if n.kind == NormKind::None {
        return Ok(ds.clone());
    }
    if n.stats.len() != ds.n_features() {
        return Err(Error::DimensionMismatch {
            expected: n.stats.len(),
            actual: ds.n_features(),
        });
    }
    let mut out = ds.clone();
    for row in out.cells.iter_mut() {
        for (f, cell) in row.iter_mut().enumerate() {
            if let Some(v) = *cell {
                let (a, b) = n.stats[f];
                *cell = Some(match n.kind {
                    NormKind::MinMax => {
                        let range = b - a;
                        if range == 0.0 {
                            0.0
                        } else {
                            (v - a) / range
                        }
                    }
                    NormKind::ZScore => {
                        if b == 0.0 {
                            0.0
                        } else {
                            (v - a) / b
                        }
                    }
                    NormKind::None => unreachable!(),
                });
            }
        }
    }
    Ok(out)
}
