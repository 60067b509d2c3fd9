//! Train/test splitting: seeded shuffle or chronological cut.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::HourlyDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Shuffled,
    Chronological,
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitMode::Shuffled => write!(f, "shuffled"),
            SplitMode::Chronological => write!(f, "chronological"),
        }
    }
}

/// How to cut a labeled dataset. `seed: None` draws a fresh entropy seed
/// and reports it in the outcome so the run stays auditable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: Option<u64>,
    pub fraction_train: f64,
    pub mode: SplitMode,
}

impl SplitSpec {
    pub fn shuffled(seed: Option<u64>) -> Self {
        SplitSpec {
            seed,
            fraction_train: 0.7,
            mode: SplitMode::Shuffled,
        }
    }

    pub fn chronological() -> Self {
        SplitSpec {
            seed: None,
            fraction_train: 0.7,
            mode: SplitMode::Chronological,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: HourlyDataset,
    pub test: HourlyDataset,
    /// The entropy seed drawn when the spec had none (shuffled mode only).
    pub drawn_seed: Option<u64>,
}

/// The permutation used by shuffled splits; a pure function of (n, seed).
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices
}

/// Cut a labeled dataset into train and test partitions.
pub fn split(ds: &HourlyDataset, spec: &SplitSpec) -> Result<SplitOutcome> {
    if !(0.0..1.0).contains(&spec.fraction_train) || spec.fraction_train == 0.0 {
        return Err(Error::Validation(format!(
            "fraction_train {} outside (0,1)",
            spec.fraction_train
        )));
    }
    ds.targets()?;
    let n = ds.n_rows();
    let cut = (spec.fraction_train * n as f64).floor() as usize;

    match spec.mode {
        SplitMode::Chronological => {
            let train_idx: Vec<usize> = (0..cut).collect();
            let test_idx: Vec<usize> = (cut..n).collect();
            Ok(SplitOutcome {
                train: ds.select_rows(&train_idx),
                test: ds.select_rows(&test_idx),
                drawn_seed: None,
            })
        }
        SplitMode::Shuffled => {
            let (seed, drawn_seed) = match spec.seed {
                Some(s) => (s, None),
                None => {
                    let drawn: u64 = rand::random();
                    (drawn, Some(drawn))
                }
            };
            let order = permutation(n, seed);
            Ok(SplitOutcome {
                train: ds.select_rows(&order[..cut]),
                test: ds.select_rows(&order[cut..]),
                drawn_seed,
            })
        }
    }
}
