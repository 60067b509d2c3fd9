//! Weather-data pipeline: ASOS-style CSV parsing, hourly gridding,
//! imputation, region joins, target construction, splits, and a
//! deterministic synthetic generator for desk-scale fixtures.

mod parse;
mod split;
mod synth;

pub use parse::{
    parse_asos_csv, read_dataset, write_asos_csv, write_dataset, DatasetSidecar, ASOS_COLUMNS,
};
pub use split::{split, SplitMode, SplitOutcome, SplitSpec};
pub use synth::generate_synthetic;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature order shared by every station: the nine numeric ASOS columns.
pub const FEATURE_NAMES: [&str; 9] = [
    "tmpf", "dwpf", "relh", "drct", "sknt", "alti", "mslp", "vsby", "p01i",
];

/// Index of the precipitation column within [`FEATURE_NAMES`].
pub const P01I: usize = 8;

/// Default rain/no-rain threshold in inches.
pub const RAIN_THRESHOLD: f64 = 0.01;

/// One raw station observation. Numeric fields are `None` when the source
/// encoded them as missing.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRecord {
    pub station: String,
    pub valid: NaiveDateTime,
    pub tmpf: Option<f64>,
    pub dwpf: Option<f64>,
    pub relh: Option<f64>,
    pub drct: Option<f64>,
    pub sknt: Option<f64>,
    pub alti: Option<f64>,
    pub mslp: Option<f64>,
    pub vsby: Option<f64>,
    pub p01i: Option<f64>,
}

impl WeatherRecord {
    pub fn feature(&self, idx: usize) -> Option<f64> {
        match idx {
            0 => self.tmpf,
            1 => self.dwpf,
            2 => self.relh,
            3 => self.drct,
            4 => self.sknt,
            5 => self.alti,
            6 => self.mslp,
            7 => self.vsby,
            8 => self.p01i,
            _ => None,
        }
    }

    /// Range checks from the record invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(relh) = self.relh {
            if !(0.0..=100.0).contains(&relh) {
                return Err(Error::Validation(format!(
                    "relh {relh} outside [0,100] for station {} at {}",
                    self.station, self.valid
                )));
            }
        }
        if let Some(p01i) = self.p01i {
            if p01i < 0.0 {
                return Err(Error::Validation(format!(
                    "negative p01i {p01i} for station {} at {}",
                    self.station, self.valid
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSet {
    Single,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Classification => write!(f, "classification"),
            Task::Regression => write!(f, "regression"),
        }
    }
}

/// Hour-gridded feature table. Before [`impute`] cells may be `None`;
/// afterwards every cell is present. Targets appear after
/// [`make_targets`] and always derive from the primary region's
/// next-hour precipitation.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyDataset {
    /// Timestamp of hour index 0.
    pub origin: NaiveDateTime,
    /// Station id, or joined ids like `ROC+BUF` after [`join_regions`].
    pub station: String,
    pub feature_names: Vec<String>,
    /// Hour offsets from `origin`, aligned with `cells`. Consecutive
    /// after gridding; subsets and splits carry the original offsets.
    pub hours: Vec<i64>,
    /// Row-major cells, one row per hour.
    pub cells: Vec<Vec<Option<f64>>>,
    pub targets: Option<Vec<f64>>,
    pub task: Option<Task>,
    pub threshold: Option<f64>,
    pub region_set: RegionSet,
    /// Column index of the primary region's p01i feature.
    pub primary_p01i: usize,
}

impl HourlyDataset {
    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|row| row.iter().all(Option::is_some))
    }

    /// Dense feature rows; errors if any cell is still missing.
    pub fn dense_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, cell)| {
                        cell.ok_or_else(|| {
                            Error::Validation(format!(
                                "missing cell at row {i}, feature {}",
                                self.feature_names[j]
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn targets(&self) -> Result<&[f64]> {
        self.targets
            .as_deref()
            .ok_or_else(|| Error::Validation("dataset has no targets; run make_targets".into()))
    }

    /// Keep only the rows at `indices`, preserving the given order.
    pub fn select_rows(&self, indices: &[usize]) -> HourlyDataset {
        HourlyDataset {
            origin: self.origin,
            station: self.station.clone(),
            feature_names: self.feature_names.clone(),
            hours: indices.iter().map(|&i| self.hours[i]).collect(),
            cells: indices.iter().map(|&i| self.cells[i].clone()).collect(),
            targets: self
                .targets
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            task: self.task,
            threshold: self.threshold,
            region_set: self.region_set,
            primary_p01i: self.primary_p01i,
        }
    }
}

fn floor_to_hour(ts: NaiveDateTime) -> NaiveDateTime {
    ts.date().and_hms_opt(ts.hour(), 0, 0).expect("valid hour")
}

/// Grid station records onto consecutive hourly buckets.
///
/// Each bucket averages the present values of every feature except p01i,
/// which takes the bucket maximum (it is already an hourly accumulation).
/// Hours with no records stay fully missing. Records exactly on an hour
/// boundary belong to that hour's bucket.
pub fn group_hourly(records: &[WeatherRecord]) -> Result<HourlyDataset> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records to grid".into()));
    }
    let mut sorted: Vec<&WeatherRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.valid);

    let origin = floor_to_hour(sorted[0].valid);
    let last_idx = (sorted[sorted.len() - 1].valid - origin)
        .num_seconds()
        .div_euclid(3600);
    let n_hours = last_idx as usize + 1;

    let mut sums = vec![[0.0f64; 9]; n_hours];
    let mut counts = vec![[0usize; 9]; n_hours];
    let mut p01i_max = vec![None::<f64>; n_hours];

    for rec in &sorted {
        let idx = (rec.valid - origin).num_seconds().div_euclid(3600) as usize;
        for f in 0..9 {
            if let Some(v) = rec.feature(f) {
                if f == P01I {
                    p01i_max[idx] = Some(p01i_max[idx].map_or(v, |m: f64| m.max(v)));
                } else {
                    sums[idx][f] += v;
                    counts[idx][f] += 1;
                }
            }
        }
    }

    let cells = (0..n_hours)
        .map(|i| {
            (0..9)
                .map(|f| {
                    if f == P01I {
                        p01i_max[i]
                    } else if counts[i][f] > 0 {
                        Some(sums[i][f] / counts[i][f] as f64)
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();

    Ok(HourlyDataset {
        origin,
        station: sorted[0].station.clone(),
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        hours: (0..n_hours as i64).collect(),
        cells,
        targets: None,
        task: None,
        threshold: None,
        region_set: RegionSet::Single,
        primary_p01i: P01I,
    })
}

fn is_p01i_column(name: &str) -> bool {
    name == "p01i" || name.ends_with("_p01i")
}

fn interpolate_column(values: &mut [Option<f64>], name: &str) -> Result<()> {
    let present: Vec<usize> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect();
    if present.is_empty() {
        return Err(Error::Imputation {
            feature: name.to_string(),
            reason: "is missing in every row".into(),
        });
    }
    let first = present[0];
    let last = *present.last().unwrap();
    let mut next_present = 0usize;
    for i in 0..values.len() {
        if values[i].is_some() {
            continue;
        }
        if i < first {
            values[i] = values[first];
        } else if i > last {
            values[i] = values[last];
        } else {
            while present[next_present] < i {
                next_present += 1;
            }
            let hi = present[next_present];
            let lo = present[next_present - 1];
            let frac = (i - lo) as f64 / (hi - lo) as f64;
            let a = values[lo].unwrap();
            let b = values[hi].unwrap();
            values[i] = Some(a + frac * (b - a));
        }
    }
    Ok(())
}

/// Fill every gap: missing p01i becomes 0; every other feature is
/// linearly interpolated between its nearest present neighbours, with
/// leading/trailing gaps copying the nearest present value.
pub fn impute(ds: &HourlyDataset) -> Result<HourlyDataset> {
    let mut out = ds.clone();
    let n = out.n_rows();
    for f in 0..out.n_features() {
        let name = out.feature_names[f].clone();
        if is_p01i_column(&name) {
            for row in out.cells.iter_mut() {
                if row[f].is_none() {
                    row[f] = Some(0.0);
                }
            }
            continue;
        }
        let mut col: Vec<Option<f64>> = (0..n).map(|i| out.cells[i][f]).collect();
        interpolate_column(&mut col, &name)?;
        for (i, v) in col.into_iter().enumerate() {
            out.cells[i][f] = v;
        }
    }
    debug_assert!(out.is_complete());
    Ok(out)
}

/// Left join of the primary region with any number of secondaries.
///
/// The output keeps the primary's rows; secondary feature vectors are
/// appended in the given order with station-prefixed names. Hours the
/// secondaries lack are filled by the imputation rules. Targets still
/// derive from the primary's p01i column.
pub fn join_regions(primary: &HourlyDataset, others: &[HourlyDataset]) -> Result<HourlyDataset> {
    if primary.targets.is_some() {
        return Err(Error::Validation(
            "join_regions expects untargeted datasets; join before make_targets".into(),
        ));
    }
    for other in others {
        if other.origin != primary.origin {
            return Err(Error::Alignment(format!(
                "secondary {} origin {} differs from primary origin {}",
                other.station, other.origin, primary.origin
            )));
        }
    }

    let mut out = primary.clone();
    out.region_set = RegionSet::Mixed;
    let mut stations = vec![primary.station.clone()];

    for other in others {
        stations.push(other.station.clone());
        for name in &other.feature_names {
            out.feature_names.push(format!("{}_{}", other.station, name));
        }
        // Secondary rows are looked up by hour offset; anything outside
        // the secondary's range is missing and gets interpolated below.
        let base = out.cells[0].len();
        for (row, &hour) in out.cells.iter_mut().zip(&out.hours) {
            let sec_row = usize::try_from(hour)
                .ok()
                .filter(|&h| h < other.n_rows())
                .map(|h| &other.cells[h]);
            for f in 0..other.n_features() {
                row.push(sec_row.and_then(|r| r[f]));
            }
        }
        let n = out.n_rows();
        for f in base..out.feature_names.len() {
            let name = out.feature_names[f].clone();
            if is_p01i_column(&name) {
                for row in out.cells.iter_mut() {
                    if row[f].is_none() {
                        row[f] = Some(0.0);
                    }
                }
                continue;
            }
            let mut col: Vec<Option<f64>> = (0..n).map(|i| out.cells[i][f]).collect();
            interpolate_column(&mut col, &name)?;
            for (i, v) in col.into_iter().enumerate() {
                out.cells[i][f] = v;
            }
        }
    }
    out.station = stations.join("+");
    Ok(out)
}

/// Attach next-hour precipitation targets and drop the final row.
///
/// Classification labels are 1 exactly when the next hour's p01i is
/// strictly above `threshold`; regression targets are the raw inches.
pub fn make_targets(ds: &HourlyDataset, task: Task, threshold: f64) -> Result<HourlyDataset> {
    if !ds.is_complete() {
        return Err(Error::Validation(
            "dataset has missing cells; impute before make_targets".into(),
        ));
    }
    if ds.n_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 rows to build next-hour targets, got {}",
            ds.n_rows()
        )));
    }
    let mut out = ds.clone();
    let n = out.n_rows();
    let targets = (0..n - 1)
        .map(|i| {
            let next = out.cells[i + 1][out.primary_p01i].expect("complete dataset");
            match task {
                Task::Classification => {
                    if next > threshold {
                        1.0
                    } else {
                        0.0
                    }
                }
                Task::Regression => next,
            }
        })
        .collect();
    out.cells.truncate(n - 1);
    out.hours.truncate(n - 1);
    out.targets = Some(targets);
    out.task = Some(task);
    out.threshold = Some(threshold);
    Ok(out)
}

/// Keep only rows whose regression target is strictly above `threshold`.
pub fn regression_subset(ds: &HourlyDataset, threshold: f64) -> Result<HourlyDataset> {
    if ds.task != Some(Task::Regression) {
        return Err(Error::Validation(
            "regression_subset requires regression targets".into(),
        ));
    }
    let targets = ds.targets()?;
    let keep: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, &t)| t > threshold)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptySubset);
    }
    Ok(ds.select_rows(&keep))
}
