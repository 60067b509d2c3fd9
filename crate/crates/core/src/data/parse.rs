//! CSV ingestion and emission for the ASOS dialect: comma-separated,
//! header row, timestamps as `YYYY-MM-DD HH:MM`, missing values as the
//! empty string or the literal `M`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::data::{HourlyDataset, RegionSet, Task, WeatherRecord};
use crate::error::{Error, Result};

pub const ASOS_COLUMNS: [&str; 11] = [
    "station", "valid", "tmpf", "dwpf", "relh", "drct", "sknt", "alti", "mslp", "vsby", "p01i",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";

fn parse_missing_f64(field: &str, column: &str, line: u64) -> Result<Option<f64>> {
    let trimmed = field.trim();
    if trimmed.is_empty() || trimmed == "M" {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse {
            line,
            message: format!("non-numeric value '{trimmed}' in column {column}"),
        })
}

/// Read station observations from an ASOS-style CSV file.
pub fn parse_asos_csv(path: &Path) -> Result<Vec<WeatherRecord>> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let headers = reader.headers()?.clone();
    let expected: Vec<&str> = ASOS_COLUMNS.to_vec();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {got:?}, want {expected:?}"),
        });
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != ASOS_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", ASOS_COLUMNS.len(), row.len()),
            });
        }
        let valid = NaiveDateTime::parse_from_str(row[1].trim(), TIMESTAMP_FORMAT).map_err(|e| {
            Error::Parse {
                line,
                message: format!("bad timestamp '{}': {e}", &row[1]),
            }
        })?;
        let record = WeatherRecord {
            station: row[0].trim().to_string(),
            valid,
            tmpf: parse_missing_f64(&row[2], "tmpf", line)?,
            dwpf: parse_missing_f64(&row[3], "dwpf", line)?,
            relh: parse_missing_f64(&row[4], "relh", line)?,
            drct: parse_missing_f64(&row[5], "drct", line)?,
            sknt: parse_missing_f64(&row[6], "sknt", line)?,
            alti: parse_missing_f64(&row[7], "alti", line)?,
            mslp: parse_missing_f64(&row[8], "mslp", line)?,
            vsby: parse_missing_f64(&row[9], "vsby", line)?,
            p01i: parse_missing_f64(&row[10], "p01i", line)?,
        };
        record.validate().map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("line {line}: {msg}")),
            other => other,
        })?;
        records.push(record);
    }
    Ok(records)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "M".to_string(), |x| format!("{x}"))
}

/// Write records in the same dialect `parse_asos_csv` reads.
pub fn write_asos_csv(records: &[WeatherRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", ASOS_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.station,
            r.valid.format(TIMESTAMP_FORMAT),
            fmt_cell(r.tmpf),
            fmt_cell(r.dwpf),
            fmt_cell(r.relh),
            fmt_cell(r.drct),
            fmt_cell(r.sknt),
            fmt_cell(r.alti),
            fmt_cell(r.mslp),
            fmt_cell(r.vsby),
            fmt_cell(r.p01i),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Provenance sidecar stored next to every emitted dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub origin: NaiveDateTime,
    pub station: String,
    pub region_set: RegionSet,
    pub feature_names: Vec<String>,
    pub task: Option<Task>,
    pub threshold: Option<f64>,
    /// Entropy seed drawn for a "none" split, when one was drawn.
    pub recorded_seed: Option<u64>,
    /// Normalization already applied to the stored cells.
    pub normalization: Option<String>,
    /// Normalization to fit on the training split at trial time.
    pub pending_normalization: Option<String>,
}

impl DatasetSidecar {
    pub fn for_dataset(ds: &HourlyDataset) -> Self {
        DatasetSidecar {
            origin: ds.origin,
            station: ds.station.clone(),
            region_set: ds.region_set,
            feature_names: ds.feature_names.clone(),
            task: ds.task,
            threshold: ds.threshold,
            recorded_seed: None,
            normalization: None,
            pending_normalization: None,
        }
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    std::path::PathBuf::from(p)
}

/// Write a dataset as CSV plus its JSON provenance sidecar.
pub fn write_dataset(ds: &HourlyDataset, path: &Path, sidecar: &DatasetSidecar) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["valid".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    if ds.targets.is_some() {
        header.push("target".to_string());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, row) in ds.cells.iter().enumerate() {
        let ts = ds.origin + chrono::Duration::hours(ds.hours[i]);
        let mut fields = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
        fields.extend(row.iter().map(|&v| fmt_cell(v)));
        if let Some(targets) = &ds.targets {
            fields.push(format!("{}", targets[i]));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;

    let meta = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(BufWriter::new(meta), sidecar)?;
    Ok(())
}

/// Read a dataset CSV and its sidecar back.
pub fn read_dataset(path: &Path) -> Result<(HourlyDataset, DatasetSidecar)> {
    let meta_file = File::open(sidecar_path(path)).map_err(|e| {
        Error::Validation(format!(
            "missing sidecar {} ({e})",
            sidecar_path(path).display()
        ))
    })?;
    let sidecar: DatasetSidecar = serde_json::from_reader(BufReader::new(meta_file))?;

    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let has_target = headers.last().map(String::as_str) == Some("target");
    let feature_count = headers.len() - 1 - usize::from(has_target);
    let feature_names: Vec<String> = headers[1..1 + feature_count].to_vec();
    if feature_names != sidecar.feature_names {
        return Err(Error::Validation(
            "dataset columns do not match sidecar feature names".into(),
        ));
    }

    let mut hours = Vec::new();
    let mut cells = Vec::new();
    let mut targets = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let ts = NaiveDateTime::parse_from_str(row[0].trim(), TIMESTAMP_FORMAT).map_err(|e| {
            Error::Parse {
                line,
                message: format!("bad timestamp '{}': {e}", &row[0]),
            }
        })?;
        hours.push((ts - sidecar.origin).num_seconds().div_euclid(3600));
        let mut cell_row = Vec::with_capacity(feature_count);
        for (j, name) in feature_names.iter().enumerate() {
            cell_row.push(parse_missing_f64(&row[1 + j], name, line)?);
        }
        cells.push(cell_row);
        if has_target {
            let t = row[1 + feature_count].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad target '{}'", &row[1 + feature_count]),
            })?;
            targets.push(t);
        }
    }

    let primary_p01i = feature_names
        .iter()
        .position(|n| n == "p01i")
        .ok_or_else(|| Error::Validation("dataset lacks a primary p01i column".into()))?;

    Ok((
        HourlyDataset {
            origin: sidecar.origin,
            station: sidecar.station.clone(),
            feature_names,
            hours,
            cells,
            targets: if has_target { Some(targets) } else { None },
            task: sidecar.task,
            threshold: sidecar.threshold,
            region_set: sidecar.region_set,
            primary_p01i,
        },
        sidecar,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_rows_with_missing_markers() {
        let f = write_tmp(
            "station,valid,tmpf,dwpf,relh,drct,sknt,alti,mslp,vsby,p01i\n\
             ROC,2010-01-01 00:54,33.1,30.0,88.5,180,6,29.9,1013.2,10,0.01\n\
             ROC,2010-01-01 01:54,M,30.2,87.0,190,7,29.91,1013.0,10,\n\
             ROC,2010-01-01 02:54,32.0,29.8,86.0,200,8,29.92,1012.8,10,0\n",
        );
        let recs = parse_asos_csv(f.path()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].tmpf, Some(33.1));
        assert_eq!(recs[1].tmpf, None);
        assert_eq!(recs[1].p01i, None);
        assert_eq!(recs[2].tmpf, Some(32.0));
    }

    #[test]
    fn header_only_file_gives_empty_list() {
        let f = write_tmp("station,valid,tmpf,dwpf,relh,drct,sknt,alti,mslp,vsby,p01i\n");
        assert!(parse_asos_csv(f.path()).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_relh_is_rejected() {
        let f = write_tmp(
            "station,valid,tmpf,dwpf,relh,drct,sknt,alti,mslp,vsby,p01i\n\
             ROC,2010-01-01 00:54,33.1,30.0,120,180,6,29.9,1013.2,10,0.01\n",
        );
        assert!(matches!(
            parse_asos_csv(f.path()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn bad_timestamp_names_line() {
        let f = write_tmp(
            "station,valid,tmpf,dwpf,relh,drct,sknt,alti,mslp,vsby,p01i\n\
             ROC,2010-01-01 00:54,33.1,30.0,88,180,6,29.9,1013.2,10,0.01\n\
             ROC,not-a-time,33.1,30.0,88,180,6,29.9,1013.2,10,0.01\n",
        );
        match parse_asos_csv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_names_line() {
        let f = write_tmp(
            "station,valid,tmpf,dwpf,relh,drct,sknt,alti,mslp,vsby,p01i\n\
             ROC,2010-01-01 00:54,abc,30.0,88,180,6,29.9,1013.2,10,0.01\n",
        );
        match parse_asos_csv(f.path()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("tmpf"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn records_round_trip_through_csv() {
        let f = write_tmp(
            "station,valid,tmpf,dwpf,relh,drct,sknt,alti,mslp,vsby,p01i\n\
             ROC,2010-01-01 00:54,33.1,30.0,88.5,180,6,29.9,1013.2,10,0.01\n\
             ROC,2010-01-01 01:54,M,30.2,87.0,190,7,29.91,1013.0,10,M\n",
        );
        let recs = parse_asos_csv(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_asos_csv(&recs, out.path()).unwrap();
        let again = parse_asos_csv(out.path()).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn dataset_round_trips_with_sidecar() {
        let f = write_tmp(
            "station,valid,tmpf,dwpf,relh,drct,sknt,alti,mslp,vsby,p01i\n\
             ROC,2010-01-01 00:54,33.1,30.0,88.5,180,6,29.9,1013.2,10,0.01\n\
             ROC,2010-01-01 01:54,34.0,30.2,87.0,190,7,29.91,1013.0,10,0.05\n\
             ROC,2010-01-01 02:54,32.0,29.8,86.0,200,8,29.92,1012.8,10,0\n",
        );
        let recs = parse_asos_csv(f.path()).unwrap();
        let ds = crate::data::make_targets(
            &crate::data::impute(&crate::data::group_hourly(&recs).unwrap()).unwrap(),
            Task::Regression,
            0.01,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let sidecar = DatasetSidecar::for_dataset(&ds);
        write_dataset(&ds, &path, &sidecar).unwrap();
        let (back, meta) = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(meta, sidecar);
    }
}
