//! Report emission: the full per-trial CSV (re-parseable to equal
//! reports), per-family best-2 markdown tables, and the JSON sidecar
//! that makes every trial re-runnable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::grid::{ExperimentGrid, Family, FormRecord};
use crate::metrics::{ClassificationEval, EvalReport, MetricValue, Provenance, RegressionEval, TaskEval};

const CSV_HEADER: &str = "task,family,dataset,normalization,scope,split_mode,requested_seed,\
drawn_seed,model_seed,parameter,accuracy,r2,mse,rmse,pcc,flags,error";

fn metric_cell(v: &MetricValue) -> String {
    v.to_string()
}

fn opt_cell(v: Option<u64>) -> String {
    v.map_or_else(String::new, |s| s.to_string())
}

/// Render reports as the per-trial CSV.
pub fn csv_string(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let p = &r.provenance;
        let (accuracy, r2, mse, rmse, pcc, error) = match &r.eval {
            TaskEval::Classification(c) => (
                format!("{}", c.accuracy),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ),
            TaskEval::Regression(e) => (
                String::new(),
                metric_cell(&e.r2),
                format!("{}", e.mse),
                format!("{}", e.rmse),
                metric_cell(&e.pcc),
                String::new(),
            ),
            TaskEval::Failed { message } => (
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                message.replace([',', '\n'], ";"),
            ),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            p.task,
            p.family,
            p.dataset,
            p.normalization,
            p.scope,
            p.split_mode,
            p.requested_seed,
            opt_cell(p.drawn_seed),
            opt_cell(p.model_seed),
            p.parameter,
            accuracy,
            r2,
            mse,
            rmse,
            pcc,
            p.flags.join(";"),
            error,
        ));
    }
    out
}

pub fn write_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(csv_string(reports).as_bytes())?;
    f.flush()?;
    Ok(())
}

fn parse_metric(cell: &str, line: u64) -> Result<MetricValue> {
    if cell == "invalid" {
        Ok(MetricValue::Invalid)
    } else {
        cell.parse::<f64>()
            .map(MetricValue::Valid)
            .map_err(|_| Error::Parse {
                line,
                message: format!("bad metric value '{cell}'"),
            })
    }
}

fn parse_opt_u64(cell: &str, line: u64) -> Result<Option<u64>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        cell.parse::<u64>().map(Some).map_err(|_| Error::Parse {
            line,
            message: format!("bad seed '{cell}'"),
        })
    }
}

/// Parse a per-trial CSV back into reports.
pub fn read_csv(path: &Path) -> Result<Vec<EvalReport>> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let mut reports = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let provenance = Provenance {
            task: field(0),
            family: field(1),
            dataset: field(2),
            normalization: field(3),
            scope: field(4),
            split_mode: field(5),
            requested_seed: field(6),
            drawn_seed: parse_opt_u64(&field(7), line)?,
            model_seed: parse_opt_u64(&field(8), line)?,
            parameter: field(9),
            flags: if field(15).is_empty() {
                Vec::new()
            } else {
                field(15).split(';').map(str::to_string).collect()
            },
        };
        let eval = if !field(16).is_empty() {
            TaskEval::Failed { message: field(16) }
        } else if !field(10).is_empty() {
            TaskEval::Classification(ClassificationEval {
                accuracy: field(10).parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad accuracy '{}'", field(10)),
                })?,
            })
        } else {
            TaskEval::Regression(RegressionEval {
                r2: parse_metric(&field(11), line)?,
                mse: field(12).parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad mse '{}'", field(12)),
                })?,
                rmse: field(13).parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad rmse '{}'", field(13)),
                })?,
                pcc: parse_metric(&field(14), line)?,
            })
        };
        reports.push(EvalReport { provenance, eval });
    }
    Ok(reports)
}

/// Ranking score: accuracy for classifiers, R² for regressors; invalid
/// metrics and failed trials sink to the bottom.
fn score(report: &EvalReport) -> f64 {
    match &report.eval {
        TaskEval::Classification(c) => c.accuracy,
        TaskEval::Regression(e) => e.r2.value().unwrap_or(f64::NEG_INFINITY),
        TaskEval::Failed { .. } => f64::NEG_INFINITY,
    }
}

/// Top `n` rows of a family within one dataset group, by primary metric.
fn top_n<'a>(rows: &[&'a EvalReport], n: usize) -> Vec<&'a EvalReport> {
    let mut sorted: Vec<&EvalReport> = rows.to_vec();
    sorted.sort_by(|a, b| {
        score(b)
            .partial_cmp(&score(a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.truncate(n);
    sorted
}

fn fmt9(v: f64) -> String {
    format!("{v:.9}")
}

fn regression_cells(e: &RegressionEval) -> String {
    let r2 = match e.r2 {
        MetricValue::Valid(v) => fmt9(v),
        MetricValue::Invalid => "invalid".into(),
    };
    let pcc = match e.pcc {
        MetricValue::Valid(v) => fmt9(v),
        MetricValue::Invalid => "invalid".into(),
    };
    format!("{r2} | {} | {} | {pcc}", fmt9(e.mse), fmt9(e.rmse))
}

/// Per-family best-2 tables in markdown, mirroring the paper's report
/// layout (two rows per dataset group, ranked by the primary metric).
pub fn markdown_string(reports: &[EvalReport]) -> String {
    let mut out = String::from("# Experiment report\n");
    for task in ["classification", "regression"] {
        let task_rows: Vec<&EvalReport> = reports
            .iter()
            .filter(|r| r.provenance.task == task)
            .collect();
        if task_rows.is_empty() {
            continue;
        }
        out.push_str(&format!("\n## {task}\n"));
        let families = [
            Family::Knn,
            Family::Linear,
            Family::Rcc,
            Family::Svm,
            Family::Svr,
            Family::Dnn,
            Family::Wnn,
            Family::Dwnn,
            Family::Lstm,
            Family::BiLstm,
            Family::Gru,
        ];
        for family in families {
            let name = family.to_string();
            let rows: Vec<&EvalReport> = task_rows
                .iter()
                .copied()
                .filter(|r| {
                    r.provenance.family == name && !matches!(r.eval, TaskEval::Failed { .. })
                })
                .collect();
            if rows.is_empty() {
                continue;
            }
            out.push_str(&format!("\n### Top 2 best metric performers: {name}\n\n"));
            if task == "classification" {
                out.push_str("| Dataset | Normalization | Random | Parameter | Accuracy |\n");
                out.push_str("|---|---|---|---|---|\n");
            } else {
                out.push_str(
                    "| Dataset | Normalization | Random | Parameter | R2 | MSE | RMSE | Pcc |\n",
                );
                out.push_str("|---|---|---|---|---|---|---|---|\n");
            }
            for dataset in ["mixed", "single"] {
                let group: Vec<&EvalReport> = rows
                    .iter()
                    .copied()
                    .filter(|r| r.provenance.dataset == dataset)
                    .collect();
                for r in top_n(&group, 2) {
                    let p = &r.provenance;
                    match &r.eval {
                        TaskEval::Classification(c) => out.push_str(&format!(
                            "| {} | {} | {} | {} | {} |\n",
                            p.dataset,
                            p.normalization,
                            p.requested_seed,
                            p.parameter,
                            fmt9(c.accuracy)
                        )),
                        TaskEval::Regression(e) => out.push_str(&format!(
                            "| {} | {} | {} | {} | {} |\n",
                            p.dataset,
                            p.normalization,
                            p.requested_seed,
                            p.parameter,
                            regression_cells(e)
                        )),
                        TaskEval::Failed { .. } => {}
                    }
                }
            }
        }
    }
    out
}

pub fn write_markdown(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(markdown_string(reports).as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Everything needed to replay the run: grid settings plus the per-form
/// split seeds and fitted normalizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSidecar {
    pub grid: ExperimentGrid,
    pub forms: Vec<FormRecord>,
}

pub fn write_sidecar(grid: &ExperimentGrid, forms: &[FormRecord], path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(
        f,
        &RunSidecar {
            grid: grid.clone(),
            forms: forms.to_vec(),
        },
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ClassificationEval, RegressionEval};

    fn sample_reports() -> Vec<EvalReport> {
        let mut base = Provenance {
            task: "classification".into(),
            family: "knn".into(),
            dataset: "mixed".into(),
            normalization: "zscore".into(),
            scope: "train".into(),
            split_mode: "shuffled".into(),
            requested_seed: "none".into(),
            drawn_seed: Some(123456789),
            model_seed: None,
            parameter: "k=11".into(),
            flags: vec![],
        };
        let a = EvalReport {
            provenance: base.clone(),
            eval: TaskEval::Classification(ClassificationEval { accuracy: 0.9634 }),
        };
        base.task = "regression".into();
        base.family = "svr".into();
        base.parameter = "kernel=sigmoid".into();
        base.flags = vec!["not_converged".into()];
        let b = EvalReport {
            provenance: base.clone(),
            eval: TaskEval::Regression(RegressionEval {
                r2: MetricValue::Invalid,
                mse: 0.012855096,
                rmse: 0.113380316,
                pcc: MetricValue::Valid(0.168736666),
            }),
        };
        base.family = "linear".into();
        base.parameter = "n/a".into();
        base.flags = vec![];
        let c = EvalReport {
            provenance: base,
            eval: TaskEval::Failed {
                message: "singular linear system: pivot".into(),
            },
        };
        vec![a, b, c]
    }

    #[test]
    fn csv_round_trips_to_equal_reports() {
        let reports = sample_reports();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.csv");
        write_csv(&reports, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, reports);
    }

    #[test]
    fn invalid_metrics_print_literally_and_rank_last() {
        let mut reports = sample_reports();
        // add a valid regression row that must outrank the invalid one
        let mut p = reports[1].provenance.clone();
        p.parameter = "kernel=rbf".into();
        reports.push(EvalReport {
            provenance: p,
            eval: TaskEval::Regression(RegressionEval {
                r2: MetricValue::Valid(0.051143241),
                mse: 0.013033322,
                rmse: 0.114163574,
                pcc: MetricValue::Valid(0.314971336),
            }),
        });
        let md = markdown_string(&reports);
        assert!(md.contains("invalid"));
        let rbf = md.find("kernel=rbf").unwrap();
        let sigmoid = md.find("kernel=sigmoid").unwrap();
        assert!(rbf < sigmoid, "valid row must rank above invalid");
    }

    #[test]
    fn failed_rows_stay_out_of_tables() {
        let md = markdown_string(&sample_reports());
        assert!(!md.contains("singular"));
    }

    #[test]
    fn one_table_per_family() {
        let md = markdown_string(&sample_reports());
        assert_eq!(md.matches("### Top 2 best metric performers").count(), 2);
    }
}
