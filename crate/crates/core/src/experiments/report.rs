use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgklError};

/// One fit scored on one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub parameter: String,
    pub value: f64,
    /// `joint` or `individual` in the joint study, `sgkl` otherwise.
    pub regime: String,
    /// Signals per graph.
    pub k: usize,
    pub seed: u64,
    pub graph: usize,
    pub nmse: f64,
    /// NMSE of the mean-fill baseline on the same masks.
    pub baseline_nmse: f64,
    pub objective: f64,
    pub outer_iterations: usize,
    pub runtime_s: f64,
    /// Hash of the cell's full configuration, seed included.
    pub config_hash: String,
}

/// Largest K at which joint learning is no worse than individual learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub experiment: String,
    pub delta: f64,
    /// 0 when joint learning loses at every K.
    pub threshold_k: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub thresholds: Vec<ThresholdRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = SgklError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(SgklError::InvalidParameter(format!(
                "unknown format {other:?}, expected csv or json"
            ))),
        }
    }
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// Flat long-format row: runs, per-cell aggregates and thresholds share one
/// table and unused columns stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub row_type: String,
    pub experiment: String,
    pub parameter: String,
    pub value: f64,
    pub regime: String,
    pub k: usize,
    pub seed: Option<u64>,
    pub graph: Option<usize>,
    pub runs: Option<usize>,
    pub nmse: Option<f64>,
    pub nmse_std: Option<f64>,
    pub baseline_nmse: Option<f64>,
    pub objective: Option<f64>,
    pub outer_iterations: Option<usize>,
    pub runtime_s: Option<f64>,
    pub config_hash: Option<String>,
}

pub const REPORT_COLUMNS: [&str; 16] = [
    "row_type",
    "experiment",
    "parameter",
    "value",
    "regime",
    "k",
    "seed",
    "graph",
    "runs",
    "nmse",
    "nmse_std",
    "baseline_nmse",
    "objective",
    "outer_iterations",
    "runtime_s",
    "config_hash",
];

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl RunRecord {
    fn cell(&self) -> (&str, &str, u64, &str, usize, usize) {
        (
            &self.experiment,
            &self.parameter,
            self.value.to_bits(),
            &self.regime,
            self.k,
            self.graph,
        )
    }
}

impl ExperimentReport {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty() && self.thresholds.is_empty()
    }

    pub fn extend(&mut self, other: ExperimentReport) {
        self.records.extend(other.records);
        self.thresholds.extend(other.thresholds);
    }

    /// Seed-averaged NMSE per (experiment, parameter, value, regime, k,
    /// graph) cell, in order of first appearance.
    pub fn aggregates(&self) -> Vec<ReportRow> {
        let mut cells: Vec<(_, Vec<&RunRecord>)> = Vec::new();
        for r in &self.records {
            match cells.iter_mut().find(|(key, _)| *key == r.cell()) {
                Some((_, v)) => v.push(r),
                None => cells.push((r.cell(), vec![r])),
            }
        }
        cells
            .into_iter()
            .map(|(_, runs)| {
                let first = runs[0];
                let nmse: Vec<f64> = runs.iter().map(|r| r.nmse).collect();
                let base: Vec<f64> = runs.iter().map(|r| r.baseline_nmse).collect();
                let (mean, std) = mean_std(&nmse);
                ReportRow {
                    row_type: "aggregate".into(),
                    experiment: first.experiment.clone(),
                    parameter: first.parameter.clone(),
                    value: first.value,
                    regime: first.regime.clone(),
                    k: first.k,
                    seed: None,
                    graph: Some(first.graph),
                    runs: Some(runs.len()),
                    nmse: Some(mean),
                    nmse_std: Some(std),
                    baseline_nmse: Some(mean_std(&base).0),
                    objective: None,
                    outer_iterations: None,
                    runtime_s: None,
                    config_hash: None,
                }
            })
            .collect()
    }

    /// All rows: runs, then aggregates, then thresholds.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows: Vec<ReportRow> = self
            .records
            .iter()
            .map(|r| ReportRow {
                row_type: "run".into(),
                experiment: r.experiment.clone(),
                parameter: r.parameter.clone(),
                value: r.value,
                regime: r.regime.clone(),
                k: r.k,
                seed: Some(r.seed),
                graph: Some(r.graph),
                runs: None,
                nmse: Some(r.nmse),
                nmse_std: None,
                baseline_nmse: Some(r.baseline_nmse),
                objective: Some(r.objective),
                outer_iterations: Some(r.outer_iterations),
                runtime_s: Some(r.runtime_s),
                config_hash: Some(r.config_hash.clone()),
            })
            .collect();
        rows.extend(self.aggregates());
        rows.extend(self.thresholds.iter().map(|t| ReportRow {
            row_type: "threshold".into(),
            experiment: t.experiment.clone(),
            parameter: "delta".into(),
            value: t.delta,
            regime: String::new(),
            k: t.threshold_k,
            seed: None,
            graph: Some(0),
            runs: None,
            nmse: None,
            nmse_std: None,
            baseline_nmse: None,
            objective: None,
            outer_iterations: None,
            runtime_s: None,
            config_hash: None,
        }));
        rows
    }

    /// Rebuilds a report from its rows, dropping aggregates.
    pub fn from_rows(rows: &[ReportRow]) -> Result<Self> {
        let mut report = ExperimentReport::default();
        for (i, r) in rows.iter().enumerate() {
            let missing = |what: &str| SgklError::Parse {
                path: String::new(),
                line: i + 2,
                message: format!("run row without {what}"),
            };
            match r.row_type.as_str() {
                "run" => report.records.push(RunRecord {
                    experiment: r.experiment.clone(),
                    parameter: r.parameter.clone(),
                    value: r.value,
                    regime: r.regime.clone(),
                    k: r.k,
                    seed: r.seed.ok_or_else(|| missing("seed"))?,
                    graph: r.graph.ok_or_else(|| missing("graph"))?,
                    nmse: r.nmse.ok_or_else(|| missing("nmse"))?,
                    baseline_nmse: r.baseline_nmse.ok_or_else(|| missing("baseline_nmse"))?,
                    objective: r.objective.ok_or_else(|| missing("objective"))?,
                    outer_iterations: r
                        .outer_iterations
                        .ok_or_else(|| missing("outer_iterations"))?,
                    runtime_s: r.runtime_s.ok_or_else(|| missing("runtime_s"))?,
                    config_hash: r.config_hash.clone().unwrap_or_default(),
                }),
                "threshold" => report.thresholds.push(ThresholdRecord {
                    experiment: r.experiment.clone(),
                    delta: r.value,
                    threshold_k: r.k,
                }),
                "aggregate" => {}
                other => {
                    return Err(SgklError::Parse {
                        path: String::new(),
                        line: i + 2,
                        message: format!("unknown row type {other:?}"),
                    })
                }
            }
        }
        Ok(report)
    }
}

/// Writes the long-format rows. An empty report yields a header-only CSV or
/// an empty JSON array.
pub fn write_report<W: Write>(
    report: &ExperimentReport,
    format: ReportFormat,
    out: W,
) -> Result<()> {
    let rows = report.rows();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(out);
            w.write_record(REPORT_COLUMNS)?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_report(report, format, file)
}

/// Reads rows written by [`emit_report`].
pub fn read_report_rows(path: &Path, format: ReportFormat) -> Result<Vec<ReportRow>> {
    let file = BufReader::new(File::open(path)?);
    let display = path.display().to_string();
    match format {
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(file);
            let mut rows = Vec::new();
            for (i, rec) in rdr.deserialize().enumerate() {
                rows.push(rec.map_err(|e| SgklError::Parse {
                    path: display.clone(),
                    line: i + 2,
                    message: e.to_string(),
                })?);
            }
            Ok(rows)
        }
        ReportFormat::Json => Ok(serde_json::from_reader(file)?),
    }
}

pub fn read_report(path: &Path, format: ReportFormat) -> Result<ExperimentReport> {
    ExperimentReport::from_rows(&read_report_rows(path, format)?).map_err(|e| match e {
        SgklError::Parse { line, message, .. } => SgklError::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}
