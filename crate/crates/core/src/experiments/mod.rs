//! Synthetic data, scoring and the experiment drivers behind the CLI.

pub mod joint;
pub mod masking;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod synthetic;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SgklError};
use crate::learner::{fit, SgklConfig, SgklModel, TracePoint};

pub use joint::{run_joint_vs_individual, smooth3, threshold_k};
pub use masking::apply_mask;
pub use metrics::{mean_fill, nmse};
pub use report::{
    emit_report, read_report, write_report, ExperimentReport, ReportFormat, RunRecord,
    ThresholdRecord,
};
pub use sweep::{run_sensitivity_sweep, SweepParameter};
pub use synthetic::{generate_synthetic, GraphSpec, GroundTruthPsi, SyntheticData, SyntheticSpec};

/// Learner settings plus the synthetic data they are run on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sgkl: SgklConfig,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Concurrent grid cells.
    pub jobs: usize,
    /// Record wall-clock time per run; off gives byte-identical reports.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            timing: true,
        }
    }
}

impl RunOptions {
    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| SgklError::InvalidParameter(format!("cannot start worker pool: {e}")))
    }
}

/// Short hex digest of a serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("configuration serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// NMSE of a fit and of the mean-fill baseline on one graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphScore {
    pub nmse: f64,
    pub baseline_nmse: f64,
}

/// Scores every graph of `model` against the clean signals of `data`.
pub fn score(model: &SgklModel, data: &SyntheticData) -> Result<Vec<GraphScore>> {
    data.graphs
        .iter()
        .zip(&model.graphs)
        .map(|(truth, g)| {
            let masks = truth.observed.masks();
            Ok(GraphScore {
                nmse: nmse(&truth.clean, &g.reconstruction(), masks)?,
                baseline_nmse: nmse(&truth.clean, &mean_fill(&truth.observed), masks)?,
            })
        })
        .collect()
}

/// A fitted and scored synthetic instance.
#[derive(Debug, Clone)]
pub struct ScoredRun {
    pub scores: Vec<GraphScore>,
    pub objective: f64,
    pub outer_iterations: usize,
    pub runtime_s: f64,
    pub config_hash: String,
    pub trace: Vec<TracePoint>,
}

/// Generates data with `seed`, fits on the graphs selected by `graphs`
/// (all when `None`) and scores them.
pub fn run_synthetic(
    cfg: &ExperimentConfig,
    seed: u64,
    graphs: Option<&[usize]>,
    timing: bool,
) -> Result<ScoredRun> {
    let mut cfg = cfg.clone();
    cfg.synthetic.seed = seed;
    cfg.sgkl.seed = seed;
    let hash = config_hash(&(&cfg, graphs));
    let start = Instant::now();
    let mut data = generate_synthetic(&cfg.synthetic)?;
    if let Some(sel) = graphs {
        data.graphs =
            sel.iter()
                .map(|&m| {
                    data.graphs.get(m).cloned().ok_or_else(|| {
                        SgklError::InvalidParameter(format!("graph {m} not generated"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
    }
    let model = fit(&data.datasets(), &cfg.sgkl)?;
    let scores = score(&model, &data)?;
    let runtime_s = if timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Ok(ScoredRun {
        scores,
        objective: model.trace.last().map_or(f64::NAN, |t| t.objective),
        outer_iterations: model.diagnostics.outer_iterations,
        runtime_s,
        config_hash: hash,
        trace: model.trace,
    })
}
