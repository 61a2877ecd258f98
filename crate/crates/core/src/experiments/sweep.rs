use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_synthetic, ExperimentConfig, ExperimentReport, RunOptions, RunRecord};
use crate::error::{Result, SgklError};

/// Parameter varied by a sensitivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// SNR of the generated data in dB.
    Snr,
    /// Number of learned kernels.
    J,
    EtaS,
    EtaX,
    EtaW,
    EtaY,
    EtaC,
}

impl std::str::FromStr for SweepParameter {
    type Err = SgklError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "snr" => SweepParameter::Snr,
            "J" | "j" => SweepParameter::J,
            "eta_s" => SweepParameter::EtaS,
            "eta_x" => SweepParameter::EtaX,
            "eta_w" => SweepParameter::EtaW,
            "eta_y" => SweepParameter::EtaY,
            "eta_c" => SweepParameter::EtaC,
            other => {
                return Err(SgklError::InvalidParameter(format!(
                    "unknown sweep parameter {other:?} (snr, J, eta_s, eta_x, eta_w, eta_y, eta_c)"
                )))
            }
        })
    }
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Snr => "snr",
            SweepParameter::J => "J",
            SweepParameter::EtaS => "eta_s",
            SweepParameter::EtaX => "eta_x",
            SweepParameter::EtaW => "eta_w",
            SweepParameter::EtaY => "eta_y",
            SweepParameter::EtaC => "eta_c",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let w = &mut cfg.sgkl.weights;
        match self {
            SweepParameter::Snr => cfg.synthetic.snr_db = Some(value),
            SweepParameter::J => {
                if !(value >= 1.0) || value.fract() != 0.0 {
                    return Err(SgklError::InvalidParameter(format!(
                        "J must be a positive integer, got {value}"
                    )));
                }
                cfg.sgkl.num_kernels = value as usize;
            }
            SweepParameter::EtaS => w.eta_s = value,
            SweepParameter::EtaX => w.eta_x = value,
            SweepParameter::EtaW => w.eta_w = value,
            SweepParameter::EtaY => w.eta_y = value,
            SweepParameter::EtaC => w.eta_c = value,
        }
        cfg.sgkl.validate()?;
        cfg.synthetic.validate()?;
        Ok(cfg)
    }
}

/// Fits and scores every (grid value, seed) cell. Rows come out in grid
/// order, then seed order, then graph order.
pub fn run_sensitivity_sweep(
    parameter: SweepParameter,
    grid: &[f64],
    base: &ExperimentConfig,
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<ExperimentReport> {
    let cells: Vec<(f64, ExperimentConfig, u64)> = grid
        .iter()
        .map(|&v| parameter.apply(base, v).map(|cfg| (v, cfg, 0)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flat_map(|(v, cfg, _)| seeds.iter().map(move |&s| (v, cfg.clone(), s)))
        .collect();
    let runs = opts.pool()?.install(|| {
        cells
            .par_iter()
            .map(|(v, cfg, seed)| {
                log::info!("sweep {}={v} seed {seed}", parameter.name());
                run_synthetic(cfg, *seed, None, opts.timing)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut report = ExperimentReport::default();
    for ((value, cfg, seed), run) in cells.iter().zip(runs) {
        for (graph, s) in run.scores.iter().enumerate() {
            report.records.push(RunRecord {
                experiment: "sweep".into(),
                parameter: parameter.name().into(),
                value: *value,
                regime: "sgkl".into(),
                k: cfg.synthetic.graphs[graph].signals,
                seed: *seed,
                graph,
                nmse: s.nmse,
                baseline_nmse: s.baseline_nmse,
                objective: run.objective,
                outer_iterations: run.outer_iterations,
                runtime_s: run.runtime_s,
                config_hash: run.config_hash.clone(),
            });
        }
    }
    Ok(report)
}
