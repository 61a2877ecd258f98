use rayon::prelude::*;

use super::{
    run_synthetic, ExperimentConfig, ExperimentReport, RunOptions, RunRecord, ScoredRun,
    ThresholdRecord,
};
use crate::error::{Result, SgklError};

/// Centered 3-point moving average, truncated at the ends.
pub fn smooth3(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(v.len() - 1);
            v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Largest `k` where the smoothed joint error is no larger than the smoothed
/// individual error, or 0 when there is none.
pub fn threshold_k(ks: &[usize], joint: &[f64], individual: &[f64]) -> usize {
    let (j, i) = (smooth3(joint), smooth3(individual));
    ks.iter()
        .zip(j.iter().zip(&i))
        .filter(|(_, (a, b))| a <= b)
        .map(|(k, _)| *k)
        .max()
        .unwrap_or(0)
}

fn with_signals(base: &ExperimentConfig, k: usize, delta: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    for g in &mut cfg.synthetic.graphs {
        g.signals = k;
    }
    cfg.synthetic.perturbation = delta;
    cfg
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Compares learning on graph 1 alone with learning on both graphs, where
/// graph 2's kernels deviate from graph 1's by `delta`. The error is always
/// measured on graph 1. `ks` should be increasing.
pub fn run_joint_vs_individual(
    deltas: &[f64],
    ks: &[usize],
    base: &ExperimentConfig,
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<ExperimentReport> {
    if base.synthetic.graphs.len() != 2 {
        return Err(SgklError::InvalidParameter(
            "the joint study needs exactly two graphs".into(),
        ));
    }
    if ks.is_empty() || seeds.is_empty() || deltas.is_empty() {
        return Ok(ExperimentReport::default());
    }
    // graph 1 data does not depend on delta, so individual fits are shared
    let individual_cells: Vec<(usize, u64)> = ks
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let joint_cells: Vec<(f64, usize, u64)> = deltas
        .iter()
        .flat_map(|&d| individual_cells.iter().map(move |&(k, s)| (d, k, s)))
        .collect();
    let pool = opts.pool()?;
    let (individual, joint) = pool.install(|| -> Result<(Vec<ScoredRun>, Vec<ScoredRun>)> {
        let individual = individual_cells
            .par_iter()
            .map(|&(k, seed)| {
                log::info!("individual K={k} seed {seed}");
                run_synthetic(&with_signals(base, k, 0.0), seed, Some(&[0]), opts.timing)
            })
            .collect::<Result<Vec<_>>>()?;
        let joint = joint_cells
            .par_iter()
            .map(|&(d, k, seed)| {
                log::info!("joint delta={d} K={k} seed {seed}");
                run_synthetic(&with_signals(base, k, d), seed, None, opts.timing)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((individual, joint))
    })?;

    let record = |regime: &str, delta: f64, k: usize, seed: u64, run: &ScoredRun| RunRecord {
        experiment: "joint_vs_individual".into(),
        parameter: "delta".into(),
        value: delta,
        regime: regime.into(),
        k,
        seed,
        graph: 0,
        nmse: run.scores[0].nmse,
        baseline_nmse: run.scores[0].baseline_nmse,
        objective: run.objective,
        outer_iterations: run.outer_iterations,
        runtime_s: run.runtime_s,
        config_hash: run.config_hash.clone(),
    };
    let mut report = ExperimentReport::default();
    let n = individual_cells.len();
    for (di, &delta) in deltas.iter().enumerate() {
        for (ci, &(k, seed)) in individual_cells.iter().enumerate() {
            report
                .records
                .push(record("joint", delta, k, seed, &joint[di * n + ci]));
            report
                .records
                .push(record("individual", delta, k, seed, &individual[ci]));
        }
        let curve = |runs: &[ScoredRun]| -> Vec<f64> {
            ks.iter()
                .enumerate()
                .map(|(ki, _)| {
                    mean((0..seeds.len()).map(|si| runs[ki * seeds.len() + si].scores[0].nmse))
                })
                .collect()
        };
        let joint_curve = curve(&joint[di * n..(di + 1) * n]);
        let individual_curve = curve(&individual);
        report.thresholds.push(ThresholdRecord {
            experiment: "joint_vs_individual".into(),
            delta,
            threshold_k: threshold_k(ks, &joint_curve, &individual_curve),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing() {
        assert_eq!(smooth3(&[3.0, 0.0, 3.0, 6.0]), vec![1.5, 2.0, 3.0, 4.5]);
        assert_eq!(smooth3(&[2.0]), vec![2.0]);
    }

    #[test]
    fn threshold_extraction() {
        let ks = [5, 10, 20, 40];
        assert_eq!(
            threshold_k(&ks, &[0.1, 0.1, 0.1, 0.1], &[0.2, 0.2, 0.2, 0.2]),
            40
        );
        assert_eq!(
            threshold_k(&ks, &[0.3, 0.3, 0.3, 0.3], &[0.2, 0.2, 0.2, 0.2]),
            0
        );
        assert_eq!(
            threshold_k(&ks, &[0.1, 0.1, 0.3, 0.3], &[0.2, 0.2, 0.2, 0.2]),
            10
        );
    }

    #[test]
    fn needs_two_graphs() {
        let mut cfg = ExperimentConfig::default();
        cfg.synthetic.graphs.pop();
        assert!(run_joint_vs_individual(&[0.0], &[5], &cfg, &[0], &RunOptions::default()).is_err());
    }
}
