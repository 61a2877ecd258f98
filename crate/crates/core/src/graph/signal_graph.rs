use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::signals::ObservedSignalSet;
use crate::error::{Result, SgklError};

/// How the affinity scale γ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    /// Median of the pairwise restricted distances over pairs that share at
    /// least one observed node.
    #[default]
    Median,
    Fixed(f64),
}

/// Which Laplacian of the signal graph enters the coupling term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalLaplacianKind {
    /// `I - Γ^{-1/2} W Γ^{-1/2}`, unit diagonal on non-isolated signals and an
    /// all-zero row for isolated ones.
    #[default]
    Normalized,
    /// `diag(W 1) - W`.
    Combinatorial,
}

/// Affinity graph over signals and its combinatorial Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalGraphLaplacian {
    pub affinity: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub gamma: f64,
}

impl SignalGraphLaplacian {
    pub fn signal_count(&self) -> usize {
        self.affinity.nrows()
    }

    /// The matrix used in the coupling term `tr(X L̆ Xᵀ)`.
    pub fn coupling_matrix(&self, kind: SignalLaplacianKind) -> DMatrix<f64> {
        match kind {
            SignalLaplacianKind::Combinatorial => self.laplacian.clone(),
            SignalLaplacianKind::Normalized => {
                let k = self.signal_count();
                let deg = self.affinity.row_sum();
                let inv: Vec<f64> = deg
                    .iter()
                    .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
                    .collect();
                DMatrix::from_fn(k, k, |i, j| {
                    if i == j {
                        if deg[i] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        -self.affinity[(i, j)] * inv[i] * inv[j]
                    }
                })
            }
        }
    }
}

/// Squared distance between two signals over their common observed nodes,
/// with the common-node count.
fn restricted_sq_distance(obs: &ObservedSignalSet, i: usize, j: usize) -> (f64, usize) {
    let y = obs.values();
    let (mi, mj) = (obs.mask(i), obs.mask(j));
    let mut acc = 0.0;
    let mut common = 0;
    for r in 0..obs.node_count() {
        if mi[r] && mj[r] {
            let d = y[(r, i)] - y[(r, j)];
            acc += d * d;
            common += 1;
        }
    }
    (acc, common)
}

fn pair_sq_distances(
    obs: &ObservedSignalSet,
    normalize_by_overlap: bool,
) -> Vec<(usize, usize, Option<f64>)> {
    let k = obs.signal_count();
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let (d2, q) = restricted_sq_distance(obs, i, j);
            let d2 = if q == 0 {
                None
            } else if normalize_by_overlap {
                Some(d2 / q as f64)
            } else {
                Some(d2)
            };
            out.push((i, j, d2));
        }
    }
    out
}

/// Median of the restricted pairwise distances. Falls back to 1 when no pair
/// overlaps or all distances vanish.
pub fn median_restricted_distance(obs: &ObservedSignalSet, normalize_by_overlap: bool) -> f64 {
    let mut d: Vec<f64> = pair_sq_distances(obs, normalize_by_overlap)
        .into_iter()
        .filter_map(|(_, _, d2)| d2.map(f64::sqrt))
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

impl GammaPolicy {
    pub fn resolve(&self, obs: &ObservedSignalSet, normalize_by_overlap: bool) -> Result<f64> {
        match *self {
            GammaPolicy::Median => Ok(median_restricted_distance(obs, normalize_by_overlap)),
            GammaPolicy::Fixed(g) if g > 0.0 => Ok(g),
            GammaPolicy::Fixed(g) => Err(SgklError::InvalidParameter(format!(
                "gamma must be positive, got {g}"
            ))),
        }
    }
}

/// Builds the signal affinity graph: `W̆_ij = exp(-‖y_i[Q] - y_j[Q]‖² / γ²)`
/// over the common observed nodes `Q`, and zero when `Q` is empty.
pub fn build_signal_graph(
    obs: &ObservedSignalSet,
    gamma: f64,
    normalize_by_overlap: bool,
) -> Result<SignalGraphLaplacian> {
    if !(gamma > 0.0) {
        return Err(SgklError::InvalidParameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let k = obs.signal_count();
    let mut affinity = DMatrix::<f64>::zeros(k, k);
    for (i, j, d2) in pair_sq_distances(obs, normalize_by_overlap) {
        if let Some(d2) = d2 {
            let w = (-d2 / (gamma * gamma)).exp();
            affinity[(i, j)] = w;
            affinity[(j, i)] = w;
        }
    }
    let deg = affinity.row_sum();
    let mut laplacian = -affinity.clone();
    for i in 0..k {
        laplacian[(i, i)] = deg[i];
    }
    Ok(SignalGraphLaplacian {
        affinity,
        laplacian,
        gamma,
    })
}
