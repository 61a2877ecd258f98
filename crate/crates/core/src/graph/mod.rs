//! Node graphs, their normalized Laplacians and spectra, partially observed
//! signal sets, and the auxiliary signal-affinity graph.

mod signal_graph;
mod signals;
mod spectral;

pub use signal_graph::{
    build_signal_graph, median_restricted_distance, GammaPolicy, SignalGraphLaplacian,
    SignalLaplacianKind,
};
pub use signals::ObservedSignalSet;
pub use spectral::{eigendecompose, SpectralDecomposition};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgklError};

/// Weighted undirected graph stored as a dense symmetric weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    weights: DMatrix<f64>,
}

impl Graph {
    /// Validates and wraps a weight matrix. The matrix must be square,
    /// exactly symmetric, nonnegative, zero on the diagonal, and every node
    /// must have positive degree.
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(SgklError::InvalidGraph(format!(
                "weight matrix must be square and non-empty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(SgklError::InvalidGraph(format!(
                    "nonzero diagonal at node {i}"
                )));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(SgklError::InvalidGraph(format!(
                        "weight ({i},{j}) = {w} is not a nonnegative finite number"
                    )));
                }
                if w != weights[(j, i)] {
                    return Err(SgklError::NotSymmetric((w - weights[(j, i)]).abs()));
                }
            }
        }
        for (i, d) in weights.row_sum().iter().enumerate() {
            if *d <= 0.0 {
                return Err(SgklError::IsolatedNode(i));
            }
        }
        Ok(Self { weights })
    }

    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.weights.row_sum().iter().copied().collect()
    }

    /// Number of undirected edges with positive weight.
    pub fn edge_count(&self) -> usize {
        let n = self.node_count();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.weights[(i, j)] > 0.0)
            .count()
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && self.weights[(i, j)] > 0.0 {
                    *s = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds a k-nearest-neighbor graph over `coords` with Gaussian weights
/// `exp(-‖p_i - p_j‖² / scale²)`. Edges are symmetrized by union. Ties in
/// distance are broken by node index.
pub fn build_knn_graph(coords: &[Vec<f64>], k: usize, scale: f64) -> Result<Graph> {
    let n = coords.len();
    if k == 0 {
        return Err(SgklError::InvalidParameter("k must be at least 1".into()));
    }
    if k >= n {
        return Err(SgklError::KTooLarge { k, n });
    }
    if !(scale > 0.0) {
        return Err(SgklError::InvalidParameter(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let dim = coords[0].len();
    if coords.iter().any(|c| c.len() != dim) {
        return Err(SgklError::ShapeMismatch(
            "coordinates have mixed dimensions".into(),
        ));
    }

    let sq_dist =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut weights = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(&coords[i], &coords[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d2, j) in others.iter().take(k) {
            let w = (-d2 / (scale * scale)).exp();
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }
    // a scale far below the neighbor distances underflows to zero weight and
    // surfaces here as an isolated node
    Graph::new(weights)
}

/// Symmetric normalized Laplacian `Γ^{-1/2}(Γ - W)Γ^{-1/2}`.
pub fn normalized_laplacian(g: &Graph) -> Result<DMatrix<f64>> {
    normalized_laplacian_of(g.weights())
}

pub(crate) fn normalized_laplacian_of(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    let degrees = w.row_sum();
    let mut inv_sqrt = Vec::with_capacity(n);
    for (i, d) in degrees.iter().enumerate() {
        if *d <= 0.0 {
            return Err(SgklError::IsolatedNode(i));
        }
        inv_sqrt.push(1.0 / d.sqrt());
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            l[(i, j)] = if i == j {
                1.0
            } else {
                -w[(i, j)] * inv_sqrt[i] * inv_sqrt[j]
            };
        }
    }
    Ok(l)
}
