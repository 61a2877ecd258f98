use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::masking::apply_mask;
use crate::dictionary::{build_dictionary, KernelParamVector, S_MIN};
use crate::error::{Result, SgklError};
use crate::graph::{
    build_knn_graph, eigendecompose, normalized_laplacian, Graph, ObservedSignalSet,
};
use crate::learner::GraphDataset;

/// Random-geometric graph and signal count for one synthetic graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: usize,
    pub knn: usize,
    pub signals: usize,
}

/// Ground-truth kernel parameters, given or drawn once from normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroundTruthPsi {
    Fixed {
        psi: KernelParamVector,
    },
    Random {
        mu_mean: f64,
        mu_std: f64,
        s_mean: f64,
        s_std: f64,
    },
}

impl Default for GroundTruthPsi {
    fn default() -> Self {
        GroundTruthPsi::Random {
            mu_mean: 0.2,
            mu_std: 0.1,
            s_mean: 0.4,
            s_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub graphs: Vec<GraphSpec>,
    /// Kernel count of the generating dictionary.
    pub num_kernels: usize,
    pub psi: GroundTruthPsi,
    /// Nonzero coefficients per signal.
    pub sparsity: usize,
    /// Standard deviation of the nonzero coefficients.
    pub coefficient_scale: f64,
    /// Target SNR in dB; `None` together with `noise_sigma = None` turns
    /// noise off.
    pub snr_db: Option<f64>,
    /// Absolute noise level, used when `snr_db` is absent.
    pub noise_sigma: Option<f64>,
    pub missing_ratio: f64,
    /// Gaussian edge-weight scale as a multiple of the mean distance to the
    /// k-th neighbour.
    pub edge_scale: f64,
    /// Norm of the deviation of the kernel parameters of graphs 2.. from
    /// those of graph 1.
    pub perturbation: f64,
    /// Seeds the graphs and the ground-truth kernels, kept fixed across runs.
    pub structure_seed: u64,
    /// Seeds coefficients, noise, masks and the perturbation direction.
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            graphs: vec![
                GraphSpec {
                    nodes: 100,
                    knn: 10,
                    signals: 200,
                },
                GraphSpec {
                    nodes: 100,
                    knn: 10,
                    signals: 400,
                },
            ],
            num_kernels: 4,
            psi: GroundTruthPsi::default(),
            sparsity: 40,
            coefficient_scale: 1.0,
            snr_db: Some(15.0),
            noise_sigma: None,
            missing_ratio: 0.2,
            edge_scale: 1.0,
            perturbation: 0.0,
            structure_seed: 0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.graphs.is_empty() || self.num_kernels == 0 {
            return Err(SgklError::InvalidParameter(
                "need at least one graph and one kernel".into(),
            ));
        }
        for g in &self.graphs {
            if g.nodes < 2 || g.knn == 0 || g.knn >= g.nodes || g.signals == 0 {
                return Err(SgklError::InvalidParameter(format!(
                    "invalid graph spec {g:?}"
                )));
            }
            if self.sparsity > self.num_kernels * g.nodes {
                return Err(SgklError::InvalidParameter(format!(
                    "sparsity {} exceeds {} atoms",
                    self.sparsity,
                    self.num_kernels * g.nodes
                )));
            }
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(SgklError::InvalidParameter("snr_db must be finite".into()));
            }
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(SgklError::InvalidParameter(
                    "noise_sigma must be nonnegative".into(),
                ));
            }
        }
        if !(self.edge_scale > 0.0) || !self.edge_scale.is_finite() {
            return Err(SgklError::InvalidParameter(
                "edge_scale must be positive".into(),
            ));
        }
        if !(self.coefficient_scale > 0.0) || !self.coefficient_scale.is_finite() {
            return Err(SgklError::InvalidParameter(
                "coefficient_scale must be positive".into(),
            ));
        }
        if !(self.perturbation >= 0.0) || !self.perturbation.is_finite() {
            return Err(SgklError::InvalidParameter(
                "perturbation must be nonnegative".into(),
            ));
        }
        if let GroundTruthPsi::Fixed { psi } = &self.psi {
            psi.validate()?;
            if psi.num_kernels() != self.num_kernels {
                return Err(SgklError::InvalidParameter(
                    "fixed psi has the wrong kernel count".into(),
                ));
            }
        }
        Ok(())
    }

    /// The ground-truth parameters of graph 1.
    pub fn reference_psi(&self) -> KernelParamVector {
        match &self.psi {
            GroundTruthPsi::Fixed { psi } => psi.clone(),
            GroundTruthPsi::Random {
                mu_mean,
                mu_std,
                s_mean,
                s_std,
            } => {
                let mut rng = stream(self.structure_seed, 1);
                let mu_dist = Normal::new(*mu_mean, mu_std.abs()).expect("finite std");
                let s_dist = Normal::new(*s_mean, s_std.abs()).expect("finite std");
                let mu = (0..self.num_kernels)
                    .map(|_| mu_dist.sample(&mut rng).clamp(0.0, 2.0))
                    .collect();
                let s = (0..self.num_kernels)
                    .map(|_| s_dist.sample(&mut rng).max(S_MIN))
                    .collect();
                KernelParamVector { mu, s }
            }
        }
    }

    /// Kernel parameters used on graph `m`.
    pub fn graph_psi(&self, m: usize) -> KernelParamVector {
        let reference = self.reference_psi();
        if m == 0 || self.perturbation == 0.0 {
            return reference;
        }
        let direction = perturbation_direction(2 * self.num_kernels, self.seed);
        let flat: Vec<f64> = reference
            .to_flat()
            .iter()
            .zip(&direction)
            .map(|(p, d)| p + self.perturbation * d)
            .collect();
        let mut psi = KernelParamVector::from_flat(&flat);
        psi.clamp_scales();
        psi
    }
}

/// Independent RNG stream `tag` of `seed`.
pub(crate) fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Uniform direction on the unit sphere of dimension `dim`.
fn perturbation_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 2);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Uniform points in the unit square, one per node.
pub fn random_coordinates(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect()
}

/// k-NN graph on the points with the Gaussian scale set to `factor` times
/// the mean distance to the k-th neighbour.
pub fn knn_graph_auto_scale(coords: &[Vec<f64>], k: usize, factor: f64) -> Result<Graph> {
    let n = coords.len();
    if k == 0 || k >= n {
        return Err(SgklError::KTooLarge { k, n });
    }
    let mut total = 0.0;
    for (i, a) in coords.iter().enumerate() {
        let mut d: Vec<f64> = coords
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        d.sort_by(f64::total_cmp);
        total += d[k - 1];
    }
    let scale = (factor * total / n as f64).max(1e-12);
    build_knn_graph(coords, k, scale)
}

/// One generated graph with its full ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub graph: Graph,
    pub coordinates: Vec<Vec<f64>>,
    pub psi: KernelParamVector,
    pub coefficients: DMatrix<f64>,
    /// `D(ψ) X`.
    pub clean: DMatrix<f64>,
    /// Clean signals plus noise.
    pub noisy: DMatrix<f64>,
    pub sigma: f64,
    /// Noisy signals under the generated masks.
    pub observed: ObservedSignalSet,
}

impl SyntheticGraph {
    pub fn dataset(&self) -> GraphDataset {
        GraphDataset {
            graph: self.graph.clone(),
            signals: self.observed.clone(),
        }
    }

    /// `10·log10(‖clean‖² / ‖noise‖²)`.
    pub fn empirical_snr_db(&self) -> f64 {
        let noise = (&self.noisy - &self.clean).norm_squared();
        10.0 * (self.clean.norm_squared() / noise).log10()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub graphs: Vec<SyntheticGraph>,
}

impl SyntheticData {
    pub fn datasets(&self) -> Vec<GraphDataset> {
        self.graphs.iter().map(SyntheticGraph::dataset).collect()
    }
}

/// Sparse coefficients: a uniformly random support of `sparsity` atoms per
/// column with normal magnitudes of standard deviation `scale`.
pub fn sparse_coefficients(
    atoms: usize,
    signals: usize,
    sparsity: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(atoms, signals);
    for c in 0..signals {
        for r in sample(rng, atoms, sparsity.min(atoms)).iter() {
            let v: f64 = StandardNormal.sample(rng);
            x[(r, c)] = scale * v;
        }
    }
    x
}

/// Builds the graphs, draws coefficients and noise and applies masks.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut graphs = Vec::with_capacity(spec.graphs.len());
    for (m, gs) in spec.graphs.iter().enumerate() {
        let tag = 16 * (m as u64 + 1);
        let mut structure = stream(spec.structure_seed, tag);
        let coordinates = random_coordinates(gs.nodes, &mut structure);
        let graph = knn_graph_auto_scale(&coordinates, gs.knn, spec.edge_scale)?;
        let spectral = Arc::new(eigendecompose(&normalized_laplacian(&graph)?)?);
        let psi = spec.graph_psi(m);
        let dict = build_dictionary(&spectral, &psi)?;

        let mut coeff_rng = stream(spec.seed, tag + 1);
        let coefficients = sparse_coefficients(
            dict.atom_count(),
            gs.signals,
            spec.sparsity,
            spec.coefficient_scale,
            &mut coeff_rng,
        );
        let clean = dict.synthesize(&coefficients);

        let sigma = match (spec.snr_db, spec.noise_sigma) {
            (Some(snr), _) => {
                let power = clean.norm_squared() / clean.len() as f64;
                (power / 10f64.powf(snr / 10.0)).sqrt()
            }
            (None, Some(s)) => s,
            (None, None) => 0.0,
        };
        let mut noise_rng = stream(spec.seed, tag + 2);
        let noisy = if sigma > 0.0 {
            clean.map(|v| {
                let e: f64 = StandardNormal.sample(&mut noise_rng);
                v + sigma * e
            })
        } else {
            clean.clone()
        };
        log::info!("graph {m}: noise sigma {sigma:.4e}");

        let masks = apply_mask(
            gs.nodes,
            gs.signals,
            spec.missing_ratio,
            spec.seed.wrapping_add(tag + 3),
        )?;
        let observed = ObservedSignalSet::new(noisy.clone(), masks)?;
        graphs.push(SyntheticGraph {
            graph,
            coordinates,
            psi,
            coefficients,
            clean,
            noisy,
            sigma,
            observed,
        });
    }
    Ok(SyntheticData {
        spec: spec.clone(),
        graphs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SyntheticSpec {
        SyntheticSpec {
            graphs: vec![GraphSpec {
                nodes: 20,
                knn: 4,
                signals: 6,
            }],
            num_kernels: 2,
            sparsity: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn noiseless_is_exact() {
        let spec = SyntheticSpec {
            snr_db: None,
            ..tiny()
        };
        let data = generate_synthetic(&spec).unwrap();
        let g = &data.graphs[0];
        assert_eq!(g.clean, g.noisy);
        assert_eq!(g.sigma, 0.0);
    }

    #[test]
    fn zero_sparsity_gives_zero_signals() {
        let spec = SyntheticSpec {
            sparsity: 0,
            snr_db: None,
            ..tiny()
        };
        let g = &generate_synthetic(&spec).unwrap().graphs[0];
        assert_eq!(g.clean, DMatrix::zeros(20, 6));
    }

    #[test]
    fn support_size_exact() {
        let data = generate_synthetic(&tiny()).unwrap();
        for c in data.graphs[0].coefficients.column_iter() {
            assert_eq!(c.iter().filter(|v| **v != 0.0).count(), 5);
        }
    }

    #[test]
    fn reproducible_and_structure_fixed() {
        let a = generate_synthetic(&tiny()).unwrap();
        let b = generate_synthetic(&tiny()).unwrap();
        assert_eq!(a.graphs[0].noisy, b.graphs[0].noisy);
        let c = generate_synthetic(&SyntheticSpec { seed: 1, ..tiny() }).unwrap();
        assert_eq!(a.graphs[0].graph, c.graphs[0].graph);
        assert_eq!(a.graphs[0].psi, c.graphs[0].psi);
        assert_ne!(a.graphs[0].noisy, c.graphs[0].noisy);
    }

    #[test]
    fn perturbation_has_requested_norm() {
        let spec = SyntheticSpec {
            graphs: vec![
                GraphSpec {
                    nodes: 12,
                    knn: 3,
                    signals: 2
                };
                2
            ],
            perturbation: 0.05,
            ..tiny()
        };
        let d = spec.graph_psi(1).distance(&spec.graph_psi(0));
        assert!((d - 0.05).abs() < 1e-12);
        let reference = spec.graph_psi(0);
        assert_eq!(
            SyntheticSpec {
                perturbation: 0.0,
                ..spec
            }
            .graph_psi(1),
            reference
        );
    }

    #[test]
    fn invalid_sparsity_rejected() {
        assert!(generate_synthetic(&SyntheticSpec {
            sparsity: 41,
            ..tiny()
        })
        .is_err());
    }
}
