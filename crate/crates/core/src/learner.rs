//! Alternating minimization over kernel parameters and coefficients, plus
//! transductive reconstruction and inductive inference.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{
    sweep_columns, AdmmConfig, CodingOperator, CodingTerms, CoefficientMatrix, GraphProblem,
    SweepReport,
};
use crate::config::Weights;
use crate::dictionary::{build_dictionary, Dictionary, KernelParamVector};
use crate::error::{Result, SgklError};
use crate::graph::{
    build_signal_graph, eigendecompose, normalized_laplacian, GammaPolicy, Graph,
    ObservedSignalSet, SignalGraphLaplacian, SignalLaplacianKind, SpectralDecomposition,
};
use crate::kernel_opt::{
    descend, DescentConfig, DescentTrace, KernelData, KernelObjective, KernelPrior,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgklConfig {
    /// Number of kernels `J`.
    pub num_kernels: usize,
    pub weights: Weights,
    /// Nominal kernel scale.
    pub s0: f64,
    pub gamma: GammaPolicy,
    /// Divide restricted squared distances by the number of common nodes.
    pub normalize_by_overlap: bool,
    pub signal_laplacian: SignalLaplacianKind,
    pub admm: AdmmConfig,
    pub descent: DescentConfig,
    pub max_outer_iters: usize,
    /// Stop when the relative objective decrease over one outer iteration
    /// falls to this value.
    pub outer_tol: f64,
    pub seed: u64,
    /// Range of the initial kernel centers.
    pub mu_range: [f64; 2],
    /// Range of the initial kernel scales; `[0.5·s0, 1.5·s0]` when absent.
    pub s_range: Option<[f64; 2]>,
    /// Keep each signal's ADMM dual between sweeps.
    pub warm_duals: bool,
    /// Number of random initial draws; the one with the lowest objective
    /// after the initial sweep is kept.
    pub restarts: usize,
}

impl Default for SgklConfig {
    fn default() -> Self {
        Self {
            num_kernels: 4,
            weights: Weights::default(),
            s0: 0.4,
            gamma: GammaPolicy::Median,
            normalize_by_overlap: false,
            signal_laplacian: SignalLaplacianKind::Normalized,
            admm: AdmmConfig {
                rho: 1e4,
                max_iters: 20_000,
                ..AdmmConfig::default()
            },
            descent: DescentConfig::default(),
            max_outer_iters: 100,
            outer_tol: 1e-5,
            seed: 0,
            mu_range: [0.0, 2.0],
            s_range: None,
            warm_duals: true,
            restarts: 4,
        }
    }
}

impl SgklConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_kernels == 0 {
            return Err(SgklError::InvalidParameter(
                "num_kernels must be at least 1".into(),
            ));
        }
        self.weights.validate()?;
        self.prior().validate()?;
        self.admm.validate()?;
        self.descent.validate()?;
        let [lo, hi] = self.mu_range;
        let [slo, shi] = self.scale_range();
        if !(lo <= hi)
            || !(slo <= shi)
            || !(slo > 0.0)
            || !lo.is_finite()
            || !hi.is_finite()
            || !shi.is_finite()
        {
            return Err(SgklError::InvalidParameter(
                "invalid initialization ranges".into(),
            ));
        }
        if self.restarts == 0 {
            return Err(SgklError::InvalidParameter(
                "restarts must be at least 1".into(),
            ));
        }
        if !(self.outer_tol >= 0.0) {
            return Err(SgklError::InvalidParameter(
                "outer_tol must be nonnegative".into(),
            ));
        }
        if let GammaPolicy::Fixed(g) = self.gamma {
            if !(g > 0.0) {
                return Err(SgklError::InvalidParameter(format!(
                    "gamma must be positive, got {g}"
                )));
            }
        }
        Ok(())
    }

    pub fn prior(&self) -> KernelPrior {
        KernelPrior {
            s0: self.s0,
            eta_s: self.weights.eta_s,
        }
    }

    pub fn scale_range(&self) -> [f64; 2] {
        self.s_range.unwrap_or([0.5 * self.s0, 1.5 * self.s0])
    }

    /// Random kernel parameters drawn uniformly from the configured ranges.
    pub fn initial_psi(&self, seed: u64) -> KernelParamVector {
        self.initial_candidates(seed, 1).remove(0)
    }

    /// `count` successive uniform draws; the first equals
    /// [`initial_psi`](Self::initial_psi).
    pub fn initial_candidates(&self, seed: u64, count: usize) -> Vec<KernelParamVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [lo, hi] = self.mu_range;
        let [slo, shi] = self.scale_range();
        let draw =
            |rng: &mut ChaCha8Rng, a: f64, b: f64| if a < b { rng.random_range(a..b) } else { a };
        (0..count)
            .map(|_| {
                let mu = (0..self.num_kernels)
                    .map(|_| draw(&mut rng, lo, hi))
                    .collect();
                let s = (0..self.num_kernels)
                    .map(|_| draw(&mut rng, slo, shi).max(crate::dictionary::S_MIN))
                    .collect();
                KernelParamVector { mu, s }
            })
            .collect()
    }
}

/// One graph and its partially observed signals.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub graph: Graph,
    pub signals: ObservedSignalSet,
}

/// Per-graph part of a fitted model.
#[derive(Debug, Clone)]
pub struct GraphModel {
    pub graph: Graph,
    pub laplacian: DMatrix<f64>,
    pub spectral: Arc<SpectralDecomposition>,
    pub signals: ObservedSignalSet,
    pub signal_graph: SignalGraphLaplacian,
    /// Coupling matrix derived from the signal graph.
    pub coupling: DMatrix<f64>,
    pub dictionary: Dictionary,
    pub coefficients: CoefficientMatrix,
    duals: Option<DMatrix<f64>>,
}

impl GraphModel {
    fn prepare(data: &GraphDataset, cfg: &SgklConfig, psi: &KernelParamVector) -> Result<Self> {
        let n = data.graph.node_count();
        if data.signals.node_count() != n {
            return Err(SgklError::ShapeMismatch(format!(
                "graph has {n} nodes, signals have {}",
                data.signals.node_count()
            )));
        }
        let laplacian = normalized_laplacian(&data.graph)?;
        let spectral = Arc::new(eigendecompose(&laplacian)?);
        let gamma = cfg.gamma.resolve(&data.signals, cfg.normalize_by_overlap)?;
        let signal_graph = build_signal_graph(&data.signals, gamma, cfg.normalize_by_overlap)?;
        let coupling = signal_graph.coupling_matrix(cfg.signal_laplacian);
        let dictionary = build_dictionary(&spectral, psi)?;
        let coefficients = DMatrix::zeros(dictionary.atom_count(), data.signals.signal_count());
        let duals = cfg
            .warm_duals
            .then(|| DMatrix::zeros(coefficients.nrows(), coefficients.ncols()));
        Ok(Self {
            graph: data.graph.clone(),
            laplacian,
            spectral,
            signals: data.signals.clone(),
            signal_graph,
            coupling,
            dictionary,
            coefficients,
            duals,
        })
    }

    fn sweep(&mut self, weights: Weights, admm: &AdmmConfig) -> Result<SweepReport> {
        let op = CodingOperator::new(&self.dictionary, &self.laplacian, weights)?;
        let problem = GraphProblem {
            op: &op,
            signals: &self.signals,
            coupling: &self.coupling,
        };
        let columns: Vec<usize> = (0..self.coefficients.ncols()).collect();
        sweep_columns(
            &problem,
            &mut self.coefficients,
            self.duals.as_mut(),
            admm,
            &columns,
        )
    }

    fn coding_terms(&self, weights: Weights) -> Result<CodingTerms> {
        let op = CodingOperator::new(&self.dictionary, &self.laplacian, weights)?;
        let problem = GraphProblem {
            op: &op,
            signals: &self.signals,
            coupling: &self.coupling,
        };
        Ok(problem.terms(&self.coefficients))
    }

    /// `D(ψ) X`.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        self.dictionary.synthesize(&self.coefficients)
    }
}

/// Unweighted terms of the full objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `Σ μ_j²`.
    pub mu_prior: f64,
    /// `Σ (s_j − s0)²`.
    pub s_prior: f64,
    pub l1: f64,
    pub fidelity: f64,
    pub smoothness: f64,
    pub coupling: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, w: &Weights) -> f64 {
        self.kernel_part(w) + w.eta_x * self.l1 + w.eta_c * self.coupling
    }

    /// The terms that depend on the kernel parameters.
    pub fn kernel_part(&self, w: &Weights) -> f64 {
        self.mu_prior + w.eta_s * self.s_prior + w.eta_w * self.fidelity + w.eta_y * self.smoothness
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Kernel,
    Coefficients,
}

/// Objective after one half-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub outer: usize,
    pub phase: Phase,
    pub objective: f64,
    /// The kernel-parameter part alone; differs from `objective` by the ℓ1
    /// and coupling terms.
    pub kernel_objective: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub outer_iterations: usize,
    pub converged: bool,
    /// ADMM iterations over all sweeps.
    pub admm_iterations: usize,
    /// Signal solves that hit the ADMM iteration cap.
    pub admm_unconverged: usize,
    /// Descent steps over all kernel updates.
    pub descent_steps: usize,
    pub scale_clamped: bool,
    pub last_descent: Option<DescentTrace>,
}

#[derive(Debug, Clone)]
pub struct SgklModel {
    pub config: SgklConfig,
    pub psi: KernelParamVector,
    pub graphs: Vec<GraphModel>,
    pub trace: Vec<TracePoint>,
    pub diagnostics: FitDiagnostics,
}

/// Evaluates all six objective terms at the given state.
pub fn objective_terms(
    psi: &KernelParamVector,
    graphs: &[GraphModel],
    cfg: &SgklConfig,
) -> Result<ObjectiveTerms> {
    let mut t = ObjectiveTerms {
        mu_prior: psi.mu.iter().map(|m| m * m).sum(),
        s_prior: psi.s.iter().map(|s| (s - cfg.s0).powi(2)).sum(),
        ..Default::default()
    };
    for g in graphs {
        let c = g.coding_terms(cfg.weights)?;
        t.l1 += c.l1;
        t.fidelity += c.fidelity;
        t.smoothness += c.smoothness;
        t.coupling += c.coupling;
    }
    Ok(t)
}

impl SgklModel {
    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }

    pub fn objective_terms(&self) -> Result<ObjectiveTerms> {
        objective_terms(&self.psi, &self.graphs, &self.config)
    }

    /// The full objective at the model's state.
    pub fn total_objective(&self) -> Result<f64> {
        Ok(self.objective_terms()?.total(&self.config.weights))
    }

    pub fn graph(&self, m: usize) -> Result<&GraphModel> {
        self.graphs.get(m).ok_or_else(|| {
            SgklError::InvalidParameter(format!(
                "graph index {m} out of range ({} graphs)",
                self.graphs.len()
            ))
        })
    }

    /// `D^m(ψ) X^m`.
    pub fn reconstruct(&self, m: usize) -> Result<DMatrix<f64>> {
        Ok(self.graph(m)?.reconstruction())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            psi: self.psi.clone(),
            config: self.config.clone(),
            seed: self.config.seed,
            trace: self.trace.clone(),
            converged: self.diagnostics.converged,
            coefficients: self.graphs.iter().map(|g| g.coefficients.clone()).collect(),
        }
    }
}

/// Resumable state of a fit. `coefficients` is stored next to the JSON file
/// as one CSV per graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub psi: KernelParamVector,
    pub config: SgklConfig,
    pub seed: u64,
    pub trace: Vec<TracePoint>,
    #[serde(default)]
    pub converged: bool,
    #[serde(skip)]
    pub coefficients: Vec<CoefficientMatrix>,
}

fn check_finite(value: f64, psi: &KernelParamVector) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(SgklError::NumericalBlowUp {
            message: "objective is not finite".into(),
            psi: psi.to_flat(),
        })
    }
}

fn sweep_all(graphs: &mut [GraphModel], cfg: &SgklConfig, diag: &mut FitDiagnostics) -> Result<()> {
    let reports: Vec<SweepReport> = graphs
        .par_iter_mut()
        .map(|g| g.sweep(cfg.weights, &cfg.admm))
        .collect::<Result<Vec<_>>>()?;
    for r in &reports {
        diag.admm_iterations += r.total_iterations();
        diag.admm_unconverged += r.unconverged();
    }
    Ok(())
}

/// Coefficients and ADMM duals of every graph.
type GraphState = Vec<(CoefficientMatrix, Option<DMatrix<f64>>)>;

/// Runs the initial sweep from each random draw and keeps the draw with the
/// lowest objective, leaving its coefficients in `graphs`.
fn initialize(
    graphs: &mut [GraphModel],
    cfg: &SgklConfig,
    diag: &mut FitDiagnostics,
) -> Result<KernelParamVector> {
    let candidates = cfg.initial_candidates(cfg.seed, cfg.restarts);
    let mut best: Option<(f64, usize, GraphState)> = None;
    for (r, psi) in candidates.iter().enumerate() {
        for g in graphs.iter_mut() {
            g.dictionary = build_dictionary(&g.spectral, psi)?;
            g.coefficients.fill(0.0);
            if let Some(u) = g.duals.as_mut() {
                u.fill(0.0);
            }
        }
        sweep_all(graphs, cfg, diag)?;
        let value = objective_terms(psi, graphs, cfg)?.total(&cfg.weights);
        check_finite(value, psi)?;
        if candidates.len() > 1 {
            log::debug!("initial draw {r}: objective {value:.6e}");
        }
        if best.as_ref().is_none_or(|b| value < b.0) {
            let state = graphs
                .iter()
                .map(|g| (g.coefficients.clone(), g.duals.clone()))
                .collect();
            best = Some((value, r, state));
        }
    }
    let (_, r, state) = best.expect("at least one initial draw");
    let psi = candidates[r].clone();
    for (g, (x, u)) in graphs.iter_mut().zip(state) {
        g.dictionary = build_dictionary(&g.spectral, &psi)?;
        g.coefficients = x;
        g.duals = u;
    }
    Ok(psi)
}

/// Learns ψ and the coefficients of every graph.
pub fn fit(datasets: &[GraphDataset], cfg: &SgklConfig) -> Result<SgklModel> {
    fit_from(datasets, cfg, None)
}

/// Like [`fit`], optionally continuing from a checkpoint instead of a random
/// initialization.
pub fn fit_from(
    datasets: &[GraphDataset],
    cfg: &SgklConfig,
    resume: Option<&Checkpoint>,
) -> Result<SgklModel> {
    cfg.validate()?;
    if datasets.is_empty() || datasets.iter().any(|d| d.signals.signal_count() == 0) {
        return Err(SgklError::EmptyDataset);
    }
    let mut psi = match resume {
        Some(c) => {
            c.psi.validate()?;
            if c.psi.num_kernels() != cfg.num_kernels {
                return Err(SgklError::ShapeMismatch(
                    "checkpoint kernel count differs from config".into(),
                ));
            }
            c.psi.clone()
        }
        None => cfg.initial_psi(cfg.seed),
    };
    let mut graphs = datasets
        .par_iter()
        .map(|d| GraphModel::prepare(d, cfg, &psi))
        .collect::<Result<Vec<_>>>()?;
    let mut diag = FitDiagnostics::default();
    let mut trace = Vec::new();
    let mut outer_start = 1;

    if let Some(c) = resume {
        if c.coefficients.len() != graphs.len() {
            return Err(SgklError::ShapeMismatch(
                "checkpoint graph count differs from data".into(),
            ));
        }
        for (g, x) in graphs.iter_mut().zip(&c.coefficients) {
            if x.shape() != g.coefficients.shape() {
                return Err(SgklError::ShapeMismatch(
                    "checkpoint coefficients do not match data".into(),
                ));
            }
            g.coefficients.copy_from(x);
        }
        trace = c.trace.clone();
        outer_start = trace.last().map_or(1, |t| t.outer + 1);
    } else {
        psi = initialize(&mut graphs, cfg, &mut diag)?;
    }

    let record = |trace: &mut Vec<TracePoint>,
                  psi: &KernelParamVector,
                  graphs: &[GraphModel],
                  outer,
                  phase|
     -> Result<f64> {
        let terms = objective_terms(psi, graphs, cfg)?;
        let objective = terms.total(&cfg.weights);
        check_finite(objective, psi)?;
        trace.push(TracePoint {
            outer,
            phase,
            objective,
            kernel_objective: terms.kernel_part(&cfg.weights),
        });
        Ok(objective)
    };
    let mut prev = if resume.is_some() {
        let value = objective_terms(&psi, &graphs, cfg)?.total(&cfg.weights);
        check_finite(value, &psi)?;
        value
    } else {
        record(&mut trace, &psi, &graphs, 0, Phase::Initial)?
    };
    log::info!("initial objective {prev:.6e}");

    let prior = cfg.prior();
    let last_outer = outer_start - 1 + cfg.max_outer_iters;
    for outer in outer_start..=last_outer {
        let (next_psi, dtrace) = {
            let data: Vec<KernelData<'_>> = graphs
                .iter()
                .map(|g| KernelData {
                    spectral: &g.spectral,
                    signals: &g.signals,
                    coefficients: &g.coefficients,
                })
                .collect();
            let objective = KernelObjective::new(
                &data,
                cfg.num_kernels,
                prior,
                cfg.weights.eta_w,
                cfg.weights.eta_y,
            )?;
            descend(&psi, &objective, &cfg.descent)?
        };
        diag.descent_steps += dtrace.steps.len().saturating_sub(1);
        diag.scale_clamped |= dtrace.clamped;
        diag.last_descent = Some(dtrace);
        psi = next_psi;
        graphs.par_iter_mut().try_for_each(|g| -> Result<()> {
            g.dictionary = build_dictionary(&g.spectral, &psi)?;
            Ok(())
        })?;
        record(&mut trace, &psi, &graphs, outer, Phase::Kernel)?;

        sweep_all(&mut graphs, cfg, &mut diag)?;
        let current = record(&mut trace, &psi, &graphs, outer, Phase::Coefficients)?;
        diag.outer_iterations += 1;

        let rel = (prev - current) / prev.abs().max(f64::MIN_POSITIVE);
        log::debug!("outer {outer}: objective {current:.6e}, relative change {rel:.3e}");
        prev = current;
        if rel <= cfg.outer_tol {
            diag.converged = true;
            break;
        }
    }
    log::info!(
        "fit finished after {} outer iterations (converged: {}), objective {prev:.6e}",
        diag.outer_iterations,
        diag.converged
    );
    if diag.admm_unconverged > 0 {
        log::debug!(
            "{} signal solves reached the ADMM iteration cap",
            diag.admm_unconverged
        );
    }
    Ok(SgklModel {
        config: cfg.clone(),
        psi,
        graphs,
        trace,
        diagnostics: diag,
    })
}

/// Rebuilds a fitted model from a checkpoint and the data it was fitted on,
/// without further iterations.
pub fn restore(datasets: &[GraphDataset], checkpoint: &Checkpoint) -> Result<SgklModel> {
    let cfg = SgklConfig {
        max_outer_iters: 0,
        ..checkpoint.config.clone()
    };
    let mut model = fit_from(datasets, &cfg, Some(checkpoint))?;
    model.config.max_outer_iters = checkpoint.config.max_outer_iters;
    model.diagnostics.converged = checkpoint.converged;
    Ok(model)
}

/// Result of coding new signals under a fitted model.
#[derive(Debug, Clone)]
pub struct InductiveResult {
    pub coefficients: CoefficientMatrix,
    pub reconstruction: DMatrix<f64>,
    pub sweeps: usize,
}

/// Codes unseen signals on graph `m` with ψ and the training coefficients
/// frozen. The signal graph is rebuilt over training and test signals and
/// only the test columns are updated, with Gauss–Seidel sweeps until the
/// objective settles.
pub fn infer_inductive(
    model: &SgklModel,
    m: usize,
    test: &ObservedSignalSet,
) -> Result<InductiveResult> {
    let g = model.graph(m)?;
    let cfg = &model.config;
    if test.node_count() != g.graph.node_count() {
        return Err(SgklError::ShapeMismatch(format!(
            "test signals have {} nodes, graph {m} has {}",
            test.node_count(),
            g.graph.node_count()
        )));
    }
    let ktrain = g.signals.signal_count();
    let ktest = test.signal_count();
    if ktest == 0 {
        return Err(SgklError::EmptyDataset);
    }
    let all = g.signals.concat(test)?;
    let gamma = cfg.gamma.resolve(&all, cfg.normalize_by_overlap)?;
    let coupling = build_signal_graph(&all, gamma, cfg.normalize_by_overlap)?
        .coupling_matrix(cfg.signal_laplacian);

    let jn = g.dictionary.atom_count();
    let mut x = DMatrix::zeros(jn, ktrain + ktest);
    x.columns_mut(0, ktrain).copy_from(&g.coefficients);
    let mut duals = cfg.warm_duals.then(|| DMatrix::zeros(jn, ktrain + ktest));

    let op = CodingOperator::new(&g.dictionary, &g.laplacian, cfg.weights)?;
    let problem = GraphProblem {
        op: &op,
        signals: &all,
        coupling: &coupling,
    };
    let columns: Vec<usize> = (ktrain..ktrain + ktest).collect();
    let max_sweeps = cfg.max_outer_iters.max(1);
    let mut sweeps = 0;
    for _ in 0..max_sweeps {
        let report = sweep_columns(&problem, &mut x, duals.as_mut(), &cfg.admm, &columns)?;
        sweeps += 1;
        check_finite(report.objective_after, &model.psi)?;
        // a single test signal has no test neighbours; one pass is exact
        let settled = ktest == 1 && cfg.weights.eta_c == 0.0
            || (report.objective_before - report.objective_after)
                <= cfg.outer_tol * report.objective_before.abs().max(f64::MIN_POSITIVE);
        if settled {
            break;
        }
    }
    let coefficients = x.columns(ktrain, ktest).into_owned();
    let reconstruction = g.dictionary.synthesize(&coefficients);
    Ok(InductiveResult {
        coefficients,
        reconstruction,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_knn_graph;
    use rand::Rng;

    fn small_graph(n: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        build_knn_graph(&coords, 3, 0.5).unwrap()
    }

    fn small_config() -> SgklConfig {
        SgklConfig {
            num_kernels: 2,
            weights: Weights {
                eta_s: 10.0,
                eta_x: 0.01,
                eta_w: 10.0,
                eta_y: 0.1,
                eta_c: 0.5,
            },
            admm: AdmmConfig {
                rho: 5.0,
                max_iters: 300,
                ..AdmmConfig::default()
            },
            max_outer_iters: 8,
            ..SgklConfig::default()
        }
    }

    fn random_dataset(n: usize, k: usize, seed: u64) -> GraphDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() - 0.5);
        let masks = (0..k)
            .map(|_| {
                (0..n)
                    .map(|r| r == 0 || rng.random::<f64>() > 0.25)
                    .collect()
            })
            .collect();
        GraphDataset {
            graph: small_graph(n, seed + 1),
            signals: ObservedSignalSet::new(y, masks).unwrap(),
        }
    }

    #[test]
    fn trace_is_monotone() {
        for seed in 0..3 {
            let data = [random_dataset(10, 4, seed), random_dataset(8, 3, seed + 50)];
            let model = fit(
                &data,
                &SgklConfig {
                    seed,
                    ..small_config()
                },
            )
            .unwrap();
            assert!(model.trace.len() >= 3);
            for w in model.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective * (1.0 + 1e-9), "{:?}", w);
            }
            let last = model.trace.last().unwrap().objective;
            assert!((model.total_objective().unwrap() - last).abs() <= 1e-12 * last);
        }
    }

    #[test]
    fn zero_signals_reach_nominal_kernels() {
        let data = [GraphDataset {
            graph: small_graph(8, 3),
            signals: ObservedSignalSet::fully_observed(DMatrix::zeros(8, 2)).unwrap(),
        }];
        let cfg = SgklConfig {
            descent: DescentConfig {
                max_steps: 5000,
                grad_tol: 1e-10,
                ..DescentConfig::default()
            },
            ..small_config()
        };
        let model = fit(&data, &cfg).unwrap();
        assert!(model.graphs[0].coefficients.iter().all(|v| *v == 0.0));
        assert!(model.psi.distance(&cfg.prior().nominal(2)) < 1e-6);
        assert!(model.total_objective().unwrap() < 1e-10);
    }

    #[test]
    fn kernel_part_matches_kernel_objective() {
        let data = [random_dataset(9, 3, 7)];
        let mut cfg = small_config();
        cfg.weights.eta_y = 0.0;
        cfg.weights.eta_c = 0.0;
        cfg.max_outer_iters = 1;
        let model = fit(&data, &cfg).unwrap();
        let g = &model.graphs[0];
        let kd = [KernelData {
            spectral: &g.spectral,
            signals: &g.signals,
            coefficients: &g.coefficients,
        }];
        let f =
            crate::kernel_opt::objective_psi(&model.psi, &kd, cfg.prior(), cfg.weights.eta_w, 0.0)
                .unwrap();
        let l1: f64 = g.coefficients.iter().map(|v| v.abs()).sum();
        let total = model.total_objective().unwrap();
        assert!((total - (f + cfg.weights.eta_x * l1)).abs() <= 1e-10 * total);
    }

    #[test]
    fn deterministic() {
        let data = [random_dataset(10, 4, 11)];
        let a = fit(&data, &small_config()).unwrap();
        let b = fit(&data, &small_config()).unwrap();
        assert_eq!(a.psi, b.psi);
        assert_eq!(a.graphs[0].coefficients, b.graphs[0].coefficients);
    }

    #[test]
    fn resume_continues_trace() {
        let data = [random_dataset(10, 4, 12)];
        let cfg = SgklConfig {
            max_outer_iters: 2,
            outer_tol: 0.0,
            ..small_config()
        };
        let first = fit(&data, &cfg).unwrap();
        let ck = first.checkpoint();
        let resumed = fit_from(&data, &cfg, Some(&ck)).unwrap();
        assert_eq!(resumed.trace[..ck.trace.len()], ck.trace[..]);
        assert!(resumed.trace.len() > ck.trace.len());
        assert!(
            resumed.trace.last().unwrap().objective
                <= ck.trace.last().unwrap().objective * (1.0 + 1e-9)
        );
        assert_eq!(
            resumed.trace[ck.trace.len()].outer,
            ck.trace.last().unwrap().outer + 1
        );
    }

    #[test]
    fn restore_reproduces_the_fit() {
        let data = [random_dataset(10, 4, 14)];
        let model = fit(&data, &small_config()).unwrap();
        let back = restore(&data, &model.checkpoint()).unwrap();
        assert_eq!(back.psi, model.psi);
        assert_eq!(back.trace, model.trace);
        assert_eq!(back.config, model.config);
        assert_eq!(back.reconstruct(0).unwrap(), model.reconstruct(0).unwrap());
    }

    #[test]
    fn restarts_keep_the_best_initial_draw() {
        let data = [random_dataset(10, 4, 21)];
        let base = SgklConfig {
            max_outer_iters: 0,
            restarts: 1,
            ..small_config()
        };
        let single = fit(&data, &base).unwrap();
        let multi = fit(
            &data,
            &SgklConfig {
                restarts: 5,
                ..base.clone()
            },
        )
        .unwrap();
        assert!(multi.trace[0].objective <= single.trace[0].objective);
        let draws = base.initial_candidates(base.seed, 5);
        assert_eq!(draws[0], base.initial_psi(base.seed));
        assert!(draws.contains(&multi.psi));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            fit(&[], &SgklConfig::default()),
            Err(SgklError::EmptyDataset)
        ));
    }

    #[test]
    fn inductive_zero_signal_and_shape() {
        let data = [random_dataset(10, 4, 13)];
        // with coupling, neighbouring training signals pull a zero signal away from zero
        let mut cfg = small_config();
        cfg.weights.eta_c = 0.0;
        let model = fit(&data, &cfg).unwrap();
        let zero = ObservedSignalSet::fully_observed(DMatrix::zeros(10, 1)).unwrap();
        let res = infer_inductive(&model, 0, &zero).unwrap();
        assert!(res.coefficients.iter().all(|v| *v == 0.0));
        let wrong = ObservedSignalSet::fully_observed(DMatrix::zeros(9, 1)).unwrap();
        assert!(infer_inductive(&model, 0, &wrong).is_err());
        assert!(infer_inductive(&model, 1, &zero).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small_config();
        let back: SgklConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: SgklConfig = serde_json::from_str(r#"{"num_kernels": 3}"#).unwrap();
        assert_eq!(partial.num_kernels, 3);
        assert_eq!(partial.weights, Weights::default());
    }
}
