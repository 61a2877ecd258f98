//! Per-signal sparse coding by ADMM and Gauss–Seidel sweeps over all signals
//! of one graph.
//!
//! For signal `i` with the other columns of `X` fixed, the coder minimizes
//!
//! ```text
//! φ(x) = η_x ‖x‖₁ + η_w ‖S(y − Dx)‖² + η_y (Dx)ᵀ L (Dx)
//!      + η_c (ℓ_ii ‖x‖² + 2 xᵀ Σ_{j≠i} ℓ_ij x_j)
//! ```
//!
//! where `ℓ` is the signal-graph coupling matrix. The x-update solves
//! `(αI + DᵀMD) x = r` with `α = ρ/2 + η_c ℓ_ii` and `M = η_w SᵀS + η_y L`.
//! Writing `M = FᵀF` with `F = [√η_w S; √η_y Λ^{1/2} Uᵀ]`, the system is
//! inverted through the push-through identity
//! `(αI + BᵀB)⁻¹ = α⁻¹ (I − Bᵀ (αI + BBᵀ)⁻¹ B)`, `B = FD`, so only a small
//! SPD matrix of size `R + N` is factorized per signal. `BBᵀ = F (DDᵀ) Fᵀ`
//! is assembled from per-dictionary quantities without forming `B`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::config::Weights;
use crate::dictionary::Dictionary;
use crate::error::{Result, SgklError};
use crate::graph::ObservedSignalSet;

/// `JN × K` coefficients; column `i` codes signal `i`.
pub type CoefficientMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iters: usize,
    /// Stop when `‖x − z‖ ≤ tol_primal·√(JN)` ...
    pub tol_primal: f64,
    /// ... and `‖z − z_prev‖ ≤ tol_dual·√(JN)`.
    pub tol_dual: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 500,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.tol_primal > 0.0) || !(self.tol_dual > 0.0) {
            return Err(SgklError::InvalidParameter(
                "ADMM needs rho > 0 and positive tolerances".into(),
            ));
        }
        Ok(())
    }
}

/// ADMM iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
}

impl AdmmState {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            z: DVector::zeros(n),
            u: DVector::zeros(n),
        }
    }

    /// Warm start from a previous coefficient vector and scaled dual.
    pub fn from_coefficients(coeffs: DVector<f64>, dual: DVector<f64>) -> Self {
        Self {
            x: coeffs.clone(),
            z: coeffs,
            u: dual,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmmDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖x − z‖`.
    pub primal_residual: f64,
    /// Final `‖z − z_prev‖`.
    pub dual_residual: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    /// False when the ADMM output scored worse than the incumbent, which was
    /// then kept.
    pub accepted: bool,
}

/// Graph- and dictionary-level quantities shared by every signal solve.
#[derive(Debug, Clone)]
pub struct CodingOperator<'a> {
    dict: &'a Dictionary,
    laplacian: &'a DMatrix<f64>,
    weights: Weights,
    sqrt_lambda: DVector<f64>,
    /// `U diag(h ∘ √λ)` with `h = Σ_j ĝ_j²`.
    cross: DMatrix<f64>,
    /// `λ ∘ h`.
    lambda_energy: DVector<f64>,
}

impl<'a> CodingOperator<'a> {
    pub fn new(
        dict: &'a Dictionary,
        laplacian: &'a DMatrix<f64>,
        weights: Weights,
    ) -> Result<Self> {
        let n = dict.node_count();
        if laplacian.shape() != (n, n) {
            return Err(SgklError::ShapeMismatch(format!(
                "laplacian is {:?}, dictionary has {n} nodes",
                laplacian.shape()
            )));
        }
        weights.validate()?;
        let spectral = dict.spectral();
        let energy = dict.responses().map(|g| g * g).column_sum();
        let sqrt_lambda = spectral.eigenvalues.map(|l| l.max(0.0).sqrt());
        let cross =
            spectral.scaled_columns(energy.iter().zip(sqrt_lambda.iter()).map(|(h, s)| h * s));
        let lambda_energy = spectral.eigenvalues.zip_map(&energy, |l, h| l.max(0.0) * h);
        Ok(Self {
            dict,
            laplacian,
            weights,
            sqrt_lambda,
            cross,
            lambda_energy,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dict
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        self.laplacian
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn coefficient_dim(&self) -> usize {
        self.dict.atom_count()
    }

    fn smooth_block(&self) -> bool {
        self.weights.eta_y > 0.0
    }

    /// `φ(x)` for one signal.
    pub fn column_objective(&self, signal: &SignalData<'_>, x: &DVector<f64>) -> f64 {
        let w = &self.weights;
        let rec = self.dict.apply(x);
        let mut fid = 0.0;
        for (r, &obs) in signal.mask.iter().enumerate() {
            if obs {
                let d = signal.y[r] - rec[r];
                fid += d * d;
            }
        }
        let smooth = if w.eta_y > 0.0 {
            rec.dot(&(self.laplacian * &rec))
        } else {
            0.0
        };
        let coupling = if w.eta_c > 0.0 {
            signal.coupling_diag * x.norm_squared() + 2.0 * x.dot(&signal.coupling_context)
        } else {
            0.0
        };
        w.eta_x * x.lp_norm(1) + w.eta_w * fid + w.eta_y * smooth + w.eta_c * coupling
    }
}

/// Inputs of one per-signal solve.
#[derive(Debug, Clone)]
pub struct SignalData<'a> {
    /// Signal values; entries outside the mask are ignored.
    pub y: DVector<f64>,
    pub mask: &'a [bool],
    /// `ℓ_ii`.
    pub coupling_diag: f64,
    /// `Σ_{j≠i} ℓ_ij x_j`.
    pub coupling_context: DVector<f64>,
}

impl<'a> SignalData<'a> {
    /// Builds the coupling inputs from row `i` of the coupling matrix and the
    /// current coefficients of the other signals.
    pub fn from_context(
        signals: &'a ObservedSignalSet,
        i: usize,
        coupling: &DMatrix<f64>,
        x_context: &CoefficientMatrix,
    ) -> Self {
        let row = coupling.row(i).transpose();
        let mut ctx = x_context * &row;
        ctx.axpy(-coupling[(i, i)], &x_context.column(i), 1.0);
        Self {
            y: signals.values().column(i).into_owned(),
            mask: signals.mask(i),
            coupling_diag: coupling[(i, i)],
            coupling_context: ctx,
        }
    }
}

/// Factorized x-update operator `(αI + DᵀMD)⁻¹` for one signal.
pub(crate) struct XUpdate<'o, 'a> {
    op: &'o CodingOperator<'a>,
    observed: Vec<usize>,
    alpha: f64,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl<'o, 'a> XUpdate<'o, 'a> {
    pub(crate) fn new(
        op: &'o CodingOperator<'a>,
        mask: &[bool],
        coupling_diag: f64,
        rho: f64,
        signal: usize,
    ) -> Result<Self> {
        let w = op.weights;
        let alpha = 0.5 * rho + w.eta_c * coupling_diag;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(SgklError::IllConditioned { signal });
        }
        let observed: Vec<usize> = if w.eta_w > 0.0 {
            mask.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(r, _)| r)
                .collect()
        } else {
            Vec::new()
        };
        let r = observed.len();
        let n = op.dict.node_count();
        let m = r + if op.smooth_block() { n } else { 0 };
        let chol = if m == 0 {
            None
        } else {
            let gram = op.dict.gram();
            let mut k = DMatrix::<f64>::zeros(m, m);
            for (a, &ra) in observed.iter().enumerate() {
                for (b, &rb) in observed.iter().enumerate() {
                    k[(a, b)] = w.eta_w * gram[(ra, rb)];
                }
            }
            if op.smooth_block() {
                let c = (w.eta_w * w.eta_y).sqrt();
                for (a, &ra) in observed.iter().enumerate() {
                    for q in 0..n {
                        let v = c * op.cross[(ra, q)];
                        k[(a, r + q)] = v;
                        k[(r + q, a)] = v;
                    }
                }
                for q in 0..n {
                    k[(r + q, r + q)] = w.eta_y * op.lambda_energy[q];
                }
            }
            for d in 0..m {
                k[(d, d)] += alpha;
            }
            Some(Cholesky::new(k).ok_or(SgklError::IllConditioned { signal })?)
        };
        Ok(Self {
            op,
            observed,
            alpha,
            chol,
        })
    }

    /// `(αI + DᵀMD)⁻¹ v`.
    pub(crate) fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let Some(chol) = &self.chol else {
            return v / self.alpha;
        };
        let w = self.op.weights;
        let dict = self.op.dict;
        let u = &dict.spectral().eigenvectors;
        let n = dict.node_count();
        let r = self.observed.len();
        let t = dict.apply(v);

        let mut f = DVector::<f64>::zeros(chol.l_dirty().nrows());
        let sw = w.eta_w.sqrt();
        for (a, &ra) in self.observed.iter().enumerate() {
            f[a] = sw * t[ra];
        }
        let sy = w.eta_y.sqrt();
        if self.op.smooth_block() {
            let spec = u.tr_mul(&t);
            for q in 0..n {
                f[r + q] = sy * self.op.sqrt_lambda[q] * spec[q];
            }
        }
        chol.solve_mut(&mut f);

        let mut back = DVector::<f64>::zeros(n);
        for (a, &ra) in self.observed.iter().enumerate() {
            back[ra] += sw * f[a];
        }
        if self.op.smooth_block() {
            let scaled = DVector::from_fn(n, |q, _| sy * self.op.sqrt_lambda[q] * f[r + q]);
            back.gemv(1.0, u, &scaled, 1.0);
        }
        let mut out = v - dict.apply_transpose(&back);
        out /= self.alpha;
        out
    }
}

/// Elementwise `sign(v)·max(|v| − τ, 0)`.
pub fn soft_threshold(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    v.map(|e| {
        if e > tau {
            e - tau
        } else if e < -tau {
            e + tau
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct SignalSolution {
    /// The returned coefficients: final `z`, or the incumbent if ADMM did
    /// not improve on it.
    pub coefficients: DVector<f64>,
    pub state: AdmmState,
    pub diagnostics: AdmmDiagnostics,
}

/// Runs ADMM for one signal. `warm` seeds `x`, `z`, `u`; its `z` is also the
/// incumbent the result must not be worse than. Without a warm start the
/// iterates and the incumbent are zero.
pub fn solve_signal_coefficients(
    op: &CodingOperator<'_>,
    signal: &SignalData<'_>,
    cfg: &AdmmConfig,
    warm: Option<AdmmState>,
    signal_index: usize,
) -> Result<SignalSolution> {
    cfg.validate()?;
    let n = op.coefficient_dim();
    let nodes = op.dict.node_count();
    if signal.y.len() != nodes || signal.mask.len() != nodes || signal.coupling_context.len() != n {
        return Err(SgklError::ShapeMismatch(
            "signal data does not match the dictionary".into(),
        ));
    }
    if !signal.mask.iter().any(|&b| b) {
        return Err(SgklError::EmptyMask(signal_index));
    }
    let w = op.weights;

    // r0 = η_w Dᵀ Sᵀ S y − η_c Σ_{j≠i} ℓ_ij x_j, so the smooth part has gradient −2 r0 at zero
    let masked_y = DVector::from_fn(nodes, |r, _| if signal.mask[r] { signal.y[r] } else { 0.0 });
    let mut r0 = op.dict.apply_transpose(&masked_y) * w.eta_w;
    r0.axpy(-w.eta_c, &signal.coupling_context, 1.0);
    if 2.0 * r0.amax() <= w.eta_x {
        return Ok(zero_solution(op, signal, cfg, warm, r0));
    }

    let xu = XUpdate::new(op, signal.mask, signal.coupling_diag, cfg.rho, signal_index)?;
    let x0 = xu.solve(&r0);

    let AdmmState {
        mut x,
        mut z,
        mut u,
    } = warm.unwrap_or_else(|| AdmmState::zeros(n));
    let incumbent = z.clone();
    let objective_before = op.column_objective(signal, &incumbent);

    let tau = w.eta_x / cfg.rho;
    let scale = (n as f64).sqrt();
    let mut diag = AdmmDiagnostics {
        objective_before,
        ..Default::default()
    };
    for k in 0..cfg.max_iters {
        let mut rhs = &z - &u;
        rhs *= 0.5 * cfg.rho;
        x = &x0 + xu.solve(&rhs);
        let z_prev = std::mem::replace(&mut z, soft_threshold(&(&x + &u), tau));
        u += &x;
        u -= &z;

        let primal = (&x - &z).norm();
        let dual = (&z - &z_prev).norm();
        diag.iterations = k + 1;
        diag.primal_residual = primal;
        diag.dual_residual = dual;
        if !primal.is_finite() || !dual.is_finite() {
            return Err(SgklError::IllConditioned {
                signal: signal_index,
            });
        }
        if primal <= cfg.tol_primal * scale && dual <= cfg.tol_dual * scale {
            diag.converged = true;
            break;
        }
    }

    let candidate = op.column_objective(signal, &z);
    let (coefficients, objective_after, accepted) = if candidate <= objective_before {
        (z.clone(), candidate, true)
    } else {
        (incumbent, objective_before, false)
    };
    diag.objective_after = objective_after;
    diag.accepted = accepted;
    Ok(SignalSolution {
        coefficients,
        state: AdmmState { x, z, u },
        diagnostics: diag,
    })
}

/// Zero satisfies the optimality condition: returns it with the dual that
/// makes `(0, 0, u)` an ADMM fixed point.
fn zero_solution(
    op: &CodingOperator<'_>,
    signal: &SignalData<'_>,
    cfg: &AdmmConfig,
    warm: Option<AdmmState>,
    r0: DVector<f64>,
) -> SignalSolution {
    let n = r0.len();
    let objective_after = op.column_objective(signal, &DVector::zeros(n));
    let objective_before = warm.map_or(objective_after, |s| op.column_objective(signal, &s.z));
    SignalSolution {
        coefficients: DVector::zeros(n),
        state: AdmmState {
            x: DVector::zeros(n),
            z: DVector::zeros(n),
            u: r0 * (2.0 / cfg.rho),
        },
        diagnostics: AdmmDiagnostics {
            iterations: 0,
            converged: true,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective_before,
            objective_after,
            accepted: true,
        },
    }
}

/// Everything a sweep over one graph needs.
#[derive(Debug, Clone, Copy)]
pub struct GraphProblem<'p, 'a> {
    pub op: &'p CodingOperator<'a>,
    pub signals: &'p ObservedSignalSet,
    /// `K × K` signal-graph coupling matrix.
    pub coupling: &'p DMatrix<f64>,
}

impl GraphProblem<'_, '_> {
    fn check(&self, x: &CoefficientMatrix) -> Result<()> {
        let k = self.signals.signal_count();
        if x.shape() != (self.op.coefficient_dim(), k)
            || self.coupling.shape() != (k, k)
            || self.signals.node_count() != self.op.dict.node_count()
        {
            return Err(SgklError::ShapeMismatch(format!(
                "coefficients {:?}, coupling {:?}, {} signals on {} nodes, dictionary {} atoms",
                x.shape(),
                self.coupling.shape(),
                k,
                self.signals.node_count(),
                self.op.coefficient_dim()
            )));
        }
        Ok(())
    }

    /// The coefficient objective `η_x‖X‖₁ + η_w Σ_i ‖S_i(y_i − Dx_i)‖²
    /// + η_y tr(XᵀDᵀLDX) + η_c tr(X ℓ Xᵀ)` for this graph.
    pub fn objective(&self, x: &CoefficientMatrix) -> f64 {
        let t = self.terms(x);
        let w = self.op.weights;
        w.eta_x * t.l1 + w.eta_w * t.fidelity + w.eta_y * t.smoothness + w.eta_c * t.coupling
    }

    /// Unweighted terms of [`Self::objective`].
    pub fn terms(&self, x: &CoefficientMatrix) -> CodingTerms {
        let rec = self.op.dict.synthesize(x);
        let y = self.signals.values();
        let mut fidelity = 0.0;
        for i in 0..x.ncols() {
            let mask = self.signals.mask(i);
            for r in 0..rec.nrows() {
                if mask[r] {
                    let d = y[(r, i)] - rec[(r, i)];
                    fidelity += d * d;
                }
            }
        }
        let smoothness = (self.op.laplacian * &rec).component_mul(&rec).sum();
        let coupling = if self.op.weights.eta_c > 0.0 {
            (x * self.coupling).component_mul(x).sum()
        } else {
            0.0
        };
        CodingTerms {
            l1: x.iter().map(|v| v.abs()).sum(),
            fidelity,
            smoothness,
            coupling,
        }
    }
}

/// Unweighted objective terms over one graph's coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CodingTerms {
    pub l1: f64,
    pub fidelity: f64,
    pub smoothness: f64,
    pub coupling: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub per_signal: Vec<AdmmDiagnostics>,
    pub objective_before: f64,
    pub objective_after: f64,
}

impl SweepReport {
    pub fn total_iterations(&self) -> usize {
        self.per_signal.iter().map(|d| d.iterations).sum()
    }

    pub fn unconverged(&self) -> usize {
        self.per_signal.iter().filter(|d| !d.converged).count()
    }
}

/// One Gauss–Seidel pass over all columns in index order.
pub fn sweep_coefficients(
    problem: &GraphProblem<'_, '_>,
    x: &CoefficientMatrix,
    cfg: &AdmmConfig,
) -> Result<(CoefficientMatrix, SweepReport)> {
    let mut out = x.clone();
    let order: Vec<usize> = (0..x.ncols()).collect();
    let report = sweep_columns(problem, &mut out, None, cfg, &order)?;
    Ok((out, report))
}

/// Gauss–Seidel pass over `columns` in the given order, updating `x` in
/// place. Columns not listed stay frozen. `duals`, when given, warm-starts
/// and stores the scaled ADMM dual of every column.
pub fn sweep_columns(
    problem: &GraphProblem<'_, '_>,
    x: &mut CoefficientMatrix,
    mut duals: Option<&mut DMatrix<f64>>,
    cfg: &AdmmConfig,
    columns: &[usize],
) -> Result<SweepReport> {
    problem.check(x)?;
    if let Some(d) = duals.as_deref() {
        if d.shape() != x.shape() {
            return Err(SgklError::ShapeMismatch(
                "dual matrix shape differs from coefficients".into(),
            ));
        }
    }
    let objective_before = problem.objective(x);
    let mut per_signal = Vec::with_capacity(columns.len());
    for &i in columns {
        let data = SignalData::from_context(problem.signals, i, problem.coupling, x);
        let dual = match duals.as_deref() {
            Some(d) => d.column(i).into_owned(),
            None => DVector::zeros(x.nrows()),
        };
        let warm = AdmmState::from_coefficients(x.column(i).into_owned(), dual);
        let sol = solve_signal_coefficients(problem.op, &data, cfg, Some(warm), i)?;
        x.set_column(i, &sol.coefficients);
        if let Some(d) = duals.as_deref_mut() {
            d.set_column(i, &sol.state.u);
        }
        per_signal.push(sol.diagnostics);
    }
    let objective_after = problem.objective(x);
    Ok(SweepReport {
        per_signal,
        objective_before,
        objective_after,
    })
}
