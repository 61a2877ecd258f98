//! Gradient descent on the kernel parameters with the coefficients fixed.
//!
//! Only the ψ-dependent terms enter here:
//!
//! ```text
//! f(ψ) = Σ μ_j² + η_s Σ (s_j − s_0)² + η_w Σ_{m,i} ‖S_i(y_i − D^m(ψ) x_i)‖²
//!      + η_y Σ_m tr(Xᵀ D^m(ψ)ᵀ L^m D^m(ψ) X)
//! ```
//!
//! Per graph, with `C_j = Uᵀ X_j` (the spectrum of block `j` of the
//! coefficients) and `Z = Σ_j ĝ_j(Λ) C_j`, the reconstruction is `U Z` and
//! `tr(XᵀDᵀLDX) = Σ_n λ_n ‖Z_n‖²`. The derivative with respect to the kernel
//! response `ĝ_j(λ_n)` is
//! `2η_w Σ_i (UᵀR)_{n,i} C_j[n,i] + 2η_y λ_n Σ_i Z[n,i] C_j[n,i]` with
//! `R` the masked residual, and is chained through the kernel Jacobian.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::CoefficientMatrix;
use crate::dictionary::{kernel_param_jacobian, KernelParamVector};
use crate::error::{Result, SgklError};
use crate::graph::{ObservedSignalSet, SpectralDecomposition};

/// Nominal kernel scale and the weight pulling scales toward it. Centers are
/// pulled toward zero with unit weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPrior {
    pub s0: f64,
    pub eta_s: f64,
}

impl KernelPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0)
            || !(self.eta_s >= 0.0)
            || !self.s0.is_finite()
            || !self.eta_s.is_finite()
        {
            return Err(SgklError::InvalidParameter(format!(
                "prior needs s0 > 0 and eta_s >= 0, got s0={} eta_s={}",
                self.s0, self.eta_s
            )));
        }
        Ok(())
    }

    /// The prior's minimizer: all centers 0, all scales `s0`.
    pub fn nominal(&self, j: usize) -> KernelParamVector {
        KernelParamVector::nominal(j, self.s0)
    }

    pub fn value(&self, psi: &KernelParamVector) -> f64 {
        let mu: f64 = psi.mu.iter().map(|m| m * m).sum();
        let s: f64 = psi.s.iter().map(|s| (s - self.s0).powi(2)).sum();
        mu + self.eta_s * s
    }

    pub fn gradient(&self, psi: &KernelParamVector) -> Vec<f64> {
        psi.mu
            .iter()
            .map(|m| 2.0 * m)
            .chain(psi.s.iter().map(|s| 2.0 * self.eta_s * (s - self.s0)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescentConfig {
    pub initial_step: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Sufficient-decrease constant.
    pub c: f64,
    pub max_backtracks: usize,
    pub max_steps: usize,
    /// Stop when `‖∇f‖ ≤ grad_tol·(1 + |f|)`.
    pub grad_tol: f64,
    /// Start each line search from the previous accepted step divided by
    /// `beta` instead of `initial_step`.
    pub grow_step: bool,
    /// Scale the gradient by the inverse magnitude of a finite-difference
    /// estimate of the Hessian diagonal.
    pub precondition: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            initial_step: 1e-3,
            beta: 0.5,
            c: 1e-4,
            max_backtracks: 60,
            max_steps: 200,
            grad_tol: 1e-6,
            grow_step: true,
            precondition: true,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_step > 0.0
            && self.beta > 0.0
            && self.beta < 1.0
            && self.c > 0.0
            && self.c < 1.0
            && self.grad_tol > 0.0
            && self.max_steps > 0;
        if !ok {
            return Err(SgklError::InvalidParameter(
                "descent needs positive step and tolerance, beta and c in (0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// One graph's data as seen by the kernel optimizer.
#[derive(Debug, Clone, Copy)]
pub struct KernelData<'a> {
    pub spectral: &'a Arc<SpectralDecomposition>,
    pub signals: &'a ObservedSignalSet,
    pub coefficients: &'a CoefficientMatrix,
}

/// Per-graph quantities that do not depend on ψ.
struct Prepared<'a> {
    data: KernelData<'a>,
    /// `C_j = Uᵀ X_j`, one `N × K` matrix per kernel.
    spectra: Vec<DMatrix<f64>>,
    mask: DMatrix<f64>,
}

impl<'a> Prepared<'a> {
    fn new(data: KernelData<'a>, j: usize) -> Result<Self> {
        let n = data.spectral.dim();
        let k = data.signals.signal_count();
        if data.signals.node_count() != n || data.coefficients.shape() != (j * n, k) {
            return Err(SgklError::ShapeMismatch(format!(
                "graph with {n} nodes and {k} signals needs {}x{k} coefficients, got {:?}",
                j * n,
                data.coefficients.shape()
            )));
        }
        let u = &data.spectral.eigenvectors;
        let spectra = (0..j)
            .map(|b| u.tr_mul(&data.coefficients.rows(b * n, n)))
            .collect();
        Ok(Self {
            data,
            spectra,
            mask: data.signals.mask_matrix(),
        })
    }

    /// `Z = Σ_j ĝ_j(Λ) C_j` for the kernel responses `g` (`N × J`).
    fn spectrum(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, k) = self.spectra.first().map(|c| c.shape()).unwrap_or((0, 0));
        let mut z = DMatrix::<f64>::zeros(n, k);
        for (j, c) in self.spectra.iter().enumerate() {
            for col in 0..k {
                for row in 0..n {
                    z[(row, col)] += g[(row, j)] * c[(row, col)];
                }
            }
        }
        z
    }

    fn residual(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let rec = &self.data.spectral.eigenvectors * z;
        (rec - self.data.signals.values()).component_mul(&self.mask)
    }

    /// `(fidelity, smoothness)` without weights.
    fn terms(&self, g: &DMatrix<f64>) -> (f64, f64) {
        let z = self.spectrum(g);
        let fid = self.residual(&z).norm_squared();
        let lambda = &self.data.spectral.eigenvalues;
        let smooth = z
            .row_iter()
            .zip(lambda.iter())
            .map(|(r, l)| l * r.norm_squared())
            .sum();
        (fid, smooth)
    }

    /// `∂(η_w fid + η_y smooth)/∂ĝ_j(λ_n)` as an `N × J` matrix.
    fn response_gradient(&self, g: &DMatrix<f64>, eta_w: f64, eta_y: f64) -> DMatrix<f64> {
        let z = self.spectrum(g);
        let p = self.data.spectral.eigenvectors.tr_mul(&self.residual(&z));
        let lambda = &self.data.spectral.eigenvalues;
        let n = lambda.len();
        DMatrix::from_fn(n, self.spectra.len(), |row, j| {
            let c = self.spectra[j].row(row);
            let fid = p.row(row).dot(&c);
            let smooth = z.row(row).dot(&c);
            2.0 * eta_w * fid + 2.0 * eta_y * lambda[row] * smooth
        })
    }
}

/// Kernel objective and gradient over a fixed set of graphs and coefficients.
pub struct KernelObjective<'a> {
    graphs: Vec<Prepared<'a>>,
    prior: KernelPrior,
    eta_w: f64,
    eta_y: f64,
    num_kernels: usize,
}

impl<'a> KernelObjective<'a> {
    pub fn new(
        datasets: &[KernelData<'a>],
        num_kernels: usize,
        prior: KernelPrior,
        eta_w: f64,
        eta_y: f64,
    ) -> Result<Self> {
        prior.validate()?;
        if num_kernels == 0 {
            return Err(SgklError::InvalidParameter(
                "need at least one kernel".into(),
            ));
        }
        let graphs = datasets
            .iter()
            .map(|d| Prepared::new(*d, num_kernels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graphs,
            prior,
            eta_w,
            eta_y,
            num_kernels,
        })
    }

    fn check(&self, psi: &KernelParamVector) -> Result<()> {
        if psi.num_kernels() != self.num_kernels {
            return Err(SgklError::ShapeMismatch(format!(
                "psi has {} kernels, coefficients were built for {}",
                psi.num_kernels(),
                self.num_kernels
            )));
        }
        Ok(())
    }

    /// Unweighted `(fidelity, smoothness)` summed over graphs.
    pub fn data_terms(&self, psi: &KernelParamVector) -> Result<(f64, f64)> {
        self.check(psi)?;
        let per: Vec<(f64, f64)> = self
            .graphs
            .par_iter()
            .map(|g| g.terms(&psi.responses(&g.data.spectral.eigenvalues)))
            .collect();
        Ok(per.iter().fold((0.0, 0.0), |(a, b), (f, s)| (a + f, b + s)))
    }

    pub fn value(&self, psi: &KernelParamVector) -> Result<f64> {
        let (fid, smooth) = self.data_terms(psi)?;
        Ok(self.prior.value(psi) + self.eta_w * fid + self.eta_y * smooth)
    }

    pub fn gradient(&self, psi: &KernelParamVector) -> Result<Vec<f64>> {
        self.check(psi)?;
        let per: Vec<Vec<f64>> = self
            .graphs
            .par_iter()
            .map(|g| {
                let dec = g.data.spectral;
                let resp = psi.responses(&dec.eigenvalues);
                let dg = g.response_gradient(&resp, self.eta_w, self.eta_y);
                kernel_param_jacobian(dec, psi).chain(&dg)
            })
            .collect();
        let mut grad = self.prior.gradient(psi);
        for contribution in &per {
            for (a, b) in grad.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        Ok(grad)
    }
}

/// `f(ψ)` over all graphs.
pub fn objective_psi(
    psi: &KernelParamVector,
    datasets: &[KernelData<'_>],
    prior: KernelPrior,
    eta_w: f64,
    eta_y: f64,
) -> Result<f64> {
    KernelObjective::new(datasets, psi.num_kernels(), prior, eta_w, eta_y)?.value(psi)
}

/// `∇f(ψ)` laid out as `[∂μ_1..∂μ_J, ∂s_1..∂s_J]`.
pub fn gradient_psi(
    psi: &KernelParamVector,
    datasets: &[KernelData<'_>],
    prior: KernelPrior,
    eta_w: f64,
    eta_y: f64,
) -> Result<Vec<f64>> {
    KernelObjective::new(datasets, psi.num_kernels(), prior, eta_w, eta_y)?.gradient(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentStep {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    /// Row 0 is the starting point with step 0; later rows follow accepted
    /// steps.
    pub steps: Vec<DescentStep>,
    pub converged: bool,
    /// A line search exhausted its backtracks.
    pub stalled: bool,
    pub clamped: bool,
}

impl DescentTrace {
    pub fn final_value(&self) -> Option<f64> {
        self.steps.last().map(|s| s.f)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "f", "grad_norm", "step"])?;
        for s in &self.steps {
            w.write_record([
                s.iter.to_string(),
                s.f.to_string(),
                s.grad_norm.to_string(),
                s.step.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn blow_up(what: &str, psi: &KernelParamVector) -> SgklError {
    SgklError::NumericalBlowUp {
        message: format!("non-finite {what} during kernel descent"),
        psi: psi.to_flat(),
    }
}

/// Projected Armijo gradient descent from `psi0`.
pub fn descend(
    psi0: &KernelParamVector,
    objective: &KernelObjective<'_>,
    cfg: &DescentConfig,
) -> Result<(KernelParamVector, DescentTrace)> {
    cfg.validate()?;
    psi0.validate()?;
    let mut psi = psi0.clone();
    let mut f = objective.value(&psi)?;
    if !f.is_finite() {
        return Err(blow_up("objective", &psi));
    }
    let mut grad = objective.gradient(&psi)?;
    let mut trace = DescentTrace::default();
    let mut step = cfg.initial_step;
    for iter in 0..=cfg.max_steps {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !gnorm.is_finite() {
            return Err(blow_up("gradient", &psi));
        }
        trace.steps.push(DescentStep {
            iter,
            f,
            grad_norm: gnorm,
            step: if iter == 0 { 0.0 } else { step },
        });
        if gnorm <= cfg.grad_tol * (1.0 + f.abs()) {
            trace.converged = true;
            break;
        }
        if iter == cfg.max_steps {
            break;
        }
        let flat = psi.to_flat();
        let direction = if cfg.precondition {
            let scale = diagonal_scaling(objective, &flat, &grad)?;
            grad.iter().zip(&scale).map(|(g, d)| g * d).collect()
        } else {
            grad.clone()
        };
        let mut t = if cfg.grow_step && iter > 0 {
            step / cfg.beta
        } else {
            cfg.initial_step
        };
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<f64> = flat
                .iter()
                .zip(&direction)
                .map(|(p, d)| p - t * d)
                .collect();
            let mut cand = KernelParamVector::from_flat(&trial);
            let clamped = cand.clamp_scales();
            let f_new = objective.value(&cand)?;
            if !f_new.is_finite() {
                t *= cfg.beta;
                continue;
            }
            // sufficient decrease along the projected step
            let moved: f64 = cand
                .to_flat()
                .iter()
                .zip(&flat)
                .zip(&grad)
                .map(|((c, p), g)| g * (c - p))
                .sum();
            if f_new < f && f_new <= f + cfg.c * moved {
                accepted = Some((cand, f_new, clamped));
                break;
            }
            t *= cfg.beta;
        }
        let Some((cand, f_new, clamped)) = accepted else {
            trace.stalled = true;
            break;
        };
        if clamped {
            trace.clamped = true;
            log::warn!("kernel scale clamped to its floor at descent step {iter}");
        }
        psi = cand;
        f = f_new;
        step = t;
        grad = objective.gradient(&psi)?;
    }
    Ok((psi, trace))
}

/// Inverse magnitudes of the Hessian diagonal, estimated by forward
/// differences of the gradient. Tiny curvatures are floored relative to the
/// largest one.
fn diagonal_scaling(
    objective: &KernelObjective<'_>,
    flat: &[f64],
    grad: &[f64],
) -> Result<Vec<f64>> {
    let mut curv = Vec::with_capacity(flat.len());
    for k in 0..flat.len() {
        let h = 1e-6 * flat[k].abs().max(1.0);
        let mut shifted = flat.to_vec();
        shifted[k] += h;
        let g = objective.gradient(&KernelParamVector::from_flat(&shifted))?;
        curv.push(((g[k] - grad[k]) / h).abs());
    }
    let top = curv.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) || !top.is_finite() {
        return Ok(vec![1.0; flat.len()]);
    }
    let floor = 1e-10 * top;
    Ok(curv
        .iter()
        .map(|c| {
            if c.is_finite() {
                1.0 / c.max(floor)
            } else {
                1.0 / top
            }
        })
        .collect())
}

/// Convenience wrapper building the objective from raw datasets.
pub fn descend_on(
    psi0: &KernelParamVector,
    datasets: &[KernelData<'_>],
    prior: KernelPrior,
    eta_w: f64,
    eta_y: f64,
    cfg: &DescentConfig,
) -> Result<(KernelParamVector, DescentTrace)> {
    let obj = KernelObjective::new(datasets, psi0.num_kernels(), prior, eta_w, eta_y)?;
    descend(psi0, &obj, cfg)
}
