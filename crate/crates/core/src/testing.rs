//! Independent reference solvers used by unit tests.

use nalgebra::{DMatrix, DVector};

use crate::coder::{soft_threshold, CodingOperator, SignalData};

/// Accelerated proximal gradient on the per-signal objective, assembled
/// densely from the dictionary atoms. Stops after `max_iters` or when the
/// iterate stops moving.
pub(crate) fn proximal_gradient_oracle(
    op: &CodingOperator<'_>,
    data: &SignalData<'_>,
    max_iters: usize,
) -> DVector<f64> {
    let w = *op.weights();
    let d = op.dictionary().atoms();
    let n = d.nrows();
    let s = DMatrix::from_fn(n, n, |a, b| if a == b && data.mask[a] { 1.0 } else { 0.0 });
    // smooth part: xᵀ H x - 2 cᵀ x
    let h = d.transpose() * &s * d * w.eta_w
        + d.transpose() * op.laplacian() * d * w.eta_y
        + DMatrix::identity(d.ncols(), d.ncols()) * (w.eta_c * data.coupling_diag);
    let c = d.transpose() * (&s * &data.y) * w.eta_w - &data.coupling_context * w.eta_c;
    let lip = 2.0 * h.clone().symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lip;
    let mut x = DVector::zeros(d.ncols());
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..max_iters {
        let grad = (&h * &y) * 2.0 - &c * 2.0;
        let next = soft_threshold(&(&y - grad * step), w.eta_x * step);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let delta = &next - &x;
        // restart momentum when it points uphill
        let restart = delta.dot(&(&y - &next)) > 0.0;
        y = if restart {
            next.clone()
        } else {
            &next + &delta * ((t - 1.0) / t_next)
        };
        t = if restart { 1.0 } else { t_next };
        let moved = delta.norm();
        x = next;
        if moved == 0.0 {
            break;
        }
    }
    x
}
