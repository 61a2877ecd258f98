use serde::{Deserialize, Serialize};

use crate::error::{Result, SgklError};

/// Weights of the regularized objective.
///
/// `eta_s` pulls the kernel scales toward their nominal value, `eta_x`
/// weighs the ℓ1 penalty, `eta_w` the masked data fidelity, `eta_y` the
/// Laplacian smoothness of the reconstructions and `eta_c` the coupling of
/// coefficient rows over the signal graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub eta_s: f64,
    pub eta_x: f64,
    pub eta_w: f64,
    pub eta_y: f64,
    pub eta_c: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            eta_s: 1e8,
            eta_x: 500.0,
            eta_w: 1e5,
            eta_y: 1e2,
            eta_c: 1e3,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_s", self.eta_s),
            ("eta_x", self.eta_x),
            ("eta_w", self.eta_w),
            ("eta_y", self.eta_y),
            ("eta_c", self.eta_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SgklError::InvalidParameter(format!(
                    "{name} must be a nonnegative finite number, got {v}"
                )));
            }
        }
        Ok(())
    }
}
