//! Learning narrowband Gaussian spectral-kernel dictionaries from partially
//! observed graph signals, and interpolating the missing entries.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coder;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod kernel_opt;
pub mod learner;

#[cfg(test)]
mod testing;

pub use coder::{AdmmConfig, CoefficientMatrix};
pub use config::Weights;
pub use dictionary::{build_dictionary, Dictionary, KernelParamVector};
pub use error::{Result, SgklError};
pub use graph::{Graph, ObservedSignalSet};
pub use kernel_opt::{DescentConfig, KernelPrior};
pub use learner::{
    fit, fit_from, infer_inductive, restore, Checkpoint, GraphDataset, SgklConfig, SgklModel,
};
