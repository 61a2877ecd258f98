use nalgebra::DMatrix;

use crate::error::{Result, SgklError};

/// Signal matrix (nodes × signals) with per-signal observation masks.
///
/// Unobserved entries are stored as zero; no consumer reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSignalSet {
    values: DMatrix<f64>,
    masks: Vec<Vec<bool>>,
}

impl ObservedSignalSet {
    pub fn new(mut values: DMatrix<f64>, masks: Vec<Vec<bool>>) -> Result<Self> {
        let (n, k) = values.shape();
        if masks.len() != k {
            return Err(SgklError::ShapeMismatch(format!(
                "{} masks for {} signals",
                masks.len(),
                k
            )));
        }
        for (i, mask) in masks.iter().enumerate() {
            if mask.len() != n {
                return Err(SgklError::ShapeMismatch(format!(
                    "mask {i} has length {}, expected {n}",
                    mask.len()
                )));
            }
            if !mask.iter().any(|&b| b) {
                return Err(SgklError::EmptyMask(i));
            }
            for (r, &obs) in mask.iter().enumerate() {
                if obs {
                    if !values[(r, i)].is_finite() {
                        return Err(SgklError::InvalidParameter(format!(
                            "observed entry ({r},{i}) is not finite"
                        )));
                    }
                } else {
                    values[(r, i)] = 0.0;
                }
            }
        }
        Ok(Self { values, masks })
    }

    /// Every entry observed.
    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self> {
        let (n, k) = values.shape();
        Self::new(values, vec![vec![true; n]; k])
    }

    /// Non-finite entries (NaN) are treated as missing.
    pub fn from_nan_encoded(values: DMatrix<f64>) -> Result<Self> {
        let masks = values
            .column_iter()
            .map(|c| c.iter().map(|v| v.is_finite()).collect())
            .collect();
        Self::new(values, masks)
    }

    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn signal_count(&self) -> usize {
        self.values.ncols()
    }

    /// Observed values with zeros at unobserved entries.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn mask(&self, i: usize) -> &[bool] {
        &self.masks[i]
    }

    pub fn observed_indices(&self, i: usize) -> Vec<usize> {
        self.masks[i]
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(r, _)| r)
            .collect()
    }

    pub fn observed_count(&self, i: usize) -> usize {
        self.masks[i].iter().filter(|&&b| b).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        let total: usize = (0..self.signal_count())
            .map(|i| self.observed_count(i))
            .sum();
        total as f64 / (self.node_count() * self.signal_count()).max(1) as f64
    }

    /// 0/1 matrix of the masks, same shape as the values.
    pub fn mask_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.node_count(), self.signal_count(), |r, c| {
            if self.masks[c][r] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// NaN-encoded copy, used for writing.
    pub fn to_nan_encoded(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.node_count(), self.signal_count(), |r, c| {
            if self.masks[c][r] {
                self.values[(r, c)]
            } else {
                f64::NAN
            }
        })
    }

    /// Column-wise concatenation of two sets on the same node set.
    pub fn concat(&self, other: &ObservedSignalSet) -> Result<ObservedSignalSet> {
        if self.node_count() != other.node_count() {
            return Err(SgklError::ShapeMismatch(format!(
                "node counts differ: {} vs {}",
                self.node_count(),
                other.node_count()
            )));
        }
        let n = self.node_count();
        let k = self.signal_count() + other.signal_count();
        let values = DMatrix::from_fn(n, k, |r, c| {
            if c < self.signal_count() {
                self.values[(r, c)]
            } else {
                other.values[(r, c - self.signal_count())]
            }
        });
        let masks = self
            .masks
            .iter()
            .chain(other.masks.iter())
            .cloned()
            .collect();
        ObservedSignalSet::new(values, masks)
    }
}
