use nalgebra::DMatrix;

use crate::error::{Result, SgklError};
use crate::graph::ObservedSignalSet;

/// Squared error over the missing entries of all signals divided by the
/// squared norm of the true missing entries.
pub fn nmse(truth: &DMatrix<f64>, estimate: &DMatrix<f64>, masks: &[Vec<bool>]) -> Result<f64> {
    if truth.shape() != estimate.shape()
        || masks.len() != truth.ncols()
        || masks.iter().any(|m| m.len() != truth.nrows())
    {
        return Err(SgklError::ShapeMismatch(format!(
            "truth {:?}, estimate {:?}, {} masks",
            truth.shape(),
            estimate.shape(),
            masks.len()
        )));
    }
    let (mut err, mut energy) = (0.0, 0.0);
    for (c, mask) in masks.iter().enumerate() {
        for (r, &observed) in mask.iter().enumerate() {
            if !observed {
                let t = truth[(r, c)];
                err += (t - estimate[(r, c)]).powi(2);
                energy += t * t;
            }
        }
    }
    if energy == 0.0 {
        return Err(SgklError::DegenerateGroundTruth);
    }
    Ok(err / energy)
}

/// Fills each signal's missing entries with the mean of its observed ones.
pub fn mean_fill(signals: &ObservedSignalSet) -> DMatrix<f64> {
    let y = signals.values();
    let mut out = y.clone();
    for c in 0..signals.signal_count() {
        let mask = signals.mask(c);
        let mean = signals
            .observed_indices(c)
            .iter()
            .map(|&r| y[(r, c)])
            .sum::<f64>()
            / signals.observed_count(c) as f64;
        for (r, &observed) in mask.iter().enumerate() {
            if !observed {
                out[(r, c)] = mean;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masks() -> Vec<Vec<bool>> {
        vec![vec![true, false, false], vec![false, true, true]]
    }

    #[test]
    fn perfect_and_zero() {
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 4.0]);
        assert_eq!(nmse(&t, &t, &masks()).unwrap(), 0.0);
        assert_eq!(nmse(&t, &DMatrix::zeros(3, 2), &masks()).unwrap(), 1.0);
    }

    #[test]
    fn hand_example() {
        // missing: (1,0)=-1, (2,0)=3, (0,1)=2
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 4.0]);
        let e = DMatrix::from_row_slice(3, 2, &[9.0, 1.0, 0.0, 9.0, 3.0, 9.0]);
        // errors 1 + 0 + 1 over energy 1 + 9 + 4
        assert!((nmse(&t, &e, &masks()).unwrap() - 2.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_truth() {
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 2.0]);
        assert!(matches!(
            nmse(&t, &t, &masks()),
            Err(SgklError::DegenerateGroundTruth)
        ));
    }

    #[test]
    fn mean_fill_uses_observed_mean() {
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 100.0, 3.0]);
        let s = ObservedSignalSet::new(y, vec![vec![true, false, true]]).unwrap();
        assert_eq!(mean_fill(&s)[(1, 0)], 2.0);
        assert_eq!(mean_fill(&s)[(0, 0)], 1.0);
    }
}
