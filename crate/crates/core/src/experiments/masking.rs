use rand::seq::index::sample;

use super::synthetic::stream;
use crate::error::{Result, SgklError};

/// Per-signal observation masks hiding exactly `round(ratio·n)` uniformly
/// chosen nodes of each of `k` signals.
pub fn apply_mask(n: usize, k: usize, ratio: f64, seed: u64) -> Result<Vec<Vec<bool>>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(SgklError::InvalidParameter(format!(
            "missing ratio must lie in [0, 1), got {ratio}"
        )));
    }
    let hidden = (ratio * n as f64).round() as usize;
    if hidden >= n {
        return Err(SgklError::InvalidParameter(format!(
            "missing ratio {ratio} leaves no observed entry on {n} nodes"
        )));
    }
    let mut rng = stream(seed, 3);
    Ok((0..k)
        .map(|_| {
            let mut mask = vec![true; n];
            for r in sample(&mut rng, n, hidden).iter() {
                mask[r] = false;
            }
            mask
        })
        .collect())
}
