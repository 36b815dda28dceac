//! Chi-square goodness of fit against the uniform distribution on `[0, q)`.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// p-value floor for the uniformity checks.
pub const UNIFORMITY_P_THRESHOLD: f64 = 0.001;

/// Bin count used by every uniformity check.
pub const UNIFORMITY_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub samples: usize,
}

/// Bins values of `[0, q)` into `bins` equal-width buckets and tests the
/// counts against a flat expectation.
pub fn chi_square_uniform(values: &[u64], q: u64, bins: usize) -> ChiSquare {
    assert!(bins >= 2, "need at least two bins");
    let mut counts = vec![0u64; bins];
    for &v in values {
        debug_assert!(v < q);
        let bin = (v as u128 * bins as u128 / q as u128) as usize;
        counts[bin] += 1;
    }
    // bucket widths differ by at most one element; use exact probabilities
    let n = values.len() as f64;
    let statistic = counts
        .iter()
        .enumerate()
        .map(|(b, &observed)| {
            let lo = (b as u128 * q as u128).div_ceil(bins as u128);
            let hi = ((b as u128 + 1) * q as u128).div_ceil(bins as u128);
            let expected = n * (hi - lo) as f64 / q as f64;
            let diff = observed as f64 - expected;
            diff * diff / expected
        })
        .sum::<f64>();
    let dof = bins - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    ChiSquare {
        statistic,
        degrees_of_freedom: dof,
        p_value: dist.sf(statistic),
        samples: values.len(),
    }
}
