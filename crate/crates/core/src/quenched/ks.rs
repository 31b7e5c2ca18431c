use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LabError, Result};

/// Half-width of the window treated as "at zero" in the degenerate branch.
pub const DEGENERATE_EPS: f64 = 1e-8;
/// Variances at or below this are compared against a point mass at 0.
pub const DEGENERATE_SIGMA_SQ: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsOutcome {
    pub distance: f64,
    /// σ² is (numerically) zero but some samples lie away from 0.
    pub degenerate_mismatch: bool,
}

/// `1.36/√R + c_bias`.
pub fn ks_tol(replicas: usize, c_bias: f64) -> f64 {
    1.36 / (replicas as f64).sqrt() + c_bias
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// `N(0, σ²)`. Ties are handled by checking both sides of each jump.
pub fn ks_distance(samples: &[f64], sigma_sq: f64) -> Result<KsOutcome> {
    if samples.is_empty() {
        return Err(LabError::InvalidArgument(
            "ks_distance needs samples".into(),
        ));
    }
    if samples.iter().any(|s| !s.is_finite()) || !sigma_sq.is_finite() || sigma_sq < 0.0 {
        return Err(LabError::InvalidArgument(
            "non-finite sample or variance".into(),
        ));
    }
    let r = samples.len() as f64;
    if sigma_sq <= DEGENERATE_SIGMA_SQ {
        let outside = samples.iter().filter(|s| s.abs() > DEGENERATE_EPS).count();
        return Ok(KsOutcome {
            distance: outside as f64 / r,
            degenerate_mismatch: outside > 0,
        });
    }
    let normal = Normal::new(0.0, sigma_sq.sqrt()).expect("positive scale");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distance: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let phi = normal.cdf(x);
        distance = distance
            .max((phi - i as f64 / r).abs())
            .max((phi - j as f64 / r).abs());
        i = j;
    }
    Ok(KsOutcome {
        distance: distance.min(1.0),
        degenerate_mismatch: false,
    })
}
