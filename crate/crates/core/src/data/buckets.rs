//! Ordinal value buckets fit on training labels.
//!
//! Buckets are indexed `0..K`; bucket 0 is the zero bucket. Threshold `k`
//! separates bucket `k` from bucket `k + 1`, and a label equal to a threshold
//! belongs to the lower bucket.

use serde::{Deserialize, Serialize};

use super::stats::{quantile_sorted, sorted_copy};
use crate::error::{LtvError, Result};

/// Labels with magnitude at most this are zero-value users.
pub const ZERO_TOLERANCE: f64 = 1e-6;
/// Quantile of the non-zero labels used as the upper edge of the top bucket.
pub const TOP_CAP_QUANTILE: f64 = 0.995;
/// Half-range used when a bucket's value range has zero width.
pub const DEGENERATE_HALF_RANGE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub thresholds: Vec<f64>,
    pub centers: Vec<f64>,
    pub half_ranges: Vec<f64>,
    pub top_cap: f64,
}

impl BucketSpec {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn top(&self) -> usize {
        self.k() - 1
    }

    pub fn assign(&self, y: f64) -> usize {
        self.thresholds
            .iter()
            .position(|&t| y <= t)
            .unwrap_or(self.k() - 1)
    }

    /// `clamp((y − c_b) / r_b, −1, 1)`.
    pub fn normalize(&self, y: f64, bucket: usize) -> f64 {
        ((y - self.centers[bucket]) / self.half_ranges[bucket]).clamp(-1.0, 1.0)
    }

    /// Value range `[lo, hi]` covered by a bucket.
    pub fn range(&self, bucket: usize) -> (f64, f64) {
        (
            self.centers[bucket] - self.half_ranges[bucket],
            self.centers[bucket] + self.half_ranges[bucket],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 || self.thresholds.len() != k - 1 || self.half_ranges.len() != k {
            return Err(LtvError::config("bucket spec lengths are inconsistent"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LtvError::config("bucket thresholds must be strictly ascending"));
        }
        if self.half_ranges.iter().any(|&r| !(r > 0.0)) {
            return Err(LtvError::config("bucket half-ranges must be positive"));
        }
        Ok(())
    }
}

/// Quantile levels of the interior thresholds: the non-zero labels are split
/// at their median, and the upper half into equal-probability slices
/// (K = 4 gives the 50th and 75th percentiles).
pub fn interior_quantile_levels(k: usize) -> Vec<f64> {
    if k < 3 {
        return Vec::new();
    }
    (0..k - 2)
        .map(|j| 0.5 + 0.5 * j as f64 / (k - 2) as f64)
        .collect()
}

pub fn fit_bucket_spec(labels: &[f64], k: usize) -> Result<BucketSpec> {
    if k < 2 {
        return Err(LtvError::input("at least two buckets are required"));
    }
    let nonzero: Vec<f64> = labels.iter().copied().filter(|&y| y > ZERO_TOLERANCE).collect();
    if nonzero.is_empty() {
        return Err(LtvError::input("all labels are zero; cannot fit buckets"));
    }
    let sorted = sorted_copy(&nonzero);
    let distinct = 1 + sorted.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct < k - 1 {
        return Err(LtvError::input(format!(
            "{k} buckets need at least {} distinct non-zero labels, found {distinct}",
            k - 1
        )));
    }
    let mut thresholds = vec![ZERO_TOLERANCE];
    thresholds.extend(
        interior_quantile_levels(k)
            .into_iter()
            .map(|p| quantile_sorted(&sorted, p)),
    );
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LtvError::input(format!(
            "quantile thresholds {thresholds:?} are not strictly ascending"
        )));
    }
    let top_cap = quantile_sorted(&sorted, TOP_CAP_QUANTILE);

    let mut centers = vec![0.0];
    let mut half_ranges = vec![DEGENERATE_HALF_RANGE];
    for b in 1..k {
        let lo = thresholds[b - 1];
        let hi = if b == k - 1 { top_cap } else { thresholds[b] };
        let half = 0.5 * (hi - lo);
        if half > 0.0 {
            centers.push(0.5 * (lo + hi));
            half_ranges.push(half);
        } else {
            centers.push(lo);
            half_ranges.push(DEGENERATE_HALF_RANGE);
        }
    }
    let spec = BucketSpec {
        thresholds,
        centers,
        half_ranges,
        top_cap,
    };
    spec.validate()?;
    Ok(spec)
}
