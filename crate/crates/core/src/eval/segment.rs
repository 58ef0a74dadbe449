//! Bulk/absorption segmentation of battery charging curves.
//!
//! The bulk stage is the near-constant high-rate phase; the absorption stage
//! is the declining tail. The split point is found from a forward-looking
//! 5-min moving average: once that average falls below `theta` times the
//! bulk plateau level and never recovers, absorption has begun. The forward
//! window makes the detector anticipate a gradual decline instead of lagging
//! behind it.

use super::EvalError;
use crate::ingest::ChargingCurve;

/// Fraction of the plateau level below which the curve counts as declining.
pub const DEFAULT_THETA: f64 = 0.9;
/// Moving-average window (samples = minutes) used for the split detector.
const SPLIT_WINDOW: usize = 5;
/// Shortest curve that can be segmented meaningfully.
const MIN_VALID_LEN: usize = 10;

/// One curve's split into bulk `[0, split)` and absorption `[split, valid_len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSegmentation {
    pub split: usize,
    pub valid_len: usize,
    /// Set when the curve never declines (plateau until cutoff); tail
    /// analyses skip such curves.
    pub bulk_only: bool,
    /// Bulk plateau level the split was measured against.
    pub plateau: f64,
}

impl CurveSegmentation {
    pub fn bulk_range(&self) -> std::ops::Range<usize> {
        0..self.split
    }

    pub fn absorption_range(&self) -> std::ops::Range<usize> {
        self.split..self.valid_len
    }
}

/// Forward moving average: mean of `values[i..i+window]`, truncated at `len`.
fn forward_ma(values: &[f64], len: usize, window: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let hi = (i + window).min(len);
            values[i..hi].iter().sum::<f64>() / (hi - i) as f64
        })
        .collect()
}

/// Segments the valid prefix of a curve given its true duration.
pub fn segment_values(values: &[f64], valid_len: usize, theta: f64) -> Result<CurveSegmentation, EvalError> {
    if valid_len < MIN_VALID_LEN || valid_len > values.len() {
        return Err(EvalError::CurveTooShort { valid_len, min: MIN_VALID_LEN });
    }
    let ma = forward_ma(values, valid_len, SPLIT_WINDOW);
    let plateau = ma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = theta * plateau;
    let last_high = ma.iter().rposition(|&v| v >= threshold);
    let split = last_high.map_or(0, |i| i + 1);
    Ok(CurveSegmentation { split, valid_len, bulk_only: split >= valid_len, plateau })
}

/// Segments an ingested curve with the default threshold.
pub fn segment_curve(curve: &ChargingCurve) -> Result<CurveSegmentation, EvalError> {
    segment_values(&curve.values, curve.valid_len, DEFAULT_THETA)
}
