//! Cluster-based scoring of absorption-stage (tail) fidelity.
//!
//! Each curve's absorption segment is resampled to a fixed feature length
//! and amplitude-normalized by its bulk plateau, so clusters separate by
//! tail duration and decline shape rather than raw rate scale. Real tails
//! are clustered; generated tails are assigned to the nearest centroid; the
//! score is the mean L1 distance between per-cluster value CDFs.

use ndarray::{Array2, ArrayView2};

use super::kmeans::{kmeans, nearest_centroid};
use super::segment::{segment_values, DEFAULT_THETA};
use super::EvalError;

/// Resampled tail length.
const TAIL_FEATURE_LEN: usize = 64;
/// Evaluation grid size for the CDF distance.
const CDF_GRID: usize = 100;
/// Moving-average window for duration recovery (minutes).
const RECOVERY_WINDOW: usize = 15;
/// Duration recovery threshold as a fraction of the corpus maximum rate.
const RECOVERY_FRACTION: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct TailScore {
    pub mean: f64,
    pub std: f64,
    pub per_cluster: Vec<f64>,
    /// Clusters that attracted no generated tails; these contribute the
    /// maximum distance 1 to the mean.
    pub empty_clusters: Vec<usize>,
}

/// Recovers the unpadded duration of a sampled curve: the prefix ending at
/// the last index where the forward 15-min moving average exceeds
/// `threshold` (an absolute rate).
pub fn recover_valid_len(values: &[f64], threshold: f64) -> usize {
    let len = values.len();
    let mut last = None;
    for i in 0..len {
        let hi = (i + RECOVERY_WINDOW).min(len);
        let ma = values[i..hi].iter().sum::<f64>() / (hi - i) as f64;
        if ma > threshold {
            last = Some(i);
        }
    }
    last.map_or(0, |i| i + 1)
}

/// Recovery threshold for a reference corpus: 2% of its maximum rate.
/// Generated corpora are cut against the *reference* (real) threshold, so a
/// few overshooting samples cannot silence every low-rate curve.
pub fn recovery_threshold(reference: &ArrayView2<f64>) -> f64 {
    RECOVERY_FRACTION * reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Recovered durations (in samples) for every row, against the given
/// absolute threshold.
pub fn recover_durations_with(rows: &ArrayView2<f64>, threshold: f64) -> Vec<usize> {
    rows.rows()
        .into_iter()
        .map(|r| recover_valid_len(r.as_slice().unwrap(), threshold))
        .collect()
}

/// Recovered durations thresholded against the corpus's own maximum; use
/// [`recover_durations_with`] and a real-corpus threshold when scoring
/// generated data.
pub fn recover_durations(rows: &ArrayView2<f64>) -> Vec<usize> {
    recover_durations_with(rows, recovery_threshold(rows))
}

fn resample(values: &[f64], target: usize) -> Vec<f64> {
    let n = values.len();
    if n == 1 {
        return vec![values[0]; target];
    }
    (0..target)
        .map(|i| {
            let pos = i as f64 * (n - 1) as f64 / (target - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            values[lo] * (1.0 - frac) + values[hi] * frac
        })
        .collect()
}

/// Normalized tail features of a corpus: one row per curve with a usable
/// absorption segment.
fn tail_features(rows: &ArrayView2<f64>, threshold: f64) -> Vec<Vec<f64>> {
    let mut features = Vec::new();
    for row in rows.rows() {
        let values = row.as_slice().unwrap();
        let valid = recover_valid_len(values, threshold);
        let Ok(seg) = segment_values(values, valid, DEFAULT_THETA) else {
            continue;
        };
        if seg.bulk_only || seg.absorption_range().len() < 2 || seg.plateau <= 0.0 {
            continue;
        }
        let tail: Vec<f64> = values[seg.absorption_range()].iter().map(|v| v / seg.plateau).collect();
        features.push(resample(&tail, TAIL_FEATURE_LEN));
    }
    features
}

fn cdf_l1(a: &[f64], b: &[f64]) -> f64 {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return 0.0;
    }
    let mut asorted = a.to_vec();
    let mut bsorted = b.to_vec();
    asorted.sort_by(f64::total_cmp);
    bsorted.sort_by(f64::total_cmp);
    let ecdf = |sorted: &[f64], x: f64| sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64;
    let mut total = 0.0;
    for g in 0..CDF_GRID {
        let x = lo + (hi - lo) * g as f64 / (CDF_GRID - 1) as f64;
        total += (ecdf(&asorted, x) - ecdf(&bsorted, x)).abs();
    }
    total / CDF_GRID as f64
}

/// Tail score between a real and a generated corpus (rows = curves in raw
/// units). Both sides go through the same duration-recovery and
/// segmentation pipeline.
pub fn tail_score(
    real: &ArrayView2<f64>,
    generated: &ArrayView2<f64>,
    k: usize,
    run_seed: u64,
) -> Result<TailScore, EvalError> {
    let threshold = recovery_threshold(real);
    let real_feats = tail_features(real, threshold);
    let gen_feats = tail_features(generated, threshold);
    if real_feats.len() < k {
        return Err(EvalError::TooFewPoints { have: real_feats.len(), need: k });
    }
    if gen_feats.is_empty() {
        return Err(EvalError::TooFewPoints { have: 0, need: 1 });
    }

    let dim = TAIL_FEATURE_LEN;
    let real_matrix = Array2::from_shape_fn((real_feats.len(), dim), |(i, j)| real_feats[i][j]);
    let clustering = kmeans(&real_matrix.view(), k, 10, run_seed)?;

    let gen_assign: Vec<usize> = gen_feats
        .iter()
        .map(|f| nearest_centroid(&clustering.centroids, f))
        .collect();

    let mut per_cluster = Vec::with_capacity(k);
    let mut empty_clusters = Vec::new();
    for c in 0..k {
        let real_pool: Vec<f64> = real_feats
            .iter()
            .zip(&clustering.assignments)
            .filter(|(_, &a)| a == c)
            .flat_map(|(f, _)| f.iter().copied())
            .collect();
        let gen_pool: Vec<f64> = gen_feats
            .iter()
            .zip(&gen_assign)
            .filter(|(_, &a)| a == c)
            .flat_map(|(f, _)| f.iter().copied())
            .collect();
        if real_pool.is_empty() {
            continue;
        }
        if gen_pool.is_empty() {
            empty_clusters.push(c);
            per_cluster.push(1.0);
        } else {
            per_cluster.push(cdf_l1(&real_pool, &gen_pool));
        }
    }

    let n = per_cluster.len() as f64;
    let mean = per_cluster.iter().sum::<f64>() / n;
    let var = per_cluster.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(TailScore { mean, std: var.sqrt(), per_cluster, empty_clusters })
}
