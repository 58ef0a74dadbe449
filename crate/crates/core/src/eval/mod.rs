//! Generation-quality metrics and corpus analyses: marginal / discriminative
//! / tail scores, charging-duration PDF, bulk-stage rate density,
//! autocorrelation, and the 2-D projection export consumed by external
//! embedding tools.

mod discriminative;
mod kmeans;
mod segment;
mod tail;

pub use discriminative::{discriminative_score, DiscriminativeScore};
pub use kmeans::{kmeans, nearest_centroid, KmeansResult};
pub use segment::{segment_curve, segment_values, CurveSegmentation, DEFAULT_THETA};
pub use tail::{
    recover_durations, recover_durations_with, recover_valid_len, recovery_threshold, tail_score,
    TailScore,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::engine::EngineError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {need} points, have {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("pooled value range is degenerate (all values equal)")]
    DegenerateRange,
    #[error("curve too short to segment: valid_len {valid_len} < {min}")]
    CurveTooShort { valid_len: usize, min: usize },
    #[error("curve too short for lag {max_lag}: valid_len {valid_len}")]
    CurveTooShortForLag { valid_len: usize, max_lag: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub const DEFAULT_MARGINAL_BINS: usize = 50;
pub const DEFAULT_TAIL_CLUSTERS: usize = 7;
pub const DEFAULT_ACF_MAX_LAG: usize = 48;
pub const DEFAULT_DURATION_BIN_MINUTES: usize = 30;

/// Total-variation distance between the pooled value distributions of two
/// corpora, over `bins` shared-range bins. 0 = identical, 1 = disjoint.
pub fn marginal_score(real: &ArrayView2<f64>, generated: &ArrayView2<f64>, bins: usize) -> Result<f64, EvalError> {
    if real.is_empty() || generated.is_empty() || bins == 0 {
        return Err(EvalError::TooFewPoints { have: 0, need: 1 });
    }
    let lo = real.iter().chain(generated.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = real.iter().chain(generated.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(EvalError::DegenerateRange);
    }
    let hist = |values: &ArrayView2<f64>| -> Vec<f64> {
        let mut counts = vec![0.0; bins];
        for &v in values.iter() {
            let idx = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            counts[idx.min(bins - 1)] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    };
    let p = hist(real);
    let q = hist(generated);
    Ok(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Normalized histogram of charging durations (given in minutes) over
/// (0, 12 h] with `bin_minutes`-wide bins.
pub fn duration_pdf(durations_min: &[usize], bin_minutes: usize) -> Result<Vec<f64>, EvalError> {
    if durations_min.is_empty() || bin_minutes == 0 {
        return Err(EvalError::TooFewPoints { have: 0, need: 1 });
    }
    let n_bins = crate::ingest::CURVE_LEN.div_ceil(bin_minutes);
    let mut hist = vec![0.0; n_bins];
    let mut counted = 0.0;
    for &d in durations_min {
        if d == 0 {
            continue;
        }
        let bin = ((d - 1) / bin_minutes).min(n_bins - 1);
        hist[bin] += 1.0;
        counted += 1.0;
    }
    if counted == 0.0 {
        return Err(EvalError::TooFewPoints { have: 0, need: 1 });
    }
    hist.iter_mut().for_each(|h| *h /= counted);
    Ok(hist)
}

/// Total-variation distance between two normalized histograms of equal size.
pub fn histogram_tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Sample autocorrelation over the valid (unpadded) prefix, for lags
/// `0..=max_lag`. Index 0 is 1 by convention.
pub fn autocorrelation(values: &[f64], valid_len: usize, max_lag: usize) -> Result<Vec<f64>, EvalError> {
    if valid_len <= max_lag || valid_len > values.len() {
        return Err(EvalError::CurveTooShortForLag { valid_len, max_lag });
    }
    let x = &values[..valid_len];
    let n = valid_len as f64;
    let mean = x.iter().sum::<f64>() / n;
    let denom: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(1.0);
    for lag in 1..=max_lag {
        if denom == 0.0 {
            acf.push(0.0);
            continue;
        }
        let num: f64 = (0..valid_len - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
        acf.push(num / denom);
    }
    Ok(acf)
}

/// Histogram plus Gaussian-kernel density of pooled bulk-stage rates.
#[derive(Debug, Clone)]
pub struct RateDensity {
    /// `(bin_center, probability)` with probabilities summing to 1.
    pub histogram: Vec<(f64, f64)>,
    /// `(x, density)` samples of the smoothed KDE.
    pub density: Vec<(f64, f64)>,
    pub bandwidth: f64,
}

impl RateDensity {
    /// x positions of local maxima of the smoothed density.
    pub fn modes(&self) -> Vec<f64> {
        let d = &self.density;
        let mut modes = Vec::new();
        for i in 1..d.len().saturating_sub(1) {
            if d[i].1 > d[i - 1].1 && d[i].1 >= d[i + 1].1 {
                modes.push(d[i].0);
            }
        }
        modes
    }
}

/// Pools bulk-stage rate values from every segmentable curve and returns
/// their normalized histogram and a Silverman-bandwidth KDE. Durations are
/// recovered against the corpus's own maximum; use
/// [`bulk_rate_density_with`] to score a generated corpus against a real
/// reference threshold.
pub fn bulk_rate_density(rows: &ArrayView2<f64>, bins: usize) -> Result<RateDensity, EvalError> {
    bulk_rate_density_with(rows, bins, tail::recovery_threshold(rows))
}

/// Bulk-stage density with an explicit duration-recovery threshold.
pub fn bulk_rate_density_with(rows: &ArrayView2<f64>, bins: usize, threshold: f64) -> Result<RateDensity, EvalError> {
    let durations = recover_durations_with(rows, threshold);
    let mut pool = Vec::new();
    for (row, &valid) in rows.rows().into_iter().zip(&durations) {
        let values = row.as_slice().unwrap();
        let Ok(seg) = segment_values(values, valid, DEFAULT_THETA) else {
            continue;
        };
        pool.extend_from_slice(&values[seg.bulk_range()]);
    }
    density_of_values(&pool, bins)
}

/// Histogram + KDE of an arbitrary pooled sample.
pub fn density_of_values(pool: &[f64], bins: usize) -> Result<RateDensity, EvalError> {
    if pool.len() < 2 || bins == 0 {
        return Err(EvalError::TooFewPoints { have: pool.len(), need: 2 });
    }
    let lo = pool.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pool.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(EvalError::DegenerateRange);
    }

    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0.0; bins];
    for &v in pool {
        let idx = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        hist[idx.min(bins - 1)] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    let histogram: Vec<(f64, f64)> = hist
        .iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c / total))
        .collect();

    // Silverman's rule: 0.9 min(sigma, IQR/1.34) n^(-1/5).
    let n = pool.len() as f64;
    let mean = pool.iter().sum::<f64>() / n;
    let sigma = (pool.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = pool.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    let bandwidth = (0.9 * spread * n.powf(-0.2)).max(1e-9);

    let grid_n = 256;
    let pad = 3.0 * bandwidth;
    let (glo, ghi) = (lo - pad, hi + pad);
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<(f64, f64)> = (0..grid_n)
        .map(|g| {
            let x = glo + (ghi - glo) * g as f64 / (grid_n - 1) as f64;
            let f = pool.iter().map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm;
            (x, f)
        })
        .collect();

    Ok(RateDensity { histogram, density, bandwidth })
}

/// Trapezoid integral of the KDE (for normalization checks).
pub fn density_integral(density: &[(f64, f64)]) -> f64 {
    density
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum()
}

/// Writes a labeled matrix (`source` in {real, gen} plus `t0001..tL`) for
/// external 2-D embedding tools.
pub fn export_projection_input(
    real: &ArrayView2<f64>,
    generated: &ArrayView2<f64>,
    path: &Path,
) -> Result<(), EvalError> {
    if real.is_empty() || generated.is_empty() {
        return Err(EvalError::TooFewPoints { have: 0, need: 1 });
    }
    if real.ncols() != generated.ncols() {
        return Err(EvalError::TooFewPoints { have: generated.ncols(), need: real.ncols() });
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let cols = real.ncols();
    let header: Vec<String> = std::iter::once("source".to_string())
        .chain((1..=cols).map(|i| format!("t{i:04}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (tag, matrix) in [("real", real), ("gen", generated)] {
        for row in matrix.rows() {
            let mut fields = vec![tag.to_string()];
            fields.extend(row.iter().map(|v| format!("{v}")));
            writeln!(w, "{}", fields.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a projection-input file back into (real, gen) matrices.
pub fn read_projection_input(path: &Path) -> Result<(Array2<f64>, Array2<f64>), EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(EngineError::from)?;
    let cols = reader.headers().map_err(EngineError::from)?.len() - 1;
    let mut real_rows: Vec<f64> = Vec::new();
    let mut gen_rows: Vec<f64> = Vec::new();
    let (mut n_real, mut n_gen) = (0usize, 0usize);
    for record in reader.records() {
        let record = record.map_err(EngineError::from)?;
        let is_real = record.get(0) == Some("real");
        let target = if is_real { &mut real_rows } else { &mut gen_rows };
        for field in record.iter().skip(1) {
            target.push(field.parse::<f64>().map_err(|_| {
                EvalError::Engine(EngineError::Format(format!("bad value '{field}'")))
            })?);
        }
        if is_real {
            n_real += 1;
        } else {
            n_gen += 1;
        }
    }
    let real = Array2::from_shape_vec((n_real, cols), real_rows)
        .map_err(|e| EvalError::Engine(EngineError::Format(e.to_string())))?;
    let generated = Array2::from_shape_vec((n_gen, cols), gen_rows)
        .map_err(|e| EvalError::Engine(EngineError::Format(e.to_string())))?;
    Ok((real, generated))
}

/// Aggregate metric report plus references to the analysis side files.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub marginal_score: f64,
    pub discriminative_mean: f64,
    pub discriminative_std: f64,
    pub tail_mean: f64,
    pub tail_std: f64,
    pub artifacts: Vec<(String, String)>,
}

impl MetricReport {
    /// Flat `key = value` serialization.
    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "marginal_score = {}", self.marginal_score)?;
        writeln!(w, "discriminative_score_mean = {}", self.discriminative_mean)?;
        writeln!(w, "discriminative_score_std = {}", self.discriminative_std)?;
        writeln!(w, "discriminative_score_ideal = {}", std::f64::consts::LN_2)?;
        writeln!(w, "tail_score_mean = {}", self.tail_mean)?;
        writeln!(w, "tail_score_std = {}", self.tail_std)?;
        for (name, file_ref) in &self.artifacts {
            writeln!(w, "artifact.{name} = {file_ref}")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn marginal_identical_is_zero() {
        let a = ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(marginal_score(&a.view(), &a.view(), 50).unwrap(), 0.0);
    }

    #[test]
    fn marginal_disjoint_is_one() {
        let a = Array2::from_elem((5, 10), 1.0);
        let b = Array2::from_elem((5, 10), 100.0);
        // Constant corpora pool to two spikes at the range ends.
        assert!((marginal_score(&a.view(), &b.view(), 50).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Array2::from_shape_fn((20, 10), |_| rng.random_range(0.0..1.0));
        let b = Array2::from_shape_fn((20, 10), |_| rng.random_range(0.5..1.5));
        let ab = marginal_score(&a.view(), &b.view(), 50).unwrap();
        let ba = marginal_score(&b.view(), &a.view(), 50).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn marginal_overlapping_uniforms() {
        // U(0,1) vs U(0.5,1.5) have TV distance 1/2.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_fn((100, 1000), |_| rng.random_range(0.0..1.0));
        let b = Array2::from_shape_fn((100, 1000), |_| rng.random_range(0.5..1.5));
        let tv = marginal_score(&a.view(), &b.view(), 50).unwrap();
        assert!((tv - 0.5).abs() < 0.02, "TV {tv} should be near 0.5");
    }

    #[test]
    fn marginal_degenerate_range_rejected() {
        let a = Array2::from_elem((3, 3), 2.0);
        assert!(matches!(marginal_score(&a.view(), &a.view(), 50), Err(EvalError::DegenerateRange)));
    }

    #[test]
    fn duration_histogram_properties() {
        // All 90-minute curves occupy exactly the 1.5 h bin.
        let hist = duration_pdf(&[90, 90, 90], 30).unwrap();
        assert_eq!(hist.len(), 24);
        assert!((hist[2] - 1.0).abs() < 1e-12, "90 min lands in bin (60, 90]");
        assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        // Support is capped at 12 h.
        let hist = duration_pdf(&[720, 719, 100000], 30).unwrap();
        assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(hist[23] > 0.0);
    }

    #[test]
    fn acf_lag_zero_is_one_and_white_noise_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let acf = autocorrelation(&noise, noise.len(), 48).unwrap();
        assert_eq!(acf[0], 1.0);
        for (lag, &c) in acf.iter().enumerate().skip(1) {
            assert!(c.abs() < 0.05, "lag {lag}: |{c}| should be < 0.05");
        }
    }

    #[test]
    fn acf_of_period_ten_sinusoid() {
        let x: Vec<f64> = (0..1000).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 10.0).sin()).collect();
        let acf = autocorrelation(&x, x.len(), 12).unwrap();
        assert!(acf[10] >= 0.95, "lag-10 ACF {} of a period-10 sinusoid", acf[10]);
    }

    #[test]
    fn acf_rejects_short_input() {
        let x = vec![1.0; 10];
        assert!(autocorrelation(&x, 10, 48).is_err());
    }

    #[test]
    fn kde_single_mode_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool: Vec<f64> = (0..2000).map(|_| 32.0 + rng.random_range(-0.5..0.5)).collect();
        let d = density_of_values(&pool, 50).unwrap();
        let modes = d.modes();
        assert!(modes.iter().any(|m| (m - 32.0).abs() < 1.0), "modes {modes:?}");
        let integral = density_integral(&d.density);
        assert!((integral - 1.0).abs() < 1e-3, "KDE integral {integral}");
        let hist_sum: f64 = d.histogram.iter().map(|(_, p)| p).sum();
        assert!((hist_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kde_recovers_three_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pool = Vec::new();
        for &center in &[8.0, 16.0, 32.0] {
            for _ in 0..1500 {
                pool.push(center + rng.random_range(-0.4..0.4) + rng.random_range(-0.4..0.4));
            }
        }
        let d = density_of_values(&pool, 60).unwrap();
        let modes = d.modes();
        for center in [8.0, 16.0, 32.0] {
            assert!(
                modes.iter().any(|m| (m - center).abs() <= 1.0),
                "expected a mode within 1.0 of {center}, got {modes:?}"
            );
        }
    }

    #[test]
    fn projection_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proj.csv");
        let real = ndarray::array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let generated = ndarray::array![[7.0, 8.0]];
        export_projection_input(&real.view(), &generated.view(), &path).unwrap();
        let (r, g) = read_projection_input(&path).unwrap();
        assert_eq!(r, real);
        assert_eq!(g, generated);
        // Row count = |real| + |gen|.
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        assert_eq!(lines, 1 + real.nrows() + generated.nrows());
    }

    #[test]
    fn metric_report_writes_flat_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.txt");
        let report = MetricReport {
            marginal_score: 0.05,
            discriminative_mean: 0.65,
            discriminative_std: 0.01,
            tail_mean: 0.04,
            tail_std: 0.02,
            artifacts: vec![("acf".into(), "acf.csv".into())],
        };
        report.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("marginal_score = 0.05"));
        assert!(text.contains("artifact.acf = acf.csv"));
        assert!(text.contains("discriminative_score_ideal"));
    }
}
