// Scratch calibration run (not part of the deliverable surface; removed later).
use chargegen_core::engine::{normalize, sample, train, ScenarioBatch, TrainConfig};
use chargegen_core::eval::{
    bulk_rate_density_with, discriminative_score, duration_pdf, histogram_tv, marginal_score,
    recover_durations_with, recovery_threshold, tail_score,
};
use chargegen_core::network::NetworkConfig;
use chargegen_core::{DenoiserModel, DiffusionSchedule};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn toy_corpus(n: usize, len: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::zeros((n, len));
    let mut durations = Vec::with_capacity(n);
    for i in 0..n {
        let level_idx = rng.random_range(0..3);
        let level: f64 = [8.0, 16.0, 32.0][level_idx];
        // Two shape families, tied to the battery class the level implies:
        // low-rate batteries top up briefly with a steep ramp, high-rate
        // ones run long sessions with a shallow decline.
        let (duration, ramp_frac) = if level_idx < 2 {
            (rng.random_range(40..=50usize), 0.25)
        } else {
            (rng.random_range(75..=85usize), 0.5)
        };
        let ramp = (duration as f64 * ramp_frac).round() as usize;
        let plateau = duration - ramp;
        for j in 0..plateau {
            let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.6;
            values[[i, j]] = (level + noise).max(0.0);
        }
        for j in 0..ramp {
            let frac = (j + 1) as f64 / ramp as f64;
            values[[i, plateau + j]] = level * (1.0 - frac);
        }
        durations.push(duration);
    }
    (values, durations)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let len: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(96);

    let (raw, real_durations) = toy_corpus(n, len, 1);
    let (norm_values, record) = normalize(&raw);
    let batch = ScenarioBatch { values: norm_values, labels: None, normalization: Some(record) };

    let sched = DiffusionSchedule::quadratic(50, 1e-4, 0.5).unwrap();
    let config = NetworkConfig::with_defaults(len, None);
    let model = DenoiserModel::init(config, 99).unwrap();
    let cfg = TrainConfig { epochs, batch_size: 4, learning_rate: 1e-3, patience: epochs, seed: 7 };

    let t0 = Instant::now();
    let out = train(&batch, model, &sched, &cfg).unwrap();
    let train_time = t0.elapsed();
    println!(
        "trained {} epochs in {:.1}s; loss {:.4} -> {:.4}",
        out.loss_history.len(),
        train_time.as_secs_f64(),
        out.loss_history[0],
        out.loss_history.last().unwrap()
    );

    let t1 = Instant::now();
    let generated = sample(&out.model, &sched, n, None, &record, 1234).unwrap();
    println!("sampled {n} in {:.1}s", t1.elapsed().as_secs_f64());

    let marginal = marginal_score(&raw.view(), &generated.values.view(), 50).unwrap();
    println!("marginal = {marginal:.4}");
    // Where does the marginal mass mismatch live?
    {
        let lo = 0.0f64;
        let hi = raw.iter().chain(generated.values.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
        let bins = 50;
        let hist = |m: &Array2<f64>| {
            let mut h = vec![0.0; bins];
            for &v in m.iter() {
                let idx = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
                h[idx.min(bins - 1)] += 1.0 / m.len() as f64;
            }
            h
        };
        let p = hist(&raw);
        let q = hist(&generated.values);
        let mut gaps: Vec<(usize, f64)> = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).enumerate().collect();
        gaps.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (idx, gap) in gaps.iter().take(6) {
            let center = lo + (hi - lo) * (*idx as f64 + 0.5) / bins as f64;
            println!("  bin {idx} (~{center:.1} A): real {:.4} gen {:.4} gap {gap:.4}", p[*idx], q[*idx]);
        }
    }
    let gmin = generated.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let gmax = generated.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("gen value range: [{gmin:.2}, {gmax:.2}] (real max 32ish)");

    let threshold = recovery_threshold(&raw.view());
    let gen_durations = recover_durations_with(&generated.values.view(), threshold);
    let recovered_real = recover_durations_with(&raw.view(), threshold);
    let real_hist = duration_pdf(&recovered_real, 30).unwrap();
    let true_hist = duration_pdf(&real_durations, 30).unwrap();
    let gen_hist = duration_pdf(&gen_durations, 30).unwrap();
    println!(
        "duration TV = {:.4} (recovered both sides); vs true durations = {:.4}",
        histogram_tv(&real_hist, &gen_hist),
        histogram_tv(&true_hist, &gen_hist)
    );
    let zero_dur = gen_durations.iter().filter(|&&d| d == 0).count();
    println!("gen durations: zero={zero_dur} min={:?} max={:?}", gen_durations.iter().min(), gen_durations.iter().max());
    println!("real hist: {:?}", &real_hist[..6]);
    println!("gen  hist: {:?}", &gen_hist[..6]);

    let density = bulk_rate_density_with(&generated.values.view(), 50, threshold).unwrap();
    println!("gen modes: {:?}", density.modes());

    // Level and duration mixes.
    let level_mix = |m: &Array2<f64>| -> [f64; 3] {
        let mut counts = [0.0; 3];
        for row in m.rows() {
            let mut head: Vec<f64> = row.iter().take(30).cloned().collect();
            head.sort_by(f64::total_cmp);
            let med = head[head.len() / 2];
            let idx = [8.0f64, 16.0, 32.0]
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - med).abs().total_cmp(&(b.1 - med).abs()))
                .unwrap()
                .0;
            counts[idx] += 1.0 / m.nrows() as f64;
        }
        counts
    };
    println!("level mix real {:?} gen {:?}", level_mix(&raw), level_mix(&generated.values));
    let mean_dur = |d: &[usize]| d.iter().sum::<usize>() as f64 / d.len() as f64;
    println!(
        "mean duration: real {:.1} recovered-real {:.1} gen {:.1}",
        mean_dur(&real_durations),
        mean_dur(&recovered_real),
        mean_dur(&gen_durations)
    );

    let t2 = Instant::now();
    let tail = tail_score(&raw.view(), &generated.values.view(), 7, 5).unwrap();
    println!("tail = {:.4} +/- {:.4} (empty: {:?}) in {:.1}s", tail.mean, tail.std, tail.empty_clusters, t2.elapsed().as_secs_f64());

    let t3 = Instant::now();
    let disc = discriminative_score(&raw.view(), &generated.values.view(), 5, 11).unwrap();
    println!("disc = {:.4} +/- {:.4} in {:.1}s", disc.mean, disc.std, t3.elapsed().as_secs_f64());
}
