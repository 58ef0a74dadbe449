// Scratch calibration for conditional station generation (removed later).
use chargegen_core::engine::{mean_row, normalize, sample, train, ScenarioBatch, TrainConfig};
use chargegen_core::eval::marginal_score;
use chargegen_core::network::NetworkConfig;
use chargegen_core::{DenoiserModel, DiffusionSchedule};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(120);
    let len = 96;
    let n_per = 250;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut values = Array2::zeros((2 * n_per, len));
    let mut labels = Vec::new();
    for i in 0..2 * n_per {
        let class = i / n_per;
        let (center, height) = if class == 0 {
            (24.0 + rng.random_range(-2.0..2.0), 15.0 + rng.random_range(-2.0..2.0))
        } else {
            (70.0 + rng.random_range(-2.0..2.0), 40.0 + rng.random_range(-3.0..3.0))
        };
        for j in 0..len {
            let z = (j as f64 - center) / 9.0;
            let v = height * (-0.5 * z * z).exp();
            values[[i, j]] = if v > 0.05 { v + rng.random_range(-0.3..0.3) } else { v }.max(0.0);
        }
        labels.push(class);
    }

    let (normalized, record) = normalize(&values);
    let batch = ScenarioBatch { values: normalized, labels: Some(labels), normalization: Some(record) };
    let sched = DiffusionSchedule::quadratic(50, 1e-4, 0.5).unwrap();
    let net = NetworkConfig::with_defaults(len, Some(2));
    let model = DenoiserModel::init(net, 66).unwrap();
    let cfg = TrainConfig { epochs, batch_size: 4, learning_rate: 1e-3, patience: epochs, seed: 8 };

    let t0 = Instant::now();
    let out = train(&batch, model, &sched, &cfg).unwrap();
    println!("trained {} epochs in {:.0}s, loss {:.3} -> {:.3}", out.loss_history.len(), t0.elapsed().as_secs_f64(), out.loss_history[0], out.loss_history.last().unwrap());

    let gen0 = sample(&out.model, &sched, 100, Some(0), &record, 60).unwrap().values;
    let gen1 = sample(&out.model, &sched, 100, Some(1), &record, 61).unwrap().values;

    let real0 = values.slice(ndarray::s![..n_per, ..]).to_owned();
    let real1 = values.slice(ndarray::s![n_per.., ..]).to_owned();
    let mean0 = mean_row(&real0);
    let mean1 = mean_row(&real1);
    let dist = |row: ndarray::ArrayView1<f64>, mean: &[f64]| -> f64 {
        row.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum()
    };
    let mut correct = 0;
    for row in gen0.rows() {
        if dist(row, &mean0) < dist(row, &mean1) { correct += 1; }
    }
    for row in gen1.rows() {
        if dist(row, &mean1) < dist(row, &mean0) { correct += 1; }
    }
    println!("accuracy = {:.3}", correct as f64 / 200.0);

    let same = 0.5 * (marginal_score(&real0.view(), &gen0.view(), 50).unwrap() + marginal_score(&real1.view(), &gen1.view(), 50).unwrap());
    let cross = 0.5 * (marginal_score(&real0.view(), &gen1.view(), 50).unwrap() + marginal_score(&real1.view(), &gen0.view(), 50).unwrap());
    println!("same-label marginal {same:.4}, cross-label {cross:.4}, ratio {:.2}", cross / same);
}
