//! Post-hoc real-vs-generated classifier.
//!
//! A deliberately small two-layer LSTM with a linear head, trained for a
//! fixed budget so scores stay comparable across runs. The score is the
//! held-out binary cross-entropy: ln 2 (~0.693) means the classifier cannot
//! tell the corpora apart, values near 0 mean trivially separable.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::EvalError;
use crate::network::{lstm_backward, lstm_forward, LstmParams};
use crate::seed;

const HIDDEN: usize = 32;
const EPOCHS: usize = 30;
const BATCH: usize = 16;
const LEARNING_RATE: f64 = 1e-3;
const MIN_SAMPLES_PER_SIDE: usize = 20;

#[derive(Debug, Clone)]
pub struct DiscriminativeScore {
    pub mean: f64,
    pub std: f64,
    pub per_repeat: Vec<f64>,
}

struct Classifier {
    l1: LstmParams, // input 1 -> HIDDEN
    l2: LstmParams, // HIDDEN -> HIDDEN
    w: Array1<f64>,
    b: f64,
}

impl Classifier {
    fn init(rng: &mut impl rand::Rng) -> Self {
        let s = 1.0 / (HIDDEN as f64).sqrt();
        Self {
            l1: LstmParams::init(1, HIDDEN, rng),
            l2: LstmParams::init(HIDDEN, HIDDEN, rng),
            w: Array1::from_shape_fn(HIDDEN, |_| rng.random_range(-s..s)),
            b: 0.0,
        }
    }

    fn logit(&self, seq: &[f64]) -> f64 {
        let xs = Array2::from_shape_fn((seq.len(), 1), |(i, _)| seq[i]);
        let h1 = lstm_forward(&self.l1, &xs);
        let h2 = lstm_forward(&self.l2, &h1.hidden);
        h2.hidden.row(seq.len() - 1).dot(&self.w) + self.b
    }

    /// Loss and gradients for one labeled sequence (`y` in {0, 1}).
    fn grad(&self, seq: &[f64], y: f64) -> (f64, Grads) {
        let len = seq.len();
        let xs = Array2::from_shape_fn((len, 1), |(i, _)| seq[i]);
        let c1 = lstm_forward(&self.l1, &xs);
        let c2 = lstm_forward(&self.l2, &c1.hidden);
        let last = c2.hidden.row(len - 1);
        let z = last.dot(&self.w) + self.b;
        let loss = bce_with_logit(z, y);
        let dz = sigmoid(z) - y;

        let mut grads = Grads::zeros();
        grads.w += &last.mapv(|v| v * dz);
        grads.b = dz;

        let mut dh2 = Array2::zeros((len, HIDDEN));
        dh2.row_mut(len - 1).assign(&self.w.mapv(|v| v * dz));
        let dh1 = lstm_backward(&self.l2, &c1.hidden, &c2, &dh2, &mut grads.l2);
        lstm_backward(&self.l1, &xs, &c1, &dh1, &mut grads.l1);
        (loss, grads)
    }

    fn apply(&mut self, mut update: impl FnMut(&mut f64, usize)) {
        let mut idx = 0;
        for p in [&mut self.l1, &mut self.l2] {
            for v in p.w_x.iter_mut().chain(p.w_h.iter_mut()).chain(p.b.iter_mut()) {
                update(v, idx);
                idx += 1;
            }
        }
        for v in self.w.iter_mut() {
            update(v, idx);
            idx += 1;
        }
        update(&mut self.b, idx);
    }

    fn param_count() -> usize {
        let l1 = 4 * HIDDEN * (1 + HIDDEN + 1);
        let l2 = 4 * HIDDEN * (HIDDEN + HIDDEN + 1);
        l1 + l2 + HIDDEN + 1
    }
}

struct Grads {
    l1: LstmParams,
    l2: LstmParams,
    w: Array1<f64>,
    b: f64,
}

impl Grads {
    fn zeros() -> Self {
        Self {
            l1: LstmParams::zeros(1, HIDDEN),
            l2: LstmParams::zeros(HIDDEN, HIDDEN),
            w: Array1::zeros(HIDDEN),
            b: 0.0,
        }
    }

    fn accumulate(&mut self, other: &Grads) {
        for (mine, theirs) in [(&mut self.l1, &other.l1), (&mut self.l2, &other.l2)] {
            mine.w_x += &theirs.w_x;
            mine.w_h += &theirs.w_h;
            mine.b += &theirs.b;
        }
        self.w += &other.w;
        self.b += other.b;
    }

    fn flatten(&self, scale: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(Classifier::param_count());
        for p in [&self.l1, &self.l2] {
            out.extend(p.w_x.iter().chain(p.w_h.iter()).chain(p.b.iter()).map(|v| v * scale));
        }
        out.extend(self.w.iter().map(|v| v * scale));
        out.push(self.b * scale);
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable binary cross-entropy from the logit.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn train_classifier(
    train_set: &[(Vec<f64>, f64)],
    rng: &mut impl rand::Rng,
) -> Classifier {
    let mut clf = Classifier::init(rng);
    let n_params = Classifier::param_count();
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let mut step = 0u64;

    for _ in 0..EPOCHS {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(BATCH) {
            let grads: Vec<(f64, Grads)> = chunk
                .par_iter()
                .map(|&i| clf.grad(&train_set[i].0, train_set[i].1))
                .collect();
            let mut total = Grads::zeros();
            for (_, g) in &grads {
                total.accumulate(g);
            }
            let flat = total.flatten(1.0 / chunk.len() as f64);

            step += 1;
            let bc1 = 1.0 - 0.9f64.powi(step as i32);
            let bc2 = 1.0 - 0.999f64.powi(step as i32);
            clf.apply(|p, idx| {
                let g = flat[idx];
                m[idx] = 0.9 * m[idx] + 0.1 * g;
                v[idx] = 0.999 * v[idx] + 0.001 * g * g;
                *p -= LEARNING_RATE * (m[idx] / bc1) / ((v[idx] / bc2).sqrt() + 1e-8);
            });
        }
    }
    clf
}

/// Held-out cross-entropy of a real-vs-generated classifier, repeated over
/// fresh splits and initializations. Real rows are labeled 1.
pub fn discriminative_score(
    real: &ArrayView2<f64>,
    generated: &ArrayView2<f64>,
    repeats: usize,
    run_seed: u64,
) -> Result<DiscriminativeScore, EvalError> {
    if real.nrows() < MIN_SAMPLES_PER_SIDE || generated.nrows() < MIN_SAMPLES_PER_SIDE {
        return Err(EvalError::TooFewPoints {
            have: real.nrows().min(generated.nrows()),
            need: MIN_SAMPLES_PER_SIDE,
        });
    }
    if repeats == 0 {
        return Err(EvalError::TooFewPoints { have: 0, need: 1 });
    }

    // Shared affine map into [-1, 1] so offsets between corpora survive.
    let lo = real.iter().chain(generated.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = real.iter().chain(generated.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let squash = |row: ndarray::ArrayView1<f64>| -> Vec<f64> {
        row.iter().map(|v| 2.0 * (v - lo) / span - 1.0).collect()
    };

    let mut per_repeat = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let mut rng = seed::stream_rng(run_seed, rep as u64);

        let mut split = |rows: &ArrayView2<f64>, label: f64| {
            let n = rows.nrows();
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let n_test = (n / 5).max(1);
            let test: Vec<(Vec<f64>, f64)> =
                idx[..n_test].iter().map(|&i| (squash(rows.index_axis(Axis(0), i)), label)).collect();
            let train: Vec<(Vec<f64>, f64)> =
                idx[n_test..].iter().map(|&i| (squash(rows.index_axis(Axis(0), i)), label)).collect();
            (train, test)
        };

        let (train_real, test_real) = split(real, 1.0);
        let (train_gen, test_gen) = split(generated, 0.0);
        let mut train_set = train_real;
        train_set.extend(train_gen);
        let mut test_set = test_real;
        test_set.extend(test_gen);

        let clf = train_classifier(&train_set, &mut rng);
        let bce: f64 = test_set
            .par_iter()
            .map(|(seq, y)| bce_with_logit(clf.logit(seq), *y))
            .sum::<f64>()
            / test_set.len() as f64;
        per_repeat.push(bce);
    }

    let n = per_repeat.len() as f64;
    let mean = per_repeat.iter().sum::<f64>() / n;
    let var = per_repeat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(DiscriminativeScore { mean, std: var.sqrt(), per_repeat })
}
