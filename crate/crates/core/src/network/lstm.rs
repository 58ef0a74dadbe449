//! Single-layer LSTM recurrence with explicit backward pass.
//!
//! Gate blocks are packed `[input, forget, cell, output]` along the first
//! axis of the weight matrices, so `w_x` is `(4H, I)`, `w_h` is `(4H, H)` and
//! `b` is `4H`. The same cell is reused with different input widths by the
//! denoiser (`I = 1`) and the discriminative-score classifier (`I = 1` and
//! `I = H` for its two layers).

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

#[derive(Debug, Clone)]
pub(crate) struct LstmParams {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, input)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    /// Uniform init scaled by 1/sqrt(fan-in); forget-gate bias starts at 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let sx = 1.0 / (input as f64).sqrt();
        let sh = 1.0 / (hidden as f64).sqrt();
        let w_x = Array2::from_shape_fn((4 * hidden, input), |_| rng.random_range(-sx..sx));
        let w_h = Array2::from_shape_fn((4 * hidden, hidden), |_| rng.random_range(-sh..sh));
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self { w_x, w_h, b }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs, laid out per time step.
pub(crate) struct LstmCache {
    /// Post-activation gate values `(L, 4H)`, blocks `[i, f, g, o]`.
    pub gates: Array2<f64>,
    /// Cell states `c_t`, `(L, H)`.
    pub cells: Array2<f64>,
    /// `tanh(c_t)`, `(L, H)`.
    pub tanh_c: Array2<f64>,
    /// Hidden states `h_t`, `(L, H)`.
    pub hidden: Array2<f64>,
}

/// Runs the recurrence left to right from zero initial state.
/// `xs` is `(L, I)`; the returned cache holds all `L` hidden states.
pub(crate) fn lstm_forward(p: &LstmParams, xs: &Array2<f64>) -> LstmCache {
    let len = xs.nrows();
    let h = p.hidden();
    let mut gates = Array2::zeros((len, 4 * h));
    let mut cells = Array2::zeros((len, h));
    let mut tanh_c = Array2::zeros((len, h));
    let mut hidden = Array2::zeros((len, h));

    // Input contribution for all steps at once.
    let xw = xs.dot(&p.w_x.t()); // (L, 4H)

    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);
    for t in 0..len {
        let mut z = p.w_h.dot(&h_prev);
        z += &xw.row(t);
        z += &p.b;
        let mut g_row = gates.row_mut(t);
        for j in 0..h {
            g_row[j] = sigmoid(z[j]);
            g_row[h + j] = sigmoid(z[h + j]);
            g_row[2 * h + j] = z[2 * h + j].tanh();
            g_row[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let c = g_row[h + j] * c_prev[j] + g_row[j] * g_row[2 * h + j];
            cells[[t, j]] = c;
            let tc = c.tanh();
            tanh_c[[t, j]] = tc;
            hidden[[t, j]] = g_row[3 * h + j] * tc;
        }
        h_prev.assign(&hidden.row(t));
        c_prev.assign(&cells.row(t));
    }

    LstmCache { gates, cells, tanh_c, hidden }
}

/// Backpropagation through time. `d_hidden` is the loss gradient w.r.t. each
/// hidden state `(L, H)`. Parameter gradients are accumulated into `grads`;
/// the return value is the gradient w.r.t. the inputs `(L, I)`.
pub(crate) fn lstm_backward(
    p: &LstmParams,
    xs: &Array2<f64>,
    cache: &LstmCache,
    d_hidden: &Array2<f64>,
    grads: &mut LstmParams,
) -> Array2<f64> {
    let len = xs.nrows();
    let h = p.hidden();
    let mut d_gates = Array2::<f64>::zeros((len, 4 * h)); // pre-activation grads
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);

    for t in (0..len).rev() {
        let g = cache.gates.row(t);
        let mut dz = Array1::<f64>::zeros(4 * h);
        for j in 0..h {
            let dh = d_hidden[[t, j]] + dh_next[j];
            let (gi, gf, gg, go) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = cache.tanh_c[[t, j]];
            let dc = dc_next[j] + dh * go * (1.0 - tc * tc);
            let c_prev = if t == 0 { 0.0 } else { cache.cells[[t - 1, j]] };

            let d_o = dh * tc;
            let d_i = dc * gg;
            let d_g = dc * gi;
            let d_f = dc * c_prev;
            dc_next[j] = dc * gf;

            dz[j] = d_i * gi * (1.0 - gi);
            dz[h + j] = d_f * gf * (1.0 - gf);
            dz[2 * h + j] = d_g * (1.0 - gg * gg);
            dz[3 * h + j] = d_o * go * (1.0 - go);
        }
        dh_next = dz.dot(&p.w_h); // (4H) x (4H,H) -> (H)
        d_gates.row_mut(t).assign(&dz);
    }

    // Batched parameter gradients over all time steps.
    grads.w_x += &d_gates.t().dot(xs);
    let mut h_prev = Array2::<f64>::zeros((len, h));
    if len > 1 {
        h_prev
            .slice_mut(s![1.., ..])
            .assign(&cache.hidden.slice(s![..len - 1, ..]));
    }
    grads.w_h += &d_gates.t().dot(&h_prev);
    grads.b += &d_gates.sum_axis(Axis(0));

    d_gates.dot(&p.w_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_input_fixed_point() {
        let p = LstmParams::zeros(1, 4);
        let xs = Array2::zeros((6, 1));
        let cache = lstm_forward(&p, &xs);
        assert!(cache.hidden.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(1, 5, &mut rng);
        for len in [1usize, 2, 17] {
            let xs = Array2::from_shape_fn((len, 1), |_| rng.random_range(-1.0..1.0));
            let cache = lstm_forward(&p, &xs);
            assert_eq!(cache.hidden.dim(), (len, 5));
        }
    }

    #[test]
    fn causal_prefix_property() {
        // Perturbing x at position k leaves hidden rows 0..k bit-identical.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::init(1, 4, &mut rng);
        let xs = Array2::from_shape_fn((10, 1), |_| rng.random_range(-1.0..1.0));
        let base = lstm_forward(&p, &xs);
        let k = 6;
        let mut perturbed = xs.clone();
        perturbed[[k, 0]] += 0.5;
        let after = lstm_forward(&p, &perturbed);
        for t in 0..k {
            for j in 0..4 {
                assert_eq!(base.hidden[[t, j]], after.hidden[[t, j]]);
            }
        }
        assert_ne!(base.hidden[[k, 0]], after.hidden[[k, 0]]);
    }
}
