//! Multi-head scaled dot-product self-attention over a fused feature
//! sequence, with explicit backward pass.

use ndarray::{s, Array2};
use rand::Rng;

#[derive(Debug, Clone)]
pub(crate) struct HeadParams {
    pub w_q: Array2<f64>, // (H, d)
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// Output mixing matrix, `(D, D)` with `D = B * d`.
    pub w_o: Array2<f64>,
}

impl AttentionParams {
    pub fn zeros(model_width: usize, heads: usize, head_dim: usize) -> Self {
        let d_total = heads * head_dim;
        Self {
            heads: (0..heads)
                .map(|_| HeadParams {
                    w_q: Array2::zeros((model_width, head_dim)),
                    w_k: Array2::zeros((model_width, head_dim)),
                    w_v: Array2::zeros((model_width, head_dim)),
                })
                .collect(),
            w_o: Array2::zeros((d_total, d_total)),
        }
    }

    pub fn init<R: Rng>(model_width: usize, heads: usize, head_dim: usize, rng: &mut R) -> Self {
        let d_total = heads * head_dim;
        let sh = 1.0 / (model_width as f64).sqrt();
        let so = 1.0 / (d_total as f64).sqrt();
        let proj = |rng: &mut R| Array2::from_shape_fn((model_width, head_dim), |_| rng.random_range(-sh..sh));
        let heads = (0..heads)
            .map(|_| HeadParams { w_q: proj(rng), w_k: proj(rng), w_v: proj(rng) })
            .collect();
        let w_o = Array2::from_shape_fn((d_total, d_total), |_| rng.random_range(-so..so));
        Self { heads, w_o }
    }
}

pub(crate) struct AttentionCache {
    pub q: Vec<Array2<f64>>,
    pub k: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Row-normalized attention weights per head, `(L, L)`.
    pub probs: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection, `(L, D)`.
    pub concat: Array2<f64>,
}

fn softmax_rows(mut scores: Array2<f64>) -> Array2<f64> {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    scores
}

/// `fused` is `(L, H)`; returns the attended sequence `(L, D)`.
pub(crate) fn attention_forward(p: &AttentionParams, fused: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
    let len = fused.nrows();
    let head_dim = p.heads[0].w_q.ncols();
    let d_total = p.heads.len() * head_dim;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut concat = Array2::zeros((len, d_total));
    let mut q_all = Vec::with_capacity(p.heads.len());
    let mut k_all = Vec::with_capacity(p.heads.len());
    let mut v_all = Vec::with_capacity(p.heads.len());
    let mut probs_all = Vec::with_capacity(p.heads.len());

    for (b, head) in p.heads.iter().enumerate() {
        let q = fused.dot(&head.w_q);
        let k = fused.dot(&head.w_k);
        let v = fused.dot(&head.w_v);
        let probs = softmax_rows(q.dot(&k.t()) * scale);
        let attended = probs.dot(&v);
        concat
            .slice_mut(s![.., b * head_dim..(b + 1) * head_dim])
            .assign(&attended);
        q_all.push(q);
        k_all.push(k);
        v_all.push(v);
        probs_all.push(probs);
    }

    let out = concat.dot(&p.w_o);
    (out, AttentionCache { q: q_all, k: k_all, v: v_all, probs: probs_all, concat })
}

/// Backward pass; accumulates parameter gradients into `grads` and returns
/// the gradient w.r.t. the fused input `(L, H)`.
pub(crate) fn attention_backward(
    p: &AttentionParams,
    fused: &Array2<f64>,
    cache: &AttentionCache,
    d_out: &Array2<f64>,
    grads: &mut AttentionParams,
) -> Array2<f64> {
    let head_dim = p.heads[0].w_q.ncols();
    let scale = 1.0 / (head_dim as f64).sqrt();

    grads.w_o += &cache.concat.t().dot(d_out);
    let d_concat = d_out.dot(&p.w_o.t());

    let mut d_fused = Array2::zeros(fused.raw_dim());
    for (b, head) in p.heads.iter().enumerate() {
        let d_att = d_concat.slice(s![.., b * head_dim..(b + 1) * head_dim]);
        let probs = &cache.probs[b];

        let d_v = probs.t().dot(&d_att);
        let d_probs = d_att.dot(&cache.v[b].t());

        // Softmax backward, row-wise: dS = P .* (dP - rowsum(dP .* P)).
        let mut d_scores = d_probs.clone();
        for (mut ds_row, p_row) in d_scores.rows_mut().into_iter().zip(probs.rows()) {
            let dot: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
            for (ds, pv) in ds_row.iter_mut().zip(p_row.iter()) {
                *ds = pv * (*ds - dot);
            }
        }
        d_scores.mapv_inplace(|v| v * scale);

        let d_q = d_scores.dot(&cache.k[b]);
        let d_k = d_scores.t().dot(&cache.q[b]);

        grads.heads[b].w_q += &fused.t().dot(&d_q);
        grads.heads[b].w_k += &fused.t().dot(&d_k);
        grads.heads[b].w_v += &fused.t().dot(&d_v);

        d_fused += &d_q.dot(&head.w_q.t());
        d_fused += &d_k.dot(&head.w_k.t());
        d_fused += &d_v.dot(&head.w_v.t());
    }
    d_fused
}
