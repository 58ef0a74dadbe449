//! The noise-prediction network: an LSTM encoder over the corrupted
//! sequence, broadcast fusion with the condition and diffusion-step
//! embeddings, multi-head self-attention, and a per-time-step linear
//! projection back to a scalar noise estimate.
//!
//! Gradients are computed by an explicit backward pass (no autodiff); the
//! parameter layout is fixed so the whole model can be flattened into a
//! single vector for the optimizer and for finite-difference checks.

mod attention;
mod embedding;
mod lstm;

pub use embedding::step_embedding;

pub(crate) use attention::{attention_backward, attention_forward, AttentionParams};
pub(crate) use lstm::{lstm_backward, lstm_forward, LstmCache, LstmParams};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("step embedding width must be even and positive, got {0}")]
    OddEmbeddingWidth(usize),
    #[error("diffusion step index must be >= 1")]
    StepIndexZero,
    #[error("invalid network config: {0}")]
    BadConfig(String),
    #[error("sequence length {got} does not match configured length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("feature width {got} does not match configured width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("conditional model requires a label")]
    LabelRequired,
    #[error("unconditional model given a label")]
    LabelUnexpected,
    #[error("label {label} out of vocabulary of size {n_labels}")]
    LabelOutOfRange { label: usize, n_labels: usize },
}

/// Architecture hyperparameters.
///
/// `hidden` (H) is both the LSTM state width and the embedding width; the
/// attention output width is `heads * head_dim` (D = B * d_b). A model is
/// conditional iff `n_labels` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub seq_len: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    #[serde(default)]
    pub n_labels: Option<usize>,
}

impl NetworkConfig {
    /// Paper-default widths: H = 48, B = 4 heads of width 48 each.
    pub fn with_defaults(seq_len: usize, n_labels: Option<usize>) -> Self {
        Self { seq_len, hidden: 48, heads: 4, head_dim: 48, n_labels }
    }

    /// Attention output width `D = B * d_b`.
    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn is_conditional(&self) -> bool {
        self.n_labels.is_some()
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.seq_len < 2 {
            return Err(NetworkError::BadConfig(format!("seq_len must be >= 2, got {}", self.seq_len)));
        }
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return Err(NetworkError::OddEmbeddingWidth(self.hidden));
        }
        if self.heads == 0 || self.head_dim == 0 {
            return Err(NetworkError::BadConfig("heads and head_dim must be positive".into()));
        }
        if let Some(n) = self.n_labels {
            if n == 0 {
                return Err(NetworkError::BadConfig("n_labels must be positive when conditional".into()));
            }
        }
        Ok(())
    }
}

/// All learned parameters. Doubles as the gradient container, since the two
/// share shapes exactly.
#[derive(Debug, Clone)]
pub(crate) struct DenoiserParams {
    pub lstm: LstmParams,
    /// Condition embedding rows, `(n_labels, H)`; `None` when unconditional.
    pub cond: Option<Array2<f64>>,
    pub attn: AttentionParams,
    /// Output projection `(D,)` applied per time step.
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

impl DenoiserParams {
    fn zeros(config: &NetworkConfig) -> Self {
        Self {
            lstm: LstmParams::zeros(1, config.hidden),
            cond: config.n_labels.map(|n| Array2::zeros((n, config.hidden))),
            attn: AttentionParams::zeros(config.hidden, config.heads, config.head_dim),
            w_out: Array1::zeros(config.attn_width()),
            b_out: 0.0,
        }
    }

    fn init(config: &NetworkConfig, rng: &mut impl rand::Rng) -> Self {
        let d = config.attn_width();
        let so = 1.0 / (d as f64).sqrt();
        Self {
            lstm: LstmParams::init(1, config.hidden, rng),
            cond: config.n_labels.map(|n| {
                let s = 1.0 / (n as f64).sqrt();
                Array2::from_shape_fn((n, config.hidden), |_| rng.random_range(-s..s))
            }),
            attn: AttentionParams::init(config.hidden, config.heads, config.head_dim, rng),
            w_out: Array1::from_shape_fn(d, |_| rng.random_range(-so..so)),
            b_out: 0.0,
        }
    }

    /// Visits every parameter in a fixed order (LSTM, condition embedding,
    /// attention heads, output projection, bias).
    fn for_each(&self, mut f: impl FnMut(f64)) {
        self.lstm.w_x.iter().for_each(|v| f(*v));
        self.lstm.w_h.iter().for_each(|v| f(*v));
        self.lstm.b.iter().for_each(|v| f(*v));
        if let Some(c) = &self.cond {
            c.iter().for_each(|v| f(*v));
        }
        for h in &self.attn.heads {
            h.w_q.iter().for_each(|v| f(*v));
            h.w_k.iter().for_each(|v| f(*v));
            h.w_v.iter().for_each(|v| f(*v));
        }
        self.attn.w_o.iter().for_each(|v| f(*v));
        self.w_out.iter().for_each(|v| f(*v));
        f(self.b_out);
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.lstm.w_x.iter_mut().for_each(&mut f);
        self.lstm.w_h.iter_mut().for_each(&mut f);
        self.lstm.b.iter_mut().for_each(&mut f);
        if let Some(c) = &mut self.cond {
            c.iter_mut().for_each(&mut f);
        }
        for h in &mut self.attn.heads {
            h.w_q.iter_mut().for_each(&mut f);
            h.w_k.iter_mut().for_each(&mut f);
            h.w_v.iter_mut().for_each(&mut f);
        }
        self.attn.w_o.iter_mut().for_each(&mut f);
        self.w_out.iter_mut().for_each(&mut f);
        f(&mut self.b_out);
    }

    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each(|_| n += 1);
        n
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|v| out.push(v));
        out
    }

    pub fn assign_from(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        self.for_each_mut(|v| *v = *it.next().expect("flat parameter vector too short"));
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct ForwardCache {
    xs: Array2<f64>,
    lstm: LstmCache,
    fused: Array2<f64>,
    attn: attention::AttentionCache,
    attended: Array2<f64>,
    label: Option<usize>,
}

/// Noise predictor with learned parameters. Immutable once trained; cheap to
/// share across sampling workers.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    config: NetworkConfig,
    pub(crate) params: DenoiserParams,
}

impl DenoiserModel {
    /// Fresh model with fan-in-scaled uniform initialization.
    pub fn init(config: NetworkConfig, init_seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = seed::rng(init_seed);
        let params = DenoiserParams::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Flat snapshot of every parameter, in the fixed layout order.
    pub fn param_vector(&self) -> Vec<f64> {
        self.params.to_vec()
    }

    pub fn set_param_vector(&mut self, flat: &[f64]) -> Result<(), NetworkError> {
        if flat.len() != self.params.len() {
            return Err(NetworkError::BadConfig(format!(
                "parameter vector length {} != model parameter count {}",
                flat.len(),
                self.params.len()
            )));
        }
        self.params.assign_from(flat);
        Ok(())
    }

    fn check_inputs(&self, xt: &[f64], t: usize, label: Option<usize>) -> Result<(), NetworkError> {
        if xt.len() != self.config.seq_len {
            return Err(NetworkError::LengthMismatch { expected: self.config.seq_len, got: xt.len() });
        }
        if t == 0 {
            return Err(NetworkError::StepIndexZero);
        }
        match (self.config.n_labels, label) {
            (Some(n), Some(l)) if l >= n => Err(NetworkError::LabelOutOfRange { label: l, n_labels: n }),
            (Some(_), None) => Err(NetworkError::LabelRequired),
            (None, Some(_)) => Err(NetworkError::LabelUnexpected),
            _ => Ok(()),
        }
    }

    /// LSTM hidden states for the whole sequence, `(L, H)`.
    pub fn encode_sequence(&self, xt: &[f64]) -> Result<Array2<f64>, NetworkError> {
        if xt.len() != self.config.seq_len {
            return Err(NetworkError::LengthMismatch { expected: self.config.seq_len, got: xt.len() });
        }
        let xs = Array2::from_shape_fn((xt.len(), 1), |(i, _)| xt[i]);
        Ok(lstm_forward(&self.params.lstm, &xs).hidden)
    }

    /// Attention over an already-fused feature sequence, `(L, H) -> (L, D)`.
    pub fn self_attention(&self, fused: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        if fused.ncols() != self.config.hidden {
            return Err(NetworkError::WidthMismatch { expected: self.config.hidden, got: fused.ncols() });
        }
        Ok(attention_forward(&self.params.attn, fused).0)
    }

    /// Predicted noise for the corrupted sequence `xt` at diffusion step `t`.
    pub fn predict_noise(&self, xt: &[f64], t: usize, label: Option<usize>) -> Result<Vec<f64>, NetworkError> {
        Ok(self.forward_cached(xt, t, label)?.0)
    }

    pub(crate) fn forward_cached(
        &self,
        xt: &[f64],
        t: usize,
        label: Option<usize>,
    ) -> Result<(Vec<f64>, ForwardCache), NetworkError> {
        self.check_inputs(xt, t, label)?;
        let xs = Array2::from_shape_fn((xt.len(), 1), |(i, _)| xt[i]);
        let lstm = lstm_forward(&self.params.lstm, &xs);

        let mut shift = step_embedding(t, self.config.hidden)?;
        if let (Some(emb), Some(l)) = (&self.params.cond, label) {
            shift += &emb.row(l);
        }
        let mut fused = lstm.hidden.clone();
        fused += &shift.view().insert_axis(Axis(0));

        let (attended, attn) = attention_forward(&self.params.attn, &fused);
        let eps_hat: Vec<f64> = attended
            .rows()
            .into_iter()
            .map(|r| r.dot(&self.params.w_out) + self.params.b_out)
            .collect();

        Ok((eps_hat, ForwardCache { xs, lstm, fused, attn, attended, label }))
    }

    /// Parameter gradients given the loss gradient w.r.t. the predicted
    /// noise sequence.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_eps: &[f64]) -> DenoiserParams {
        let mut grads = DenoiserParams::zeros(&self.config);
        let d_eps = Array1::from_iter(d_eps.iter().copied());

        // Output projection.
        grads.w_out += &cache.attended.t().dot(&d_eps);
        grads.b_out = d_eps.sum();
        let d_attended = d_eps
            .view()
            .insert_axis(Axis(1))
            .dot(&self.params.w_out.view().insert_axis(Axis(0)));

        let d_fused = attention_backward(&self.params.attn, &cache.fused, &cache.attn, &d_attended, &mut grads.attn);

        // Broadcast add: the condition row receives the column sums.
        if let (Some(gc), Some(l)) = (&mut grads.cond, cache.label) {
            let col_sums = d_fused.sum_axis(Axis(0));
            let mut row = gc.row_mut(l);
            row += &col_sums;
        }

        lstm_backward(&self.params.lstm, &cache.xs, &cache.lstm, &d_fused, &mut grads.lstm);
        grads
    }
}

/// Broadcast fusion of per-time hidden states with the (optional) condition
/// embedding and the step embedding: `h_i = g_i + c + t_e` for every row.
pub fn broadcast_fuse(
    hidden: &Array2<f64>,
    cond: Option<&Array1<f64>>,
    step: &Array1<f64>,
) -> Result<Array2<f64>, NetworkError> {
    let width = hidden.ncols();
    if step.len() != width {
        return Err(NetworkError::WidthMismatch { expected: width, got: step.len() });
    }
    if let Some(c) = cond {
        if c.len() != width {
            return Err(NetworkError::WidthMismatch { expected: width, got: c.len() });
        }
    }
    let mut shift = step.clone();
    if let Some(c) = cond {
        shift += c;
    }
    let mut fused = hidden.clone();
    fused += &shift.view().insert_axis(Axis(0));
    Ok(fused)
}
