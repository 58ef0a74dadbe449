//! Self-describing model checkpoints: a versioned JSON container holding the
//! architecture config, training conventions, the dataset normalization
//! record, and every parameter tensor by name and shape.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Normalization;
use crate::network::{DenoiserModel, NetworkConfig, NetworkError};

pub const FORMAT_TAG: &str = "chargegen.checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    fn from_matrix(m: &Array2<f64>) -> Self {
        Self { shape: vec![m.nrows(), m.ncols()], data: m.iter().copied().collect() }
    }

    fn from_vector(v: &Array1<f64>) -> Self {
        Self { shape: vec![v.len()], data: v.to_vec() }
    }

    fn into_matrix(self, name: &str) -> Result<Array2<f64>, CheckpointError> {
        if self.shape.len() != 2 {
            return Err(CheckpointError::Format(format!("tensor {name}: expected rank 2, got {:?}", self.shape)));
        }
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data)
            .map_err(|e| CheckpointError::Format(format!("tensor {name}: {e}")))
    }

    fn into_vector(self, name: &str) -> Result<Array1<f64>, CheckpointError> {
        if self.shape.len() != 1 {
            return Err(CheckpointError::Format(format!("tensor {name}: expected rank 1, got {:?}", self.shape)));
        }
        Ok(Array1::from_vec(self.data))
    }
}

/// On-disk document. `loss_reduction` and the two attention flags record
/// training conventions that other implementations need to reproduce the
/// same objective and architecture.
#[derive(Debug, Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    network: NetworkConfig,
    loss_reduction: String,
    attention_layer_norm: bool,
    attention_residual: bool,
    normalization: Option<Normalization>,
    tensors: BTreeMap<String, Tensor>,
}

pub fn save_checkpoint(
    model: &DenoiserModel,
    normalization: Option<&Normalization>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let p = &model.params;
    let mut tensors = BTreeMap::new();
    tensors.insert("lstm.w_x".into(), Tensor::from_matrix(&p.lstm.w_x));
    tensors.insert("lstm.w_h".into(), Tensor::from_matrix(&p.lstm.w_h));
    tensors.insert("lstm.b".into(), Tensor::from_vector(&p.lstm.b));
    if let Some(c) = &p.cond {
        tensors.insert("cond.embed".into(), Tensor::from_matrix(c));
    }
    for (b, head) in p.attn.heads.iter().enumerate() {
        tensors.insert(format!("attn.h{b}.w_q"), Tensor::from_matrix(&head.w_q));
        tensors.insert(format!("attn.h{b}.w_k"), Tensor::from_matrix(&head.w_k));
        tensors.insert(format!("attn.h{b}.w_v"), Tensor::from_matrix(&head.w_v));
    }
    tensors.insert("attn.w_o".into(), Tensor::from_matrix(&p.attn.w_o));
    tensors.insert("out.w".into(), Tensor::from_vector(&p.w_out));
    tensors.insert("out.b".into(), Tensor { shape: vec![1], data: vec![p.b_out] });

    let doc = Document {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        network: model.config().clone(),
        loss_reduction: "sum-over-time-mean-over-batch".into(),
        attention_layer_norm: false,
        attention_residual: false,
        normalization: normalization.copied(),
        tensors,
    };
    let file = File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), &doc)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserModel, Option<Normalization>), CheckpointError> {
    let file = File::open(path)?;
    let doc: Document = serde_json::from_reader(BufReader::new(file))?;
    if doc.format != FORMAT_TAG {
        return Err(CheckpointError::Format(format!("unknown format tag '{}'", doc.format)));
    }
    if doc.version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {}", doc.version)));
    }
    doc.network.validate()?;

    let mut tensors = doc.tensors;
    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| CheckpointError::Format(format!("missing tensor '{name}'")))
    };

    let mut model = DenoiserModel::init(doc.network.clone(), 0)?;
    let cfg = doc.network;
    let h = cfg.hidden;
    let d = cfg.attn_width();

    let expect = |name: &str, got: &[usize], want: &[usize]| -> Result<(), CheckpointError> {
        if got != want {
            return Err(CheckpointError::Format(format!(
                "tensor {name}: shape {got:?} does not match config ({want:?})"
            )));
        }
        Ok(())
    };

    let w_x = take("lstm.w_x")?.into_matrix("lstm.w_x")?;
    expect("lstm.w_x", &[w_x.nrows(), w_x.ncols()], &[4 * h, 1])?;
    let w_h = take("lstm.w_h")?.into_matrix("lstm.w_h")?;
    expect("lstm.w_h", &[w_h.nrows(), w_h.ncols()], &[4 * h, h])?;
    let b = take("lstm.b")?.into_vector("lstm.b")?;
    expect("lstm.b", &[b.len()], &[4 * h])?;
    model.params.lstm.w_x = w_x;
    model.params.lstm.w_h = w_h;
    model.params.lstm.b = b;

    if let Some(n) = cfg.n_labels {
        let c = take("cond.embed")?.into_matrix("cond.embed")?;
        expect("cond.embed", &[c.nrows(), c.ncols()], &[n, h])?;
        model.params.cond = Some(c);
    }

    for bidx in 0..cfg.heads {
        for (suffix, slot) in ["w_q", "w_k", "w_v"].iter().zip(0..3) {
            let name = format!("attn.h{bidx}.{suffix}");
            let m = take(&name)?.into_matrix(&name)?;
            expect(&name, &[m.nrows(), m.ncols()], &[h, cfg.head_dim])?;
            match slot {
                0 => model.params.attn.heads[bidx].w_q = m,
                1 => model.params.attn.heads[bidx].w_k = m,
                _ => model.params.attn.heads[bidx].w_v = m,
            }
        }
    }
    let w_o = take("attn.w_o")?.into_matrix("attn.w_o")?;
    expect("attn.w_o", &[w_o.nrows(), w_o.ncols()], &[d, d])?;
    model.params.attn.w_o = w_o;

    let w_out = take("out.w")?.into_vector("out.w")?;
    expect("out.w", &[w_out.len()], &[d])?;
    model.params.w_out = w_out;
    let b_out = take("out.b")?;
    if b_out.data.len() != 1 {
        return Err(CheckpointError::Format("tensor out.b must hold exactly one value".into()));
    }
    model.params.b_out = b_out.data[0];

    if let Some(extra) = tensors.keys().next() {
        return Err(CheckpointError::Format(format!("unexpected tensor '{extra}'")));
    }
    Ok((model, doc.normalization))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let cfg = NetworkConfig { seq_len: 6, hidden: 4, heads: 2, head_dim: 3, n_labels: Some(2) };
        let model = DenoiserModel::init(cfg, 77).unwrap();
        let norm = Normalization { min: -2.0, max: 5.0, degenerate: false };
        save_checkpoint(&model, Some(&norm), &path).unwrap();

        let (loaded, loaded_norm) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_norm, Some(norm));
        assert_eq!(loaded.config(), model.config());
        let xt = vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5];
        assert_eq!(
            model.predict_noise(&xt, 3, Some(1)).unwrap(),
            loaded.predict_noise(&xt, 3, Some(1)).unwrap()
        );
    }

    #[test]
    fn rejects_wrong_format_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"format":"other","version":1,"network":{"seq_len":4,"hidden":2,"heads":1,"head_dim":2},"loss_reduction":"","attention_layer_norm":false,"attention_residual":false,"normalization":null,"tensors":{}}"#).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Format(_))));
    }
}
