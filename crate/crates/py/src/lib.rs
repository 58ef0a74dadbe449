//! Python bindings: the diffusion schedule, denoiser training/sampling,
//! the evaluation metrics, and the bidding solver, with plain lists-of-floats
//! at the boundary.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use chargegen_core::bidding::{solve_bidding, BiddingInstance};
use chargegen_core::checkpoint::{load_checkpoint, save_checkpoint};
use chargegen_core::engine::{normalize, sample, train, Normalization, ScenarioBatch, TrainConfig};
use chargegen_core::eval;
use chargegen_core::network::{step_embedding, NetworkConfig};
use chargegen_core::{DenoiserModel, DiffusionSchedule};

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what}: empty matrix")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for r in &rows {
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(value_err)
}

fn to_rows(matrix: &Array2<f64>) -> Vec<Vec<f64>> {
    matrix.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Forward-process and reverse-step statistics of the diffusion chain.
#[pyclass(name = "Schedule")]
struct PySchedule {
    inner: DiffusionSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps=50, beta_start=1e-4, beta_end=0.5))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        Ok(Self { inner: DiffusionSchedule::quadratic(steps, beta_start, beta_end).map_err(value_err)? })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn beta(&self, t: usize) -> f64 {
        self.inner.beta(t)
    }

    fn alpha_bar(&self, t: usize) -> f64 {
        self.inner.alpha_bar(t)
    }

    fn beta_tilde(&self, t: usize) -> f64 {
        self.inner.beta_tilde(t)
    }

    fn forward_sample(&self, x0: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward_sample(&x0, t, &eps).map_err(value_err)
    }

    fn posterior_mean_from_x0(&self, x0: Vec<f64>, xt: Vec<f64>, t: usize) -> PyResult<Vec<f64>> {
        self.inner.posterior_mean_from_x0(&x0, &xt, t).map_err(value_err)
    }

    fn posterior_mean_from_eps(&self, xt: Vec<f64>, eps_hat: Vec<f64>, t: usize) -> PyResult<Vec<f64>> {
        self.inner.posterior_mean_from_eps(&xt, &eps_hat, t).map_err(value_err)
    }

    fn reverse_step(&self, xt: Vec<f64>, eps_hat: Vec<f64>, t: usize, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reverse_step(&xt, &eps_hat, t, &z).map_err(value_err)
    }
}

/// A trained denoiser bundled with its schedule and normalization record,
/// so sampling is turnkey.
#[pyclass(name = "Denoiser")]
struct PyDenoiser {
    model: DenoiserModel,
    record: Normalization,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    loss_history: Vec<f64>,
}

#[pymethods]
impl PyDenoiser {
    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.loss_history.clone()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    #[getter]
    fn conditional(&self) -> bool {
        self.model.config().is_conditional()
    }

    #[pyo3(signature = (n, label=None, seed=0))]
    fn sample(&self, n: usize, label: Option<usize>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let sched = DiffusionSchedule::quadratic(self.steps, self.beta_start, self.beta_end).map_err(value_err)?;
        let batch = sample(&self.model, &sched, n, label, &self.record, seed).map_err(value_err)?;
        Ok(to_rows(&batch.values))
    }

    #[pyo3(signature = (xt, t, label=None))]
    fn predict_noise(&self, xt: Vec<f64>, t: usize, label: Option<usize>) -> PyResult<Vec<f64>> {
        self.model.predict_noise(&xt, t, label).map_err(value_err)
    }

    fn save(&self, path: String) -> PyResult<()> {
        save_checkpoint(&self.model, Some(&self.record), std::path::Path::new(&path))
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }
}

/// Trains a denoiser on raw (unnormalized) sequences. Labels make the model
/// conditional; `n_labels` defaults to `max(labels) + 1`.
#[pyfunction]
#[pyo3(signature = (values, labels=None, steps=50, beta_start=1e-4, beta_end=0.5,
                    hidden=48, heads=4, head_dim=48,
                    epochs=200, batch_size=4, learning_rate=1e-3, patience=20, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_denoiser(
    values: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    hidden: usize,
    heads: usize,
    head_dim: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    patience: usize,
    seed: u64,
) -> PyResult<PyDenoiser> {
    let raw = to_matrix(values, "values")?;
    let (normalized, record) = normalize(&raw);
    let n_labels = labels.as_ref().map(|l| l.iter().max().map_or(1, |m| m + 1).max(2));
    let batch = ScenarioBatch { values: normalized, labels, normalization: Some(record) };

    let sched = DiffusionSchedule::quadratic(steps, beta_start, beta_end).map_err(value_err)?;
    let net = NetworkConfig { seq_len: raw.ncols(), hidden, heads, head_dim, n_labels };
    let model = DenoiserModel::init(net, chargegen_core::seed::derive(seed, "init")).map_err(value_err)?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        patience: patience.min(epochs),
        seed: chargegen_core::seed::derive(seed, "train"),
    };
    let outcome = train(&batch, model, &sched, &cfg).map_err(value_err)?;
    Ok(PyDenoiser {
        model: outcome.model,
        record,
        steps,
        beta_start,
        beta_end,
        loss_history: outcome.loss_history,
    })
}

/// Loads a checkpoint written by `Denoiser.save` or the CLI `train` command.
#[pyfunction]
#[pyo3(signature = (path, steps=50, beta_start=1e-4, beta_end=0.5))]
fn load_denoiser(path: String, steps: usize, beta_start: f64, beta_end: f64) -> PyResult<PyDenoiser> {
    let (model, record) = load_checkpoint(std::path::Path::new(&path))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    let record = record.ok_or_else(|| PyValueError::new_err("checkpoint lacks a normalization record"))?;
    Ok(PyDenoiser { model, record, steps, beta_start, beta_end, loss_history: Vec::new() })
}

#[pyfunction]
fn sinusoidal_step_embedding(t: usize, width: usize) -> PyResult<Vec<f64>> {
    Ok(step_embedding(t, width).map_err(value_err)?.to_vec())
}

#[pyfunction]
#[pyo3(signature = (real, generated, bins=50))]
fn marginal_score(real: Vec<Vec<f64>>, generated: Vec<Vec<f64>>, bins: usize) -> PyResult<f64> {
    let real = to_matrix(real, "real")?;
    let generated = to_matrix(generated, "generated")?;
    eval::marginal_score(&real.view(), &generated.view(), bins).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (real, generated, repeats=5, seed=0))]
fn discriminative_score(
    real: Vec<Vec<f64>>,
    generated: Vec<Vec<f64>>,
    repeats: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let real = to_matrix(real, "real")?;
    let generated = to_matrix(generated, "generated")?;
    let score = eval::discriminative_score(&real.view(), &generated.view(), repeats, seed).map_err(value_err)?;
    Ok((score.mean, score.std))
}

#[pyfunction]
#[pyo3(signature = (real, generated, clusters=7, seed=0))]
fn tail_score(real: Vec<Vec<f64>>, generated: Vec<Vec<f64>>, clusters: usize, seed: u64) -> PyResult<(f64, f64)> {
    let real = to_matrix(real, "real")?;
    let generated = to_matrix(generated, "generated")?;
    let score = eval::tail_score(&real.view(), &generated.view(), clusters, seed).map_err(value_err)?;
    Ok((score.mean, score.std))
}

#[pyfunction]
#[pyo3(signature = (points, k, restarts=10, seed=0))]
fn kmeans(
    points: Vec<Vec<f64>>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<usize>, f64)> {
    let points = to_matrix(points, "points")?;
    let result = eval::kmeans(&points.view(), k, restarts, seed).map_err(value_err)?;
    Ok((to_rows(&result.centroids), result.assignments, result.medoids, result.wcss))
}

/// Solves the day-ahead bidding QP; returns (power, energy_cost,
/// penalty_cost, total_cost).
#[pyfunction]
#[pyo3(signature = (demand_kw, price_per_kwh, penalty_price, interval_hours=1.0/12.0, power_cap_kw=10.0))]
fn solve_day_ahead_bids(
    demand_kw: Vec<Vec<f64>>,
    price_per_kwh: Vec<f64>,
    penalty_price: f64,
    interval_hours: f64,
    power_cap_kw: f64,
) -> PyResult<(Vec<Vec<f64>>, f64, f64, f64)> {
    let demand = to_matrix(demand_kw, "demand_kw")?;
    let n = demand.nrows();
    let inst = BiddingInstance {
        demand_kw: demand,
        price_per_kwh,
        penalty_price,
        interval_hours,
        power_cap_kw: vec![power_cap_kw; n],
    };
    let plan = solve_bidding(&inst).map_err(value_err)?;
    Ok((to_rows(&plan.power_kw), plan.costs.energy, plan.costs.penalty, plan.costs.total))
}

#[pymodule]
fn chargegen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_function(wrap_pyfunction!(train_denoiser, m)?)?;
    m.add_function(wrap_pyfunction!(load_denoiser, m)?)?;
    m.add_function(wrap_pyfunction!(sinusoidal_step_embedding, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_score, m)?)?;
    m.add_function(wrap_pyfunction!(discriminative_score, m)?)?;
    m.add_function(wrap_pyfunction!(tail_score, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(solve_day_ahead_bids, m)?)?;
    Ok(())
}
