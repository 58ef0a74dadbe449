//! Day-ahead charging-energy bidding: choose per-EV power bids that minimize
//! energy procurement cost plus a quadratic user-penalty on the gap between
//! bids and (simulated) demand, under per-EV power caps.
//!
//! The program is a box-constrained convex QP that separates per EV. Each
//! subproblem is solved by projected gradient with exact line search on the
//! quadratic; the Hessian `2 rho (I + 11^T)` gives the step bound and the
//! line-search denominator in closed form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::ScenarioBatch;
use crate::eval::{kmeans, EvalError};
use crate::ingest::RateUnit;

/// First-order optimality: projected-gradient residual, relative.
const RESIDUAL_TOL: f64 = 1e-7;
const MAX_ITERS: usize = 500_000;

/// Intervals per day at 5-min resolution.
pub const DAY_INTERVALS: usize = 288;
pub const MINUTES_PER_DAY: usize = 1440;

#[derive(Debug, Error)]
pub enum BidError {
    #[error("instance has no EVs or no intervals")]
    EmptyInstance,
    #[error("negative price at interval {0}")]
    NegativePrice(usize),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("arrival minute {0} beyond day end")]
    ArrivalBeyondDay(usize),
    #[error("price file must have {DAY_INTERVALS} (5-min) or 24 (hourly) rows, got {0}")]
    BadPriceRows(usize),
    #[error("solver failed to reach the residual tolerance")]
    Stalled,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad file format: {0}")]
    Format(String),
}

/// One bidding problem: demands in kW per EV and interval, day-ahead prices
/// per interval, penalty weight, interval length and per-EV power caps.
#[derive(Debug, Clone)]
pub struct BiddingInstance {
    pub demand_kw: Array2<f64>,
    pub price_per_kwh: Vec<f64>,
    pub penalty_price: f64,
    pub interval_hours: f64,
    pub power_cap_kw: Vec<f64>,
}

impl BiddingInstance {
    pub fn validate(&self) -> Result<(), BidError> {
        let (n, t) = self.demand_kw.dim();
        if n == 0 || t == 0 {
            return Err(BidError::EmptyInstance);
        }
        if self.price_per_kwh.len() != t {
            return Err(BidError::Dimensions(format!(
                "{} prices for {t} intervals",
                self.price_per_kwh.len()
            )));
        }
        if self.power_cap_kw.len() != n {
            return Err(BidError::Dimensions(format!(
                "{} power caps for {n} EVs",
                self.power_cap_kw.len()
            )));
        }
        if let Some(i) = self.price_per_kwh.iter().position(|p| *p < 0.0) {
            return Err(BidError::NegativePrice(i));
        }
        if self.penalty_price < 0.0 {
            return Err(BidError::Dimensions("penalty price must be >= 0".into()));
        }
        if !(self.interval_hours > 0.0) {
            return Err(BidError::Dimensions("interval length must be positive".into()));
        }
        if self.demand_kw.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(BidError::Dimensions("demands must be finite and >= 0".into()));
        }
        if self.power_cap_kw.iter().any(|c| !(*c > 0.0)) {
            return Err(BidError::Dimensions("power caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiddingCosts {
    pub energy: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct BiddingPlan {
    pub power_kw: Array2<f64>,
    pub costs: BiddingCosts,
}

/// Costs of a fixed plan against a demand matrix: energy procurement from
/// the bids alone, penalty from the bid/demand gap. Also used to score a
/// plan against realized (actual) sessions.
pub fn evaluate_plan(
    power_kw: &Array2<f64>,
    demand_kw: &Array2<f64>,
    price_per_kwh: &[f64],
    penalty_price: f64,
    interval_hours: f64,
) -> Result<BiddingCosts, BidError> {
    if power_kw.dim() != demand_kw.dim() {
        return Err(BidError::Dimensions(format!(
            "plan {:?} vs demand {:?}",
            power_kw.dim(),
            demand_kw.dim()
        )));
    }
    let (_, t) = power_kw.dim();
    if price_per_kwh.len() != t {
        return Err(BidError::Dimensions("price length".into()));
    }
    let mut energy = 0.0;
    for (i, &price) in price_per_kwh.iter().enumerate() {
        let total_kw: f64 = power_kw.column(i).sum();
        energy += price * total_kw * interval_hours;
    }
    let mut flat_gap = 0.0;
    let mut demand_gap = 0.0;
    for n in 0..power_kw.nrows() {
        let mut row_sum = 0.0;
        for i in 0..t {
            let e = power_kw[[n, i]] - demand_kw[[n, i]];
            flat_gap += e * e;
            row_sum += e;
        }
        demand_gap += row_sum * row_sum;
    }
    let penalty = penalty_price * (flat_gap + demand_gap);
    Ok(BiddingCosts { energy, penalty, total: energy + penalty })
}

/// Gradient of the per-EV objective at `p`.
fn ev_gradient(p: &[f64], d: &[f64], c: &[f64], rho: f64, out: &mut [f64]) {
    let gap_sum: f64 = p.iter().zip(d).map(|(a, b)| a - b).sum();
    for i in 0..p.len() {
        out[i] = c[i] + 2.0 * rho * ((p[i] - d[i]) + gap_sum);
    }
}

fn clamp_to_box(p: &mut [f64], cap: f64) {
    for v in p.iter_mut() {
        *v = v.clamp(0.0, cap);
    }
}

/// Solves one EV's box QP by projected gradient with exact line search.
fn solve_ev(d: &[f64], c: &[f64], rho: f64, cap: f64) -> Result<Vec<f64>, BidError> {
    let t = d.len();
    let mut p: Vec<f64> = d.to_vec();
    clamp_to_box(&mut p, cap);

    let lipschitz = 2.0 * rho * (1.0 + t as f64);
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    let mut grad = vec![0.0; t];
    let mut trial = vec![0.0; t];

    for _ in 0..MAX_ITERS {
        ev_gradient(&p, d, c, rho, &mut grad);

        // Residual: distance to the fixed point of a unit projected step.
        let mut residual = 0.0;
        let mut p_norm = 0.0;
        for i in 0..t {
            let projected = (p[i] - grad[i]).clamp(0.0, cap);
            residual += (p[i] - projected).powi(2);
            p_norm += p[i] * p[i];
        }
        if residual.sqrt() <= RESIDUAL_TOL * (1.0 + p_norm.sqrt()) {
            return Ok(p);
        }

        for i in 0..t {
            trial[i] = (p[i] - step * grad[i]).clamp(0.0, cap) - p[i];
        }
        let g_dot_dir: f64 = grad.iter().zip(&trial).map(|(g, v)| g * v).sum();
        let dir_sum: f64 = trial.iter().sum();
        let dir_h_dir = 2.0 * rho * (trial.iter().map(|v| v * v).sum::<f64>() + dir_sum * dir_sum);
        let alpha = if dir_h_dir > 0.0 {
            (-g_dot_dir / dir_h_dir).clamp(0.0, 1.0)
        } else if g_dot_dir < 0.0 {
            1.0
        } else {
            0.0
        };
        for i in 0..t {
            p[i] += alpha * trial[i];
        }
        clamp_to_box(&mut p, cap);
    }
    Err(BidError::Stalled)
}

/// Solves the full bidding program. The objective has no cross-EV coupling,
/// so the subproblems run independently in parallel.
pub fn solve_bidding(inst: &BiddingInstance) -> Result<BiddingPlan, BidError> {
    inst.validate()?;
    let (n, t) = inst.demand_kw.dim();
    let rho = inst.penalty_price;
    let costs_coeff: Vec<f64> = inst
        .price_per_kwh
        .iter()
        .map(|price| price * inst.interval_hours)
        .collect();

    let rows: Vec<Result<Vec<f64>, BidError>> = (0..n)
        .into_par_iter()
        .map(|ev| {
            let d = inst.demand_kw.row(ev);
            solve_ev(d.as_slice().unwrap(), &costs_coeff, rho, inst.power_cap_kw[ev])
        })
        .collect();

    let mut power = Array2::zeros((n, t));
    for (ev, row) in rows.into_iter().enumerate() {
        power.row_mut(ev).assign(&Array1::from_vec(row?));
    }
    let costs = evaluate_plan(&power, &inst.demand_kw, &inst.price_per_kwh, rho, inst.interval_hours)?;
    Ok(BiddingPlan { power_kw: power, costs })
}

/// K-means scenario reduction: `k` medoid curves plus member-count weights.
#[derive(Debug, Clone)]
pub struct ReducedScenarios {
    pub scenarios: Array2<f64>,
    pub weights: Vec<usize>,
    pub medoid_indices: Vec<usize>,
}

pub fn reduce_scenarios(batch: &ScenarioBatch, k: usize, run_seed: u64) -> Result<ReducedScenarios, BidError> {
    let clustering = kmeans(&batch.values.view(), k, 10, run_seed)?;
    let mut weights = vec![0usize; k];
    for &a in &clustering.assignments {
        weights[a] += 1;
    }
    let mut scenarios = Array2::zeros((k, batch.seq_len()));
    for (c, &m) in clustering.medoids.iter().enumerate() {
        scenarios.row_mut(c).assign(&batch.values.row(m));
    }
    Ok(ReducedScenarios { scenarios, weights, medoid_indices: clustering.medoids })
}

/// Options for placing battery curves on the day grid.
#[derive(Debug, Clone)]
pub struct AssembleConfig {
    /// Unit of the curve values; converted to kW on placement.
    pub unit: RateUnit,
    /// Per-EV cap, kW.
    pub power_cap_kw: f64,
    /// Penalty price; `None` derives 0.8 x max day-ahead price.
    pub penalty_price: Option<f64>,
    /// Resolution of the input curves, minutes per sample.
    pub curve_resolution_min: usize,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            unit: RateUnit::Amps { voltage: crate::ingest::DEFAULT_VOLTAGE },
            power_cap_kw: 10.0,
            penalty_price: None,
            curve_resolution_min: 1,
        }
    }
}

/// Builds a bidding instance by shifting each demand curve to its arrival
/// time on the 5-min day grid, truncating at midnight.
pub fn assemble_instance(
    curves: &Array2<f64>,
    arrivals_min: &[usize],
    price_per_kwh: &[f64],
    cfg: &AssembleConfig,
) -> Result<BiddingInstance, BidError> {
    let n = curves.nrows();
    if n == 0 {
        return Err(BidError::EmptyInstance);
    }
    if arrivals_min.len() != n {
        return Err(BidError::Dimensions(format!("{} arrivals for {n} curves", arrivals_min.len())));
    }
    if price_per_kwh.len() != DAY_INTERVALS {
        return Err(BidError::BadPriceRows(price_per_kwh.len()));
    }
    if let Some(&bad) = arrivals_min.iter().find(|&&a| a >= MINUTES_PER_DAY) {
        return Err(BidError::ArrivalBeyondDay(bad));
    }

    let grid_min = MINUTES_PER_DAY / DAY_INTERVALS;
    let mut demand = Array2::zeros((n, DAY_INTERVALS));
    for ev in 0..n {
        for (m, &raw) in curves.row(ev).iter().enumerate() {
            let kw = cfg.unit.to_kw(raw.max(0.0));
            if kw == 0.0 {
                continue;
            }
            // Spread this curve sample over the day-grid bins it overlaps.
            let start = arrivals_min[ev] + m * cfg.curve_resolution_min;
            for offset in 0..cfg.curve_resolution_min {
                let minute = start + offset;
                if minute >= MINUTES_PER_DAY {
                    break;
                }
                demand[[ev, minute / grid_min]] += kw / grid_min as f64;
            }
        }
    }

    let max_price = price_per_kwh.iter().cloned().fold(0.0, f64::max);
    Ok(BiddingInstance {
        demand_kw: demand,
        price_per_kwh: price_per_kwh.to_vec(),
        penalty_price: cfg.penalty_price.unwrap_or(0.8 * max_price),
        interval_hours: grid_min as f64 / 60.0,
        power_cap_kw: vec![cfg.power_cap_kw; n],
    })
}

/// Empirical arrival-time distribution in 30-min bins, sampled with
/// replacement (uniform within a bin).
#[derive(Debug, Clone)]
pub struct ArrivalHistogram {
    counts: Vec<usize>,
    bin_minutes: usize,
}

impl ArrivalHistogram {
    pub fn estimate(arrival_minutes: &[usize]) -> Result<Self, BidError> {
        if arrival_minutes.is_empty() {
            return Err(BidError::EmptyInstance);
        }
        let bin_minutes = 30;
        let mut counts = vec![0usize; MINUTES_PER_DAY / bin_minutes];
        for &a in arrival_minutes {
            if a >= MINUTES_PER_DAY {
                return Err(BidError::ArrivalBeyondDay(a));
            }
            counts[a / bin_minutes] += 1;
        }
        Ok(Self { counts, bin_minutes })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let total: usize = self.counts.iter().sum();
        let mut target = rng.random_range(0..total);
        for (bin, &c) in self.counts.iter().enumerate() {
            if target < c {
                return bin * self.bin_minutes + rng.random_range(0..self.bin_minutes);
            }
            target -= c;
        }
        unreachable!("histogram counts sum to total")
    }
}

/// Reads day-ahead prices: CSV `interval_start,price_per_kwh` with either
/// 288 five-minute rows or 24 hourly rows (repeated across the hour).
pub fn read_price_csv(path: &Path) -> Result<Vec<f64>, BidError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut prices = Vec::new();
    for record in reader.records() {
        let record = record?;
        let raw = record
            .get(1)
            .ok_or_else(|| BidError::Format("price row missing price_per_kwh".into()))?;
        let price: f64 = raw
            .parse()
            .map_err(|_| BidError::Format(format!("bad price '{raw}'")))?;
        prices.push(price);
    }
    let expanded = match prices.len() {
        DAY_INTERVALS => prices,
        24 => prices.into_iter().flat_map(|p| std::iter::repeat_n(p, 12)).collect(),
        other => return Err(BidError::BadPriceRows(other)),
    };
    if let Some(i) = expanded.iter().position(|p| *p < 0.0) {
        return Err(BidError::NegativePrice(i));
    }
    Ok(expanded)
}

/// Writes the plan as `ev,interval,p_kw` rows.
pub fn write_plan_csv(plan: &BiddingPlan, path: &Path, comments: &[String]) -> Result<(), BidError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "ev,interval,p_kw")?;
    for ev in 0..plan.power_kw.nrows() {
        for i in 0..plan.power_kw.ncols() {
            writeln!(w, "{ev},{i},{}", plan.power_kw[[ev, i]])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cost summary block mirroring the three bidding-cost rows.
pub fn write_cost_summary(costs: &BiddingCosts, path: &Path) -> Result<(), BidError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "energy_procurement_usd = {:.4}", costs.energy)?;
    writeln!(w, "user_penalty_usd = {:.4}", costs.penalty)?;
    writeln!(w, "total_usd = {:.4}", costs.total)?;
    w.flush()?;
    Ok(())
}
