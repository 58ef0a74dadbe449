//! Forward-process and reverse-step statistics of the denoising diffusion
//! chain: noise schedule construction, closed-form corruption and the
//! Gaussian posterior parameters used during sampling.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step count must be at least 2, got {0}")]
    TooFewSteps(usize),
    #[error("beta endpoints must satisfy 0 < beta_1 <= beta_T < 1, got ({0}, {1})")]
    BadBetaRange(f64, f64),
    #[error("step index {t} outside valid range {min}..={max}")]
    StepOutOfRange { t: usize, min: usize, max: usize },
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Precomputed per-step diffusion quantities.
///
/// `beta[t-1]` is the noise variance added at step `t`, `alpha_bar[t-1]` the
/// cumulative product of `1 - beta` up to `t`, and `beta_tilde[t-1]` the
/// variance of the reverse-step posterior. Steps are 1-based in the public
/// API to match the chain indexing `x_1..x_T`; the convention `alpha_bar_0 = 1`
/// makes `beta_tilde[0] = 0`, so the final reverse step is deterministic.
///
/// Immutable after construction; all queries are table lookups.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl DiffusionSchedule {
    /// Builds the quadratic schedule: linear interpolation between
    /// `sqrt(beta_1)` and `sqrt(beta_T)`, squared. The endpoints are returned
    /// bit-exactly at `t = 1` and `t = T` (the interpolation formula would
    /// otherwise round-trip them through a square root).
    pub fn quadratic(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self, ScheduleError> {
        if steps < 2 {
            return Err(ScheduleError::TooFewSteps(steps));
        }
        if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
            return Err(ScheduleError::BadBetaRange(beta_1, beta_t));
        }
        let span = (steps - 1) as f64;
        let (lo, hi) = (beta_1.sqrt(), beta_t.sqrt());
        let beta: Vec<f64> = (1..=steps)
            .map(|t| {
                if t == 1 {
                    beta_1
                } else if t == steps {
                    beta_t
                } else {
                    let w = (t - 1) as f64 / span;
                    ((1.0 - w) * lo + w * hi).powi(2)
                }
            })
            .collect();

        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for &b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        // alpha_bar_0 = 1 by convention, hence beta_tilde_1 = 0.
        let beta_tilde: Vec<f64> = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();

        Ok(Self { beta, alpha_bar, beta_tilde })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check_step(t, 1).expect("step out of range");
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.check_step(t, 1).expect("step out of range");
        self.alpha_bar[t - 1]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.check_step(t, 1).expect("step out of range");
        self.beta_tilde[t - 1]
    }

    fn check_step(&self, t: usize, min: usize) -> Result<(), ScheduleError> {
        if t < min || t > self.steps() {
            return Err(ScheduleError::StepOutOfRange { t, min, max: self.steps() });
        }
        Ok(())
    }

    fn check_len(a: &[f64], b: &[f64]) -> Result<(), ScheduleError> {
        if a.len() != b.len() {
            return Err(ScheduleError::LengthMismatch(a.len(), b.len()));
        }
        Ok(())
    }

    /// Closed-form corruption: `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`.
    pub fn forward_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, ScheduleError> {
        self.check_step(t, 1)?;
        Self::check_len(x0, eps)?;
        let ab = self.alpha_bar[t - 1];
        let (ws, wn) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| ws * x + wn * e).collect())
    }

    /// Posterior mean of `x_{t-1}` given `(x_t, x_0)`:
    /// `sqrt(alpha_bar_{t-1}) beta_t / (1 - alpha_bar_t) * x_0
    ///  + sqrt(1 - beta_t) (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * x_t`.
    ///
    /// Defined for `t >= 2`; the `t = 1` posterior collapses onto `x_0`.
    pub fn posterior_mean_from_x0(
        &self,
        x0: &[f64],
        xt: &[f64],
        t: usize,
    ) -> Result<Vec<f64>, ScheduleError> {
        self.check_step(t, 2)?;
        Self::check_len(x0, xt)?;
        let ab = self.alpha_bar[t - 1];
        let ab_prev = self.alpha_bar[t - 2];
        let b = self.beta[t - 1];
        let c0 = ab_prev.sqrt() * b / (1.0 - ab);
        let ct = (1.0 - b).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok(x0.iter().zip(xt).map(|(x, y)| c0 * x + ct * y).collect())
    }

    /// Posterior mean parameterized by the predicted noise:
    /// `(x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(1 - beta_t)`.
    pub fn posterior_mean_from_eps(
        &self,
        xt: &[f64],
        eps_hat: &[f64],
        t: usize,
    ) -> Result<Vec<f64>, ScheduleError> {
        self.check_step(t, 1)?;
        Self::check_len(xt, eps_hat)?;
        let ab = self.alpha_bar[t - 1];
        let b = self.beta[t - 1];
        let scale = 1.0 / (1.0 - b).sqrt();
        let k = b / (1.0 - ab).sqrt();
        Ok(xt.iter().zip(eps_hat).map(|(x, e)| scale * (x - k * e)).collect())
    }

    /// One reverse transition `x_t -> x_{t-1}`:
    /// posterior mean plus `sqrt(beta_tilde_t) z`. At `t = 1` the noise term
    /// is suppressed regardless of `z` (`beta_tilde_1 = 0`), making the final
    /// step deterministic.
    pub fn reverse_step(
        &self,
        xt: &[f64],
        eps_hat: &[f64],
        t: usize,
        z: &[f64],
    ) -> Result<Vec<f64>, ScheduleError> {
        self.check_step(t, 1)?;
        Self::check_len(xt, z)?;
        let mut mean = self.posterior_mean_from_eps(xt, eps_hat, t)?;
        if t > 1 {
            let sd = self.beta_tilde[t - 1].sqrt();
            for (m, n) in mean.iter_mut().zip(z) {
                *m += sd * n;
            }
        }
        Ok(mean)
    }
}
