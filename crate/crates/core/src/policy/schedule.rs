//! Diffusion noise schedule and the deterministic DDIM update.
//!
//! Forward noising follows the closed form
//! `w_tau = sqrt(abar_tau) w_0 + sqrt(1 - abar_tau) eps`; the reverse
//! trajectory steps down a strictly descending sub-sequence of timesteps
//! with the noise estimate recovered from the current sample and the
//! predicted clean vector. `abar_0 = 1` by convention, so the final step
//! returns the prediction itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("timestep {tau} out of range 1..={t_total}")]
    TauOutOfRange { tau: usize, t_total: usize },
    #[error("vector length {got} does not match schedule dimension {want}")]
    LengthMismatch { got: usize, want: usize },
}

/// Noise schedule over `t_total` steps with a DDIM sub-sequence of
/// `ddim_taus` (strictly descending, ending at a positive timestep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t_total: usize,
    pub betas: Vec<f64>,
    /// `alpha_bars[tau]` for `tau in 0..=t_total`, `alpha_bars[0] = 1`.
    pub alpha_bars: Vec<f64>,
    pub ddim_taus: Vec<usize>,
}

impl DiffusionSchedule {
    /// Linear beta ramp; DDIM timesteps evenly spaced from `t_total` down.
    pub fn linear(
        t_total: usize,
        beta_start: f64,
        beta_end: f64,
        ddim_steps: usize,
    ) -> Result<Self, ScheduleError> {
        if t_total == 0 {
            return Err(ScheduleError::Invalid("t_total must be at least 1".into()));
        }
        if ddim_steps == 0 || ddim_steps > t_total {
            return Err(ScheduleError::Invalid(format!(
                "ddim_steps {ddim_steps} must be in 1..={t_total}"
            )));
        }
        let betas: Vec<f64> = (0..t_total)
            .map(|i| {
                if t_total == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_total - 1) as f64
                }
            })
            .collect();
        // Descending, evenly spaced in index space, unique.
        let mut ddim_taus: Vec<usize> = (1..=ddim_steps)
            .rev()
            .map(|i| ((i * t_total) as f64 / ddim_steps as f64).round() as usize)
            .map(|t| t.clamp(1, t_total))
            .collect();
        ddim_taus.dedup();
        Self::new(betas, ddim_taus)
    }

    pub fn new(betas: Vec<f64>, ddim_taus: Vec<usize>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::Invalid("empty beta sequence".into()));
        }
        if betas.iter().any(|&b| !(0.0 < b && b < 1.0)) {
            return Err(ScheduleError::Invalid("betas must lie in (0, 1)".into()));
        }
        let t_total = betas.len();
        let mut alpha_bars = Vec::with_capacity(t_total + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        // abar strictly decreasing follows from betas in (0, 1).
        debug_assert!(alpha_bars.windows(2).all(|w| w[1] < w[0]));
        if ddim_taus.is_empty() {
            return Err(ScheduleError::Invalid("empty DDIM sub-sequence".into()));
        }
        if ddim_taus.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ScheduleError::Invalid("DDIM timesteps must strictly descend".into()));
        }
        if *ddim_taus.first().unwrap() > t_total || *ddim_taus.last().unwrap() < 1 {
            return Err(ScheduleError::Invalid("DDIM timesteps out of range".into()));
        }
        Ok(Self { t_total, betas, alpha_bars, ddim_taus })
    }

    /// `abar_tau` with the `abar_0 = 1` convention; `tau <= t_total`.
    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bars[tau]
    }

    pub fn ddim_steps(&self) -> usize {
        self.ddim_taus.len()
    }
}

/// Closed-form forward noising to timestep `tau` (`1..=t_total`; `tau = 0`
/// returns the clean vector).
pub fn forward_noise(
    w0: &[f64],
    tau: usize,
    schedule: &DiffusionSchedule,
    eps: &[f64],
) -> Result<Vec<f64>, ScheduleError> {
    if tau > schedule.t_total {
        return Err(ScheduleError::TauOutOfRange { tau, t_total: schedule.t_total });
    }
    if eps.len() != w0.len() {
        return Err(ScheduleError::LengthMismatch { got: eps.len(), want: w0.len() });
    }
    let abar = schedule.alpha_bar(tau);
    let signal = abar.sqrt();
    let noise = (1.0 - abar).sqrt();
    Ok(w0.iter().zip(eps.iter()).map(|(&w, &e)| signal * w + noise * e).collect())
}

/// One deterministic DDIM update from `tau_i` to `tau_prev < tau_i`:
/// recover `eps_hat = (w_tau - sqrt(abar_i) w0_hat) / sqrt(1 - abar_i)`
/// and emit `sqrt(abar_prev) w0_hat + sqrt(1 - abar_prev) eps_hat`.
///
/// A vanishing `1 - abar_i` (possible only at `tau = 0`-like schedules)
/// defines `eps_hat = 0` instead of dividing by zero.
pub fn ddim_step(
    w0_hat: &[f64],
    w_tau: &[f64],
    tau_i: usize,
    tau_prev: usize,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>, ScheduleError> {
    if tau_i == 0 || tau_i > schedule.t_total {
        return Err(ScheduleError::TauOutOfRange { tau: tau_i, t_total: schedule.t_total });
    }
    if tau_prev >= tau_i {
        return Err(ScheduleError::Invalid(format!(
            "tau_prev {tau_prev} must be below tau_i {tau_i}"
        )));
    }
    if w0_hat.len() != w_tau.len() {
        return Err(ScheduleError::LengthMismatch { got: w0_hat.len(), want: w_tau.len() });
    }
    let abar_i = schedule.alpha_bar(tau_i);
    let abar_prev = schedule.alpha_bar(tau_prev);
    let noise_scale_i = (1.0 - abar_i).sqrt();
    let signal_i = abar_i.sqrt();
    let signal_prev = abar_prev.sqrt();
    let noise_prev = (1.0 - abar_prev).sqrt();
    Ok(w0_hat
        .iter()
        .zip(w_tau.iter())
        .map(|(&w0h, &wt)| {
            let eps_hat = if noise_scale_i < 1e-12 {
                0.0
            } else {
                (wt - signal_i * w0h) / noise_scale_i
            };
            signal_prev * w0h + noise_prev * eps_hat
        })
        .collect())
}
