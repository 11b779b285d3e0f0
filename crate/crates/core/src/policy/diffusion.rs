//! Conditional precoder generator: a clean-vector predictor network
//! trained on search labels, sampled through the deterministic DDIM
//! reverse chain, and projected back onto the codebook.
//!
//! Precoding vectors are laid out as one slot per UAV (real/imaginary
//! interleaved complex entries); deselected UAVs keep zero slots so the
//! network dimensions stay fixed for any selection.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::link::PrecoderCodebook;
use crate::policy::nn::{Mlp, SgdMomentum};
use crate::policy::schedule::{ddim_step, forward_noise, DiffusionSchedule, ScheduleError};

/// Sin/cos pairs in the timestep embedding.
const TIME_EMBED_PAIRS: usize = 4;

/// Sinusoidal timestep embedding at dyadic frequencies of `tau / T`.
pub fn time_embedding(tau: usize, t_total: usize) -> Vec<f64> {
    let norm = tau as f64 / t_total as f64;
    let mut out = Vec::with_capacity(2 * TIME_EMBED_PAIRS);
    for k in 0..TIME_EMBED_PAIRS {
        let angle = norm * std::f64::consts::PI * (1 << k) as f64;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Flattened real dimension of `num_uavs` precoder slots of `t_x` complex
/// entries each.
pub fn precoder_vector_dim(num_uavs: usize, t_x: usize) -> usize {
    num_uavs * t_x * 2
}

/// Flatten codebook entries into the per-UAV slot layout; deselected
/// slots stay zero.
pub fn flatten_precoders(
    codebook: &PrecoderCodebook,
    precoder_idx: &[usize],
    selected: &[usize],
    num_uavs: usize,
) -> Vec<f64> {
    let t_x = codebook.t_x();
    let mut out = vec![0.0; precoder_vector_dim(num_uavs, t_x)];
    for &u in selected {
        let entry = codebook.entry(precoder_idx[u]).expect("validated index");
        let base = u * t_x * 2;
        for (i, v) in entry.iter().enumerate() {
            out[base + 2 * i] = v.re;
            out[base + 2 * i + 1] = v.im;
        }
    }
    out
}

/// Nearest codebook entry per selected UAV by maximal `|<entry, slot>|`
/// (phase-invariant); deselected UAVs report index 0.
pub fn project_to_codebook(
    w_flat: &[f64],
    selected: &[usize],
    num_uavs: usize,
    codebook: &PrecoderCodebook,
) -> Vec<usize> {
    let t_x = codebook.t_x();
    assert_eq!(w_flat.len(), precoder_vector_dim(num_uavs, t_x), "layout mismatch");
    let mut out = vec![0usize; num_uavs];
    for &u in selected {
        let base = u * t_x * 2;
        let slot: Vec<Complex64> = (0..t_x)
            .map(|i| Complex64::new(w_flat[base + 2 * i], w_flat[base + 2 * i + 1]))
            .collect();
        let mut best = (0usize, f64::NEG_INFINITY);
        for idx in 0..codebook.len() {
            let entry = codebook.entry(idx).expect("index in range");
            let inner: Complex64 =
                entry.iter().zip(slot.iter()).map(|(e, s)| e.conj() * s).sum();
            let score = inner.norm();
            if score > best.1 {
                best = (idx, score);
            }
        }
        out[u] = best.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], learning_rate: 5e-3, momentum: 0.9 }
    }
}

/// Clean-precoder predictor plus its schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPolicy {
    pub net: Mlp,
    pub schedule: DiffusionSchedule,
    pub w_dim: usize,
    pub c_dim: usize,
}

impl DiffusionPolicy {
    pub fn new(
        w_dim: usize,
        c_dim: usize,
        schedule: DiffusionSchedule,
        cfg: &DiffusionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input_dim = w_dim + 2 * TIME_EMBED_PAIRS + c_dim;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(w_dim);
        Self { net: Mlp::new(&dims, rng), schedule, w_dim, c_dim }
    }

    fn assemble_input(&self, w_tau: &[f64], tau: usize, condition: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w_tau.len(), self.w_dim);
        debug_assert_eq!(condition.len(), self.c_dim);
        let mut input = Vec::with_capacity(self.net.input_dim());
        input.extend_from_slice(w_tau);
        input.extend(time_embedding(tau, self.schedule.t_total));
        input.extend_from_slice(condition);
        input
    }

    /// Predict the clean vector from a noised sample.
    pub fn predict_w0(&self, w_tau: &[f64], tau: usize, condition: &[f64]) -> Vec<f64> {
        self.net.forward(&self.assemble_input(w_tau, tau, condition))
    }

    /// One regression step on `||predict(w_tau, tau, c) - w0||^2` with a
    /// freshly drawn timestep and noise per sample; returns the mean loss.
    pub fn train_step(
        &mut self,
        optimizer: &mut SgdMomentum,
        batch: &[(&[f64], &[f64])],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ScheduleError> {
        assert!(!batch.is_empty());
        let mut total_loss = 0.0;
        let mut grads = crate::policy::nn::Gradients::zeros_like(&self.net);
        for &(w0, condition) in batch {
            let tau = rng.random_range(1..=self.schedule.t_total);
            let eps: Vec<f64> = (0..self.w_dim).map(|_| rng.sample(StandardNormal)).collect();
            let w_tau = forward_noise(w0, tau, &self.schedule, &eps)?;
            let input = self.assemble_input(&w_tau, tau, condition);
            let (pred, cache) = self.net.forward_cached(&input);
            let mut grad_out = Vec::with_capacity(self.w_dim);
            let mut loss = 0.0;
            for (p, t) in pred.iter().zip(w0.iter()) {
                let diff = p - t;
                loss += diff * diff;
                grad_out.push(2.0 * diff / batch.len() as f64);
            }
            total_loss += loss;
            let g = self.net.backward(&cache, &grad_out);
            grads.add_scaled(&g, 1.0);
        }
        optimizer.step(&mut self.net, &grads);
        Ok(total_loss / batch.len() as f64)
    }

    /// Deterministic DDIM generation from Gaussian noise; returns the
    /// sample and the number of predictor evaluations (exactly the number
    /// of DDIM steps).
    pub fn generate(
        &self,
        condition: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, usize), ScheduleError> {
        let mut w: Vec<f64> = (0..self.w_dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut evals = 0usize;
        let taus = &self.schedule.ddim_taus;
        for i in 0..taus.len() {
            let tau_i = taus[i];
            let tau_prev = if i + 1 < taus.len() { taus[i + 1] } else { 0 };
            let w0_hat = self.predict_w0(&w, tau_i, condition);
            evals += 1;
            w = ddim_step(&w0_hat, &w, tau_i, tau_prev, &self.schedule)?;
        }
        Ok((w, evals))
    }
}

/// Fit a fresh predictor on a fixed dataset of `(w0, condition)` pairs;
/// returns the policy and the per-step loss trace.
pub fn train_diffusion(
    dataset: &[(Vec<f64>, Vec<f64>)],
    schedule: DiffusionSchedule,
    cfg: &DiffusionConfig,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DiffusionPolicy, Vec<f64>), ScheduleError> {
    assert!(!dataset.is_empty(), "empty training dataset");
    let w_dim = dataset[0].0.len();
    let c_dim = dataset[0].1.len();
    let mut policy = DiffusionPolicy::new(w_dim, c_dim, schedule, cfg, rng);
    let mut optimizer = SgdMomentum::new(&policy.net, cfg.learning_rate, cfg.momentum);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (w0, c) = &dataset[step % dataset.len()];
        let loss = policy.train_step(&mut optimizer, &[(w0.as_slice(), c.as_slice())], rng)?;
        losses.push(loss);
    }
    Ok((policy, losses))
}
