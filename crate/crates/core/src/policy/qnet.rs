//! Action-value network over the UAV-selection and ratio actions.
//!
//! The joint space is factored into one head over the non-empty selection
//! masks and one per-UAV head over the ratio grid; the value of a joint
//! action is the sum of its chosen head entries. This sidesteps the
//! exponential joint head while keeping the greedy argmax trivial.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::nn::{Gradients, Mlp, SgdMomentum};

/// Selection/ratio action chosen by the Q-network. `uav_mask` is always
/// non-zero (the empty selection is not representable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAction {
    pub uav_mask: u32,
    pub kappa_idx: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub net: Mlp,
    pub num_uavs: usize,
    pub n_kappa: usize,
}

impl QNetwork {
    pub fn new(
        state_dim: usize,
        num_uavs: usize,
        n_kappa: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(num_uavs >= 1 && num_uavs < 31);
        let out_dim = ((1usize << num_uavs) - 1) + num_uavs * n_kappa;
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        Self { net: Mlp::new(&dims, rng), num_uavs, n_kappa }
    }

    fn mask_head_len(&self) -> usize {
        (1usize << self.num_uavs) - 1
    }

    /// Flat output indices of the entries a joint action reads.
    fn chosen_entries(&self, action: &QAction) -> Vec<usize> {
        let mut idx = vec![action.uav_mask as usize - 1];
        for (u, &k) in action.kappa_idx.iter().enumerate() {
            idx.push(self.mask_head_len() + u * self.n_kappa + k);
        }
        idx
    }

    /// Value of a joint action: sum of its head entries.
    pub fn q_value(&self, state: &[f64], action: &QAction) -> f64 {
        let out = self.net.forward(state);
        self.chosen_entries(action).iter().map(|&i| out[i]).sum()
    }

    /// Epsilon-greedy action: uniform over the valid joint space with
    /// probability `epsilon`, per-head argmax otherwise. The empty UAV
    /// set is never emitted by construction.
    pub fn select(&self, state: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> QAction {
        if rng.random_range(0.0..1.0) < epsilon {
            return QAction {
                uav_mask: rng.random_range(1..=self.mask_head_len() as u32),
                kappa_idx: (0..self.num_uavs).map(|_| rng.random_range(0..self.n_kappa)).collect(),
            };
        }
        let out = self.net.forward(state);
        let mask_head = &out[..self.mask_head_len()];
        let best_mask = argmax(mask_head) as u32 + 1;
        let kappa_idx = (0..self.num_uavs)
            .map(|u| {
                let base = self.mask_head_len() + u * self.n_kappa;
                argmax(&out[base..base + self.n_kappa])
            })
            .collect();
        QAction { uav_mask: best_mask, kappa_idx }
    }

    /// One regression step of `1/2 (Q(s, a) - r)^2` onto the chosen head
    /// entries; returns the loss.
    pub fn train_step(
        &mut self,
        optimizer: &mut SgdMomentum,
        state: &[f64],
        action: &QAction,
        reward: f64,
    ) -> f64 {
        let (out, cache) = self.net.forward_cached(state);
        let chosen = self.chosen_entries(action);
        let q: f64 = chosen.iter().map(|&i| out[i]).sum();
        let err = q - reward;
        let mut grad_out = vec![0.0; out.len()];
        for &i in &chosen {
            grad_out[i] = err;
        }
        let grads: Gradients = self.net.backward(&cache, &grad_out);
        optimizer.step(&mut self.net, &grads);
        0.5 * err * err
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
