//! The optimization environment: joint actions (UAV selection, Top-K
//! ratios, precoders), latency accounting, the weighted-utility reward,
//! and the full per-sequence evaluation step gluing sparsification, the
//! simulated uplink, and the proxy perceiver together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::image::DenseImage;
use crate::link::{link_rates, LinkError, LinkState, PrecoderCodebook, RateReport};
use crate::metrics::{
    ground_truth_bev, iou_semantic, match_instances, mean_iou_over_frames, panoptic_quality,
    proxy_perceive, MetricsError,
};
use crate::scenario::{render_view, Scenario, ScenarioError};
use crate::sparsify::{
    data_size, importance_map, neighborhood_score, top_k_select, wire, SparseImage, SparsifyError,
};

/// Constraint-violation diagnostics for invalid joint actions, named by
/// the contract they break.
#[derive(Debug, Error, PartialEq)]
pub enum ConstraintViolation {
    #[error("UAV selection mask is empty: at least one UAV must be associated")]
    EmptySelection,
    #[error("selection mask bit {bit} exceeds the {num_uavs} available UAVs")]
    SelectionOutOfRange { bit: usize, num_uavs: usize },
    #[error("kappa index {index} outside the ratio grid of {grid_len} values (data-size bound)")]
    KappaOutOfGrid { index: usize, grid_len: usize },
    #[error("kappa value {0} outside (0, 1] (data-size bound)")]
    KappaOutOfRange(f64),
    #[error("precoder index {index} outside the codebook of {size} entries")]
    PrecoderOutOfCodebook { index: usize, size: usize },
    #[error("action vectors must carry one entry per UAV ({expected}), got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Constraint(#[from] ConstraintViolation),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sparsify(#[from] SparsifyError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("wire round trip corrupted a sparse image")]
    WireMismatch,
}

/// Discretized Top-K ratio grid: `kappa_min + (n-1) * delta`, all values
/// in (0, 1], strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KappaGrid {
    pub kappa_min: f64,
    pub delta_kappa: f64,
    pub count: usize,
}

impl Default for KappaGrid {
    fn default() -> Self {
        Self { kappa_min: 0.05, delta_kappa: 0.1, count: 5 }
    }
}

impl KappaGrid {
    pub fn new(kappa_min: f64, delta_kappa: f64, count: usize) -> Result<Self, ConstraintViolation> {
        let grid = Self { kappa_min, delta_kappa, count };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), ConstraintViolation> {
        if self.count == 0 || self.delta_kappa <= 0.0 {
            return Err(ConstraintViolation::KappaOutOfGrid { index: 0, grid_len: self.count });
        }
        for v in self.values() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConstraintViolation::KappaOutOfRange(v));
            }
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|n| self.kappa_min + n as f64 * self.delta_kappa).collect()
    }

    pub fn value(&self, index: usize) -> Result<f64, ConstraintViolation> {
        if index >= self.count {
            return Err(ConstraintViolation::KappaOutOfGrid { index, grid_len: self.count });
        }
        Ok(self.kappa_min + index as f64 * self.delta_kappa)
    }
}

/// Joint action: selection bitmask over UAVs, per-UAV ratio indices, and
/// per-UAV precoder indices (entries for deselected UAVs are ignored).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub uav_mask: u32,
    pub kappa_idx: Vec<usize>,
    pub precoder_idx: Vec<usize>,
}

impl JointAction {
    pub fn selected(&self, num_uavs: usize) -> Vec<usize> {
        (0..num_uavs).filter(|&u| self.uav_mask & (1 << u) != 0).collect()
    }

    pub fn validate(
        &self,
        num_uavs: usize,
        grid: &KappaGrid,
        codebook_len: usize,
    ) -> Result<(), ConstraintViolation> {
        if self.uav_mask == 0 {
            return Err(ConstraintViolation::EmptySelection);
        }
        if let Some(bit) = (num_uavs..32).find(|&b| self.uav_mask & (1 << b) != 0) {
            return Err(ConstraintViolation::SelectionOutOfRange { bit, num_uavs });
        }
        if self.kappa_idx.len() != num_uavs {
            return Err(ConstraintViolation::ShapeMismatch {
                expected: num_uavs,
                got: self.kappa_idx.len(),
            });
        }
        if self.precoder_idx.len() != num_uavs {
            return Err(ConstraintViolation::ShapeMismatch {
                expected: num_uavs,
                got: self.precoder_idx.len(),
            });
        }
        for &u in &self.selected(num_uavs) {
            grid.value(self.kappa_idx[u])?;
            if self.precoder_idx[u] >= codebook_len {
                return Err(ConstraintViolation::PrecoderOutOfCodebook {
                    index: self.precoder_idx[u],
                    size: codebook_len,
                });
            }
        }
        Ok(())
    }

    /// Compact textual encoding for run ledgers.
    pub fn encode(&self) -> String {
        let kappas: Vec<String> = self.kappa_idx.iter().map(|k| k.to_string()).collect();
        let precoders: Vec<String> = self.precoder_idx.iter().map(|p| p.to_string()).collect();
        format!("m{:x}|k{}|w{}", self.uav_mask, kappas.join("."), precoders.join("."))
    }
}

/// Transmission latency `data bits / rate`; an unusable zero-rate link
/// yields the infinite-latency sentinel rather than an error.
pub fn latency(data_bits: u64, rate_bps: f64) -> f64 {
    if rate_bps <= 0.0 {
        return f64::INFINITY;
    }
    data_bits as f64 / rate_bps
}

/// Maximum latency over the selected UAVs.
pub fn max_latency(latencies: &[f64]) -> Result<f64, ConstraintViolation> {
    if latencies.is_empty() {
        return Err(ConstraintViolation::EmptySelection);
    }
    Ok(latencies.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Sizes of the three action spaces:
/// `(2^U - 1, N_kappa^U, |codebook|^U)`.
pub fn action_space_sizes(num_uavs: u32, n_kappa: u64, codebook_len: u64) -> (u128, u128, u128) {
    assert!(num_uavs >= 1 && num_uavs < 64);
    (
        (1u128 << num_uavs) - 1,
        (n_kappa as u128).pow(num_uavs),
        (codebook_len as u128).pow(num_uavs),
    )
}

/// Reward of a step: `alpha * U_PQ + (1 - alpha) * U_IoU - lambda * L_max`.
pub fn reward(utility_pq: f64, utility_iou: f64, latency_max_s: f64, alpha: f64, lambda: f64) -> f64 {
    alpha * utility_pq + (1.0 - alpha) * utility_iou - lambda * latency_max_s
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub utility_pq: f64,
    pub utility_iou: f64,
    pub latency_max_s: f64,
    /// Per-UAV achievable rates; deselected UAVs report `None`.
    pub rates_bps: Vec<Option<f64>>,
    /// Per-UAV payload sizes on the uplink (quantized samples only).
    pub data_bits: Vec<Option<u64>>,
    /// Total logical bits on the wire including headers and mask bitmaps.
    pub wire_bits_total: u64,
    pub reward: f64,
    /// Mean post-equalization spectral efficiency over selected UAVs.
    pub mean_spectral_efficiency: f64,
    /// Mean per-UAV SINR proxy in dB derived from the spectral efficiency.
    pub mean_sinr_db: f64,
}

/// Everything a policy interacts with: a frozen scenario, a channel
/// realization, the action grids, and the link parameters.
#[derive(Debug, Clone)]
pub struct Environment {
    pub scenario: Scenario,
    pub channel: ChannelRealization,
    pub kappa_grid: KappaGrid,
    pub codebook: PrecoderCodebook,
    pub power_w: f64,
    pub noise_var: f64,
    pub bits_per_sample: u32,
}

impl Environment {
    pub fn num_uavs(&self) -> usize {
        self.scenario.uavs.len()
    }

    /// Evaluate a joint action at (around) the given observation frame.
    ///
    /// Utilities are averaged over the scenario's prediction frames (the
    /// frames after `frame`, or `frame` itself when it is terminal); the
    /// prediction itself uses the observation at `frame`.
    pub fn step(
        &self,
        frame: usize,
        action: &JointAction,
        alpha: f64,
        lambda: f64,
    ) -> Result<StepOutcome, EnvError> {
        let num_uavs = self.num_uavs();
        action.validate(num_uavs, &self.kappa_grid, self.codebook.len())?;
        let selected = action.selected(num_uavs);

        // Sparsify each selected view and push it through the wire codec.
        let mut sparse_images: Vec<SparseImage> = Vec::with_capacity(selected.len());
        let mut data_bits = vec![None; num_uavs];
        let mut wire_bits_total = 0u64;
        for &u in &selected {
            let view: DenseImage = render_view(&self.scenario, &self.scenario.uavs[u], frame)?;
            let scores = neighborhood_score(&importance_map(&view));
            let kappa = self.kappa_grid.value(action.kappa_idx[u])?;
            let sparse = top_k_select(&view, &scores, kappa)?;
            let encoded = wire::encode(&sparse, self.bits_per_sample)?;
            let received = wire::decode(&encoded)?;
            if received != sparse {
                return Err(EnvError::WireMismatch);
            }
            wire_bits_total += wire::wire_bits(&sparse, self.bits_per_sample);
            data_bits[u] = Some(data_size(&sparse, self.bits_per_sample));
            sparse_images.push(received);
        }

        // Uplink rates under the chosen precoders.
        let link = LinkState {
            association: (0..num_uavs).map(|u| action.uav_mask & (1 << u) != 0).collect(),
            precoder_idx: action.precoder_idx.clone(),
            power_w: vec![self.power_w; num_uavs],
            noise_var: self.noise_var,
        };
        let rates: Vec<Option<RateReport>> = link_rates(&self.channel, &link, &self.codebook)?;

        let mut latencies = Vec::with_capacity(selected.len());
        for &u in &selected {
            let rate = rates[u].expect("selected UAV has a rate");
            latencies.push(latency(data_bits[u].unwrap(), rate.rate_bps));
        }
        let latency_max_s = max_latency(&latencies)?;

        // Perception utilities over the prediction frames.
        let mask_refs: Vec<&SparseImage> = sparse_images.iter().collect();
        let prediction = proxy_perceive(&self.scenario, frame, &selected, &mask_refs)?;
        let eval_frames: Vec<usize> = {
            let after: Vec<usize> =
                (frame + 1..self.scenario.frames()).collect();
            if after.is_empty() {
                vec![frame]
            } else {
                after
            }
        };
        let mut ious = Vec::with_capacity(eval_frames.len());
        let mut pqs = Vec::with_capacity(eval_frames.len());
        for &t in &eval_frames {
            let gt = ground_truth_bev(&self.scenario, t)?;
            ious.push(iou_semantic(&prediction, &gt)?);
            let matches = match_instances(&prediction, &gt)?;
            pqs.push(panoptic_quality(&matches).pq);
        }
        let utility_iou = mean_iou_over_frames(&ious)?;
        let utility_pq = mean_iou_over_frames(&pqs)?;

        let mean_se = selected
            .iter()
            .map(|&u| rates[u].unwrap().spectral_efficiency)
            .sum::<f64>()
            / selected.len() as f64;
        // SINR implied by the mean spectral efficiency: 2^se - 1.
        let mean_sinr_db = 10.0 * (2f64.powf(mean_se) - 1.0).max(1e-12).log10();

        let reward_value = reward(utility_pq, utility_iou, latency_max_s, alpha, lambda);
        Ok(StepOutcome {
            utility_pq,
            utility_iou,
            latency_max_s,
            rates_bps: rates.iter().map(|r| r.map(|r| r.rate_bps)).collect(),
            data_bits,
            wire_bits_total,
            reward: reward_value,
            mean_spectral_efficiency: mean_se,
            mean_sinr_db,
        })
    }

    /// State features for the policy: per-UAV magnitude/phase of the
    /// grid-averaged channel, then per-view foreground fraction and
    /// (scaled) visible instance count at the observation frame.
    pub fn state_features(&self, frame: usize) -> Result<Vec<f64>, EnvError> {
        let mut features = Vec::new();
        for u in 0..self.num_uavs() {
            let mean = self.channel.mean_matrix(u);
            for v in mean.iter() {
                features.push(v.norm());
                features.push(v.arg() / std::f64::consts::PI);
            }
        }
        for uav in &self.scenario.uavs {
            let view = render_view(&self.scenario, uav, frame)?;
            features.push(view.foreground_fraction());
            features.push(view.visible_instances() as f64 / 10.0);
        }
        Ok(features)
    }

    /// Conditioning vector for the precoder generator: one-hot selection
    /// mask, per-UAV one-hot kappa indices, and the channel summary.
    pub fn condition_vector(&self, uav_mask: u32, kappa_idx: &[usize]) -> Vec<f64> {
        let num_uavs = self.num_uavs();
        let mask_states = (1usize << num_uavs) - 1;
        let mut c = vec![0.0; mask_states];
        debug_assert!(uav_mask >= 1);
        c[(uav_mask as usize - 1).min(mask_states - 1)] = 1.0;
        for (u, &k) in kappa_idx.iter().enumerate() {
            let mut one_hot = vec![0.0; self.kappa_grid.count];
            one_hot[k.min(self.kappa_grid.count - 1)] = 1.0;
            c.extend(one_hot);
            let _ = u;
        }
        for u in 0..num_uavs {
            let mean = self.channel.mean_matrix(u);
            for v in mean.iter() {
                c.push(v.norm());
                c.push(v.arg() / std::f64::consts::PI);
            }
        }
        c
    }

    pub fn condition_dim(&self) -> usize {
        let num_uavs = self.num_uavs();
        let channel_dim =
            num_uavs * self.channel.config.rx_antennas() * self.channel.config.tx_antennas() * 2;
        ((1 << num_uavs) - 1) + num_uavs * self.kappa_grid.count + channel_dim
    }

    pub fn state_dim(&self) -> usize {
        let num_uavs = self.num_uavs();
        num_uavs * self.channel.config.rx_antennas() * self.channel.config.tx_antennas() * 2
            + 2 * num_uavs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{realize_channel, ChannelConfig};
    use crate::link::build_codebook;
    use crate::scenario::{generate_scenario, ScenarioConfig};
    use approx::assert_relative_eq;

    pub(crate) fn tiny_env(seed: u64) -> Environment {
        let scenario = generate_scenario(&ScenarioConfig {
            area_width_m: 40.0,
            area_height_m: 40.0,
            num_uavs: 2,
            num_vehicles: 3,
            frames: 4,
            input_frames: 2,
            image_height: 20,
            image_width: 32,
            bev_cell_m: 1.0,
            rng_seed: seed,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let channel_cfg = ChannelConfig {
            subcarriers: 8,
            symbols: 1,
            ..ChannelConfig::default()
        };
        let channel = realize_channel(&scenario, &channel_cfg, seed ^ 0xABCD).unwrap();
        Environment {
            scenario,
            channel,
            kappa_grid: KappaGrid::new(0.05, 0.15, 3).unwrap(),
            codebook: build_codebook(2, 1, 2, 1),
            power_w: 1.0,
            noise_var: 1.0,
            bits_per_sample: 8,
        }
    }

    fn all_uavs_action(env: &Environment, kappa_idx: usize) -> JointAction {
        let n = env.num_uavs();
        JointAction {
            uav_mask: (1 << n) - 1,
            kappa_idx: vec![kappa_idx; n],
            precoder_idx: vec![0; n],
        }
    }

    #[test]
    fn kappa_grid_values_and_bounds() {
        let grid = KappaGrid::new(0.05, 0.1, 5).unwrap();
        let values = grid.values();
        assert_eq!(values.len(), 5);
        assert_relative_eq!(values[0], 0.05, epsilon = 1e-15);
        assert_relative_eq!(values[4], 0.45, epsilon = 1e-12);
        assert!(KappaGrid::new(0.5, 0.2, 4).is_err(), "values above 1 rejected");
        assert!(KappaGrid::new(0.0, 0.1, 3).is_err(), "zero ratio rejected");
    }

    #[test]
    fn latency_division_and_sentinel() {
        // 645,120 bits at 1 Mbit/s: 0.64512 s.
        assert_relative_eq!(latency(645_120, 1e6), 0.64512, epsilon = 1e-12);
        // 1 pixel * 3 channels * 8 bits at 24 bits/s: 1 s.
        assert_relative_eq!(latency(24, 24.0), 1.0, epsilon = 1e-15);
        // Doubling the rate halves the latency.
        assert_relative_eq!(latency(1000, 2000.0), latency(1000, 1000.0) / 2.0, epsilon = 1e-15);
        assert!(latency(10, 0.0).is_infinite());
    }

    #[test]
    fn max_latency_cases() {
        assert_eq!(max_latency(&[0.5]).unwrap(), 0.5);
        assert_eq!(max_latency(&[0.3, 0.3, 0.3]).unwrap(), 0.3);
        let vals = [0.1, 0.9, 0.4, 0.2];
        let want = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max_latency(&vals).unwrap(), want);
        assert!(max_latency(&[]).is_err());
    }

    #[test]
    fn action_space_size_formulas() {
        assert_eq!(action_space_sizes(4, 5, 128).0, 15);
        assert_eq!(action_space_sizes(1, 5, 128).1, 5);
        assert_eq!(action_space_sizes(2, 5, 128).2, 16_384);
        assert_eq!(action_space_sizes(4, 3, 16), (15, 81, 65_536));
    }

    #[test]
    fn invalid_actions_name_their_constraint() {
        let env = tiny_env(1);
        let grid = &env.kappa_grid;
        let cb_len = env.codebook.len();
        let empty = JointAction { uav_mask: 0, kappa_idx: vec![0; 2], precoder_idx: vec![0; 2] };
        assert_eq!(
            empty.validate(2, grid, cb_len).unwrap_err(),
            ConstraintViolation::EmptySelection
        );
        let stray = JointAction { uav_mask: 0b100, kappa_idx: vec![0; 2], precoder_idx: vec![0; 2] };
        assert!(matches!(
            stray.validate(2, grid, cb_len).unwrap_err(),
            ConstraintViolation::SelectionOutOfRange { bit: 2, .. }
        ));
        let bad_kappa = JointAction { uav_mask: 0b11, kappa_idx: vec![0, 9], precoder_idx: vec![0; 2] };
        assert!(matches!(
            bad_kappa.validate(2, grid, cb_len).unwrap_err(),
            ConstraintViolation::KappaOutOfGrid { index: 9, .. }
        ));
        let bad_precoder =
            JointAction { uav_mask: 0b11, kappa_idx: vec![0, 0], precoder_idx: vec![0, 999] };
        assert!(matches!(
            bad_precoder.validate(2, grid, cb_len).unwrap_err(),
            ConstraintViolation::PrecoderOutOfCodebook { index: 999, .. }
        ));
    }

    #[test]
    fn reward_identity_holds_exactly() {
        let env = tiny_env(3);
        let action = all_uavs_action(&env, 1);
        let frame = env.scenario.observation_frame();
        for (alpha, lambda) in [(0.5, 0.3), (1.0, 0.0), (0.0, 0.9)] {
            let out = env.step(frame, &action, alpha, lambda).unwrap();
            let recomputed = alpha * out.utility_pq + (1.0 - alpha) * out.utility_iou
                - lambda * out.latency_max_s;
            assert_eq!(out.reward, recomputed, "reward identity violated");
        }
    }

    #[test]
    fn lambda_zero_reward_is_pure_utility() {
        let env = tiny_env(4);
        let action = all_uavs_action(&env, 1);
        let frame = env.scenario.observation_frame();
        let out = env.step(frame, &action, 0.5, 0.0).unwrap();
        assert_eq!(out.reward, 0.5 * out.utility_pq + 0.5 * out.utility_iou);
    }

    #[test]
    fn alpha_one_ignores_iou() {
        let env = tiny_env(4);
        let action = all_uavs_action(&env, 1);
        let frame = env.scenario.observation_frame();
        let out = env.step(frame, &action, 1.0, 0.2).unwrap();
        assert_eq!(out.reward, out.utility_pq - 0.2 * out.latency_max_s);
    }

    #[test]
    fn step_is_deterministic() {
        let env = tiny_env(5);
        let action = all_uavs_action(&env, 2);
        let frame = env.scenario.observation_frame();
        let a = env.step(frame, &action, 0.5, 0.3).unwrap();
        let b = env.step(frame, &action, 0.5, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wire_accounting_matches_data_size_plus_overhead() {
        let env = tiny_env(6);
        let action = all_uavs_action(&env, 1);
        let frame = env.scenario.observation_frame();
        let out = env.step(frame, &action, 0.5, 0.3).unwrap();
        let total_payload: u64 = out.data_bits.iter().flatten().sum();
        let per_image_overhead = crate::sparsify::wire::overhead_bits(
            env.scenario.config.image_height,
            env.scenario.config.image_width,
        );
        assert_eq!(out.wire_bits_total, total_payload + 2 * per_image_overhead);
    }

    #[test]
    fn reward_strictly_decreasing_in_latency() {
        for lambda in [0.1, 0.5, 0.9] {
            let r1 = reward(0.6, 0.5, 0.2, 0.5, lambda);
            let r2 = reward(0.6, 0.5, 0.4, 0.5, lambda);
            assert!(r2 < r1);
        }
    }

    #[test]
    fn higher_kappa_is_higher_latency_and_utility() {
        let env = tiny_env(8);
        let frame = env.scenario.observation_frame();
        let low = env.step(frame, &all_uavs_action(&env, 0), 0.5, 0.0).unwrap();
        let high = env.step(frame, &all_uavs_action(&env, 2), 0.5, 0.0).unwrap();
        assert!(high.latency_max_s > low.latency_max_s);
        assert!(high.utility_iou >= low.utility_iou - 1e-12);
    }

    #[test]
    fn action_encoding_is_stable() {
        let action = JointAction { uav_mask: 0b1011, kappa_idx: vec![0, 2, 1, 0], precoder_idx: vec![3, 1, 0, 7] };
        assert_eq!(action.encode(), "mb|k0.2.1.0|w3.1.0.7");
    }

    #[test]
    fn feature_dims_match_declared() {
        let env = tiny_env(9);
        let frame = env.scenario.observation_frame();
        assert_eq!(env.state_features(frame).unwrap().len(), env.state_dim());
        let action = all_uavs_action(&env, 0);
        assert_eq!(
            env.condition_vector(action.uav_mask, &action.kappa_idx).len(),
            env.condition_dim()
        );
    }
}
