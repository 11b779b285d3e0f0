//! The joint training loop: a Q-network picks the UAV selection and
//! ratio action, an exhaustive codebook search labels the precoders, the
//! conditional diffusion net regresses onto those labels and generates
//! the precoding action through its DDIM chain, and the environment
//! reward drives the Q regression.

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment, JointAction, StepOutcome};
use crate::link::{
    exhaustive_precoder_search, LinkError, LinkState, SearchMode, SearchObjective,
};
use crate::policy::diffusion::{
    flatten_precoders, precoder_vector_dim, project_to_codebook, DiffusionConfig, DiffusionPolicy,
};
use crate::policy::nn::SgdMomentum;
use crate::policy::qnet::{QAction, QNetwork};
use crate::policy::schedule::{DiffusionSchedule, ScheduleError};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint schema version mismatch: found {found}")]
    VersionMismatch { found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub hidden_q: Vec<usize>,
    pub hidden_d: Vec<usize>,
    pub lr_q: f64,
    pub lr_d: f64,
    pub momentum: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative epsilon decay per step.
    pub epsilon_decay: f64,
    /// Train the generator on exhaustive-search labels; disabling this
    /// leaves the generator at its random initialization (the no-label
    /// ablation).
    pub use_search_labels: bool,
    pub search_sweeps: usize,
    pub diffusion_t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            hidden_q: vec![64, 64],
            hidden_d: vec![64, 64],
            lr_q: 0.01,
            lr_d: 5e-3,
            momentum: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.999,
            use_search_labels: true,
            search_sweeps: 2,
            diffusion_t: 100,
            beta_start: 1e-4,
            beta_end: 2e-2,
            ddim_steps: 10,
            seed: 0,
        }
    }
}

/// One training-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub step: usize,
    pub reward: f64,
    pub latency_s: f64,
    pub utility: f64,
    pub q_loss: f64,
    pub d_loss: f64,
    pub epsilon: f64,
    pub mean_sinr_db: f64,
}

impl EpochRow {
    pub const CSV_HEADER: &'static str =
        "step,reward,latency_s,utility,q_loss,d_loss,epsilon,mean_sinr_db";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.reward,
            self.latency_s,
            self.utility,
            self.q_loss,
            self.d_loss,
            self.epsilon,
            self.mean_sinr_db
        )
    }
}

/// Trainer state: both networks, their optimizers, the exploration
/// schedule, and the RNG stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub q: QNetwork,
    pub d: DiffusionPolicy,
    opt_q: SgdMomentum,
    opt_d: SgdMomentum,
    rng: ChaCha8Rng,
    pub epsilon: f64,
    pub step_count: usize,
    pub curves: Vec<EpochRow>,
    pub config: TrainConfig,
    pub alpha: f64,
    pub lambda: f64,
    label_cache: BTreeMap<u32, Vec<usize>>,
}

impl Trainer {
    pub fn new(
        env: &Environment,
        alpha: f64,
        lambda: f64,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "policy"));
        let q = QNetwork::new(
            env.state_dim(),
            env.num_uavs(),
            env.kappa_grid.count,
            &config.hidden_q,
            &mut rng,
        );
        let schedule = DiffusionSchedule::linear(
            config.diffusion_t,
            config.beta_start,
            config.beta_end,
            config.ddim_steps,
        )?;
        let d_cfg = DiffusionConfig {
            hidden: config.hidden_d.clone(),
            learning_rate: config.lr_d,
            momentum: config.momentum,
        };
        let d = DiffusionPolicy::new(
            precoder_vector_dim(env.num_uavs(), env.codebook.t_x()),
            env.condition_dim(),
            schedule,
            &d_cfg,
            &mut rng,
        );
        let opt_q = SgdMomentum::new(&q.net, config.lr_q, config.momentum);
        let opt_d = SgdMomentum::new(&d.net, config.lr_d, config.momentum);
        Ok(Self {
            q,
            d,
            opt_q,
            opt_d,
            rng,
            epsilon: config.epsilon_start,
            step_count: 0,
            curves: Vec::new(),
            config,
            alpha,
            lambda,
            label_cache: BTreeMap::new(),
        })
    }

    fn search_labels(&mut self, env: &Environment, uav_mask: u32) -> Result<Vec<usize>, TrainError> {
        if let Some(cached) = self.label_cache.get(&uav_mask) {
            return Ok(cached.clone());
        }
        let link = LinkState {
            association: (0..env.num_uavs()).map(|u| uav_mask & (1 << u) != 0).collect(),
            precoder_idx: vec![0; env.num_uavs()],
            power_w: vec![env.power_w; env.num_uavs()],
            noise_var: env.noise_var,
        };
        let outcome = exhaustive_precoder_search(
            &env.channel,
            &link,
            &env.codebook,
            SearchObjective::PerUavRate,
            SearchMode::Greedy { max_sweeps: self.config.search_sweeps },
        )?;
        self.label_cache.insert(uav_mask, outcome.precoder_idx.clone());
        Ok(outcome.precoder_idx)
    }

    /// Run `steps` training iterations, appending to the curves.
    pub fn run_steps(&mut self, env: &Environment, steps: usize) -> Result<(), TrainError> {
        let frame = env.scenario.observation_frame();
        let state = env.state_features(frame)?;
        for _ in 0..steps {
            let action = self.q.select(&state, self.epsilon, &mut self.rng);
            let selected = JointAction {
                uav_mask: action.uav_mask,
                kappa_idx: action.kappa_idx.clone(),
                precoder_idx: vec![0; env.num_uavs()],
            }
            .selected(env.num_uavs());
            let condition = env.condition_vector(action.uav_mask, &action.kappa_idx);

            let mut d_loss = 0.0;
            if self.config.use_search_labels {
                let labels = self.search_labels(env, action.uav_mask)?;
                let w0 = flatten_precoders(&env.codebook, &labels, &selected, env.num_uavs());
                d_loss = self.d.train_step(
                    &mut self.opt_d,
                    &[(w0.as_slice(), condition.as_slice())],
                    &mut self.rng,
                )?;
            }

            let (w_gen, _) = self.d.generate(&condition, &mut self.rng)?;
            let precoder_idx =
                project_to_codebook(&w_gen, &selected, env.num_uavs(), &env.codebook);
            let joint = JointAction {
                uav_mask: action.uav_mask,
                kappa_idx: action.kappa_idx.clone(),
                precoder_idx,
            };
            let out = env.step(frame, &joint, self.alpha, self.lambda)?;
            let q_loss = self.q.train_step(&mut self.opt_q, &state, &action, out.reward);

            self.step_count += 1;
            self.curves.push(EpochRow {
                step: self.step_count,
                reward: out.reward,
                latency_s: out.latency_max_s,
                utility: self.alpha * out.utility_pq + (1.0 - self.alpha) * out.utility_iou,
                q_loss,
                d_loss,
                epsilon: self.epsilon,
                mean_sinr_db: out.mean_sinr_db,
            });
            self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_end);
        }
        Ok(())
    }

    /// Evaluate the greedy policy (no exploration); deterministic given
    /// the trainer's seed.
    pub fn greedy_outcome(
        &self,
        env: &Environment,
    ) -> Result<(JointAction, StepOutcome), TrainError> {
        let frame = env.scenario.observation_frame();
        let state = env.state_features(frame)?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, "eval"));
        let action = self.q.select(&state, 0.0, &mut eval_rng);
        let selected = JointAction {
            uav_mask: action.uav_mask,
            kappa_idx: action.kappa_idx.clone(),
            precoder_idx: vec![0; env.num_uavs()],
        }
        .selected(env.num_uavs());
        let condition = env.condition_vector(action.uav_mask, &action.kappa_idx);
        let (w_gen, _) = self.d.generate(&condition, &mut eval_rng)?;
        let precoder_idx = project_to_codebook(&w_gen, &selected, env.num_uavs(), &env.codebook);
        let joint = JointAction {
            uav_mask: action.uav_mask,
            kappa_idx: action.kappa_idx,
            precoder_idx,
        };
        let out = env.step(frame, &joint, self.alpha, self.lambda)?;
        Ok((joint, out))
    }

    /// Mean reward over the trailing `window` curve rows.
    pub fn trailing_mean_reward(&self, window: usize) -> f64 {
        let n = self.curves.len().min(window).max(1);
        let tail = &self.curves[self.curves.len() - n..];
        tail.iter().map(|r| r.reward).sum::<f64>() / n as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let pos = self.rng.get_word_pos();
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION.to_string(),
            config: self.config.clone(),
            alpha: self.alpha,
            lambda: self.lambda,
            q: self.q.clone(),
            d: self.d.clone(),
            opt_q: self.opt_q.clone(),
            opt_d: self.opt_d.clone(),
            epsilon: self.epsilon,
            step_count: self.step_count,
            rng_word_pos_hi: (pos >> 64) as u64,
            rng_word_pos_lo: pos as u64,
            curves: self.curves.clone(),
        }
    }

    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self, TrainError> {
        if cp.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(TrainError::VersionMismatch { found: cp.schema_version });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cp.config.seed, "policy"));
        rng.set_word_pos(((cp.rng_word_pos_hi as u128) << 64) | cp.rng_word_pos_lo as u128);
        Ok(Self {
            q: cp.q,
            d: cp.d,
            opt_q: cp.opt_q,
            opt_d: cp.opt_d,
            rng,
            epsilon: cp.epsilon,
            step_count: cp.step_count,
            curves: cp.curves,
            config: cp.config,
            alpha: cp.alpha,
            lambda: cp.lambda,
            label_cache: BTreeMap::new(),
        })
    }
}

pub const CHECKPOINT_SCHEMA_VERSION: &str = "copersim.checkpoint.v1";

/// Self-describing training checkpoint (both networks, optimizer state,
/// exploration state, RNG position, and curves so far).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: String,
    pub config: TrainConfig,
    pub alpha: f64,
    pub lambda: f64,
    pub q: QNetwork,
    pub d: DiffusionPolicy,
    pub opt_q: SgdMomentum,
    pub opt_d: SgdMomentum,
    pub epsilon: f64,
    pub step_count: usize,
    pub rng_word_pos_hi: u64,
    pub rng_word_pos_lo: u64,
    pub curves: Vec<EpochRow>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<(), TrainError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Train a fresh policy on the environment for `config.steps` iterations.
pub fn train_policy(
    env: &Environment,
    alpha: f64,
    lambda: f64,
    config: TrainConfig,
) -> Result<Trainer, TrainError> {
    let steps = config.steps;
    let mut trainer = Trainer::new(env, alpha, lambda, config)?;
    trainer.run_steps(env, steps)?;
    Ok(trainer)
}
