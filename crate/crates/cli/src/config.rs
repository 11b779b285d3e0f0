//! Run configuration: a strict TOML schema (unknown keys rejected, missing
//! keys defaulted) covering the scene, channel, action grids, link
//! parameters, training, and sweep settings.
//!
//! All randomness derives from the single root `seed` through named
//! sub-streams: `scenario`, `channel`, and `policy`. Seed fields inside
//! the sub-configs are overwritten accordingly.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use copersim::channel::{realize_channel, ChannelConfig};
use copersim::env::{Environment, KappaGrid};
use copersim::link::build_codebook;
use copersim::policy::TrainConfig;
use copersim::rng::derive_seed;
use copersim::scenario::{generate_scenario, Scenario, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub o_x: usize,
    pub o_y: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self { n_x: 2, n_y: 1, o_x: 4, o_y: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkParams {
    pub power_w: f64,
    pub noise_var: f64,
    pub bits_per_sample: u32,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self { power_w: 1.0, noise_var: 1.0, bits_per_sample: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Selection bitmask; 0 selects every UAV.
    pub uav_mask: u32,
    /// Index into the ratio grid applied to every selected UAV.
    pub kappa_index: usize,
    /// Search precoders per frame instead of using `precoder_index`.
    pub precoder_search: bool,
    pub precoder_index: usize,
    pub export_channel: bool,
    pub export_bev: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            uav_mask: 0,
            kappa_index: 2,
            precoder_search: true,
            precoder_index: 0,
            export_channel: false,
            export_bev: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Seeds per sweep point (derived from the root seed).
    pub seeds: usize,
    pub lambda_points: Vec<f64>,
    pub kappa_points: Vec<f64>,
    pub uav_counts: Vec<usize>,
    /// Training steps per lambda point.
    pub train_steps: usize,
    /// Trailing window for converged-metric averages.
    pub eval_window: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: 3,
            lambda_points: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            kappa_points: vec![0.05, 0.1, 0.15, 0.25, 0.5],
            uav_counts: vec![1, 2, 4],
            train_steps: 1500,
            eval_window: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub alpha: Alpha,
    pub lambda: Lambda,
    pub scenario: ScenarioConfig,
    pub channel: ChannelConfig,
    pub kappa: KappaGrid,
    pub codebook: CodebookConfig,
    pub link: LinkParams,
    pub train: TrainConfig,
    pub simulate: SimulateConfig,
    pub sweep: SweepConfig,
}

// Newtype defaults for the objective weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Alpha(pub f64);

impl Default for Alpha {
    fn default() -> Self {
        Alpha(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lambda(pub f64);

impl Default for Lambda {
    fn default() -> Self {
        Lambda(0.3)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().context("scenario config")?;
        self.channel.validate().context("channel config")?;
        self.kappa.validate().context("kappa grid")?;
        if !(0.0..=1.0).contains(&self.alpha.0) {
            bail!("alpha must lie in [0, 1], got {}", self.alpha.0);
        }
        if self.lambda.0 < 0.0 {
            bail!("lambda must be non-negative, got {}", self.lambda.0);
        }
        if self.link.power_w <= 0.0 || self.link.noise_var <= 0.0 {
            bail!("link power and noise variance must be positive");
        }
        if !(1..=24).contains(&self.link.bits_per_sample) {
            bail!("bits_per_sample must be in 1..=24");
        }
        if self.codebook.n_x < 1 || self.codebook.n_y < 1 || self.codebook.o_x < 1 || self.codebook.o_y < 1
        {
            bail!("codebook dimensions must be at least 1");
        }
        let t_x = 2 * self.codebook.n_x * self.codebook.n_y;
        if t_x != self.channel.uav_array.elements() {
            bail!(
                "codebook drives {} antennas but the UAV array has {}",
                t_x,
                self.channel.uav_array.elements()
            );
        }
        if self.sweep.seeds == 0 {
            bail!("sweep needs at least one seed");
        }
        if self.scenario.num_uavs > 16 {
            bail!("selection mask supports at most 16 UAVs");
        }
        Ok(())
    }

    /// Root-seed override from the command line.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    pub fn scenario_seed(&self) -> u64 {
        derive_seed(self.seed, "scenario")
    }

    pub fn channel_seed(&self) -> u64 {
        derive_seed(self.seed, "channel")
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        let mut cfg = self.scenario.clone();
        cfg.rng_seed = self.scenario_seed();
        Ok(generate_scenario(&cfg)?)
    }

    pub fn build_environment(&self) -> Result<Environment> {
        let scenario = self.build_scenario()?;
        let channel = realize_channel(&scenario, &self.channel, self.channel_seed())?;
        Ok(Environment {
            scenario,
            channel,
            kappa_grid: self.kappa.clone(),
            codebook: build_codebook(
                self.codebook.n_x,
                self.codebook.n_y,
                self.codebook.o_x,
                self.codebook.o_y,
            ),
            power_w: self.link.power_w,
            noise_var: self.link.noise_var,
            bits_per_sample: self.link.bits_per_sample,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = derive_seed(self.seed, "policy");
        cfg
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
