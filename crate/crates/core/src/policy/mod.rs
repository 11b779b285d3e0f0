//! DDIM-driven reinforcement-learning optimizer for the joint UAV
//! selection, Top-K ratio, and precoding decision.
//!
//! [`qnet`] holds the factored action-value network for the selection and
//! ratio heads; [`diffusion`] generates precoding vectors through a
//! conditional clean-vector predictor sampled with the deterministic DDIM
//! chain of [`schedule`]; [`train`] wires both into the environment loop
//! with exhaustive-search precoding labels; [`nn`] is the shared
//! exact-gradient MLP core.

pub mod diffusion;
pub mod nn;
pub mod qnet;
pub mod schedule;
pub mod train;

pub use diffusion::{
    flatten_precoders, precoder_vector_dim, project_to_codebook, DiffusionConfig, DiffusionPolicy,
};
pub use qnet::{QAction, QNetwork};
pub use schedule::{ddim_step, forward_noise, DiffusionSchedule, ScheduleError};
pub use train::{train_policy, Checkpoint, EpochRow, TrainConfig, TrainError, Trainer};
