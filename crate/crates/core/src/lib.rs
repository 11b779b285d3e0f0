//! Desk-scale simulator of communication-efficient multi-UAV cooperative
//! perception.
//!
//! The library models the full loop of a cooperative aerial perception
//! system: synthetic traffic scenes observed by several UAV cameras
//! ([`scenario`]), Top-K pixel sparsification of the captured views
//! ([`sparsify`]), a geometry-based wideband MU-MIMO uplink with Type-I
//! codebook precoding and MMSE reception ([`channel`], [`link`]),
//! pinhole-camera lifting of pixels onto a shared bird's-eye-view grid
//! ([`camera`]), IoU / panoptic-quality perception metrics ([`metrics`]),
//! a latency-penalized utility environment ([`env`]), and a DDIM-driven
//! reinforcement-learning optimizer that jointly picks cooperating UAVs,
//! sparsification ratios, and precoders ([`policy`]).
//!
//! All randomness flows from explicit 64-bit seeds through named
//! sub-streams ([`rng`]), so every pipeline output is a pure function of
//! its configuration.

pub mod camera;
pub mod channel;
pub mod env;
pub mod image;
pub mod link;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod sparsify;
