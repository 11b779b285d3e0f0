//! Reproducible synthetic multi-UAV traffic scenes.
//!
//! A scenario holds vehicle tracks (axis-aligned rectangles moving with
//! piecewise-constant velocity and boundary reflection), nadir UAV camera
//! poses arranged so all views overlap, and the BEV grid the ground truth
//! is rasterized on. Rendering assigns each pixel the instance id of the
//! vehicle its ground-plane ray hits.
//!
//! Rendered values are synthetic but structured: vehicles are dark
//! rectangles and the background carries a regular lattice of dark dots
//! on a flat field. Under the default importance scorer this puts vehicle
//! and dot pixels ahead of plain background in the Top-K ordering, so
//! retention sweeps saturate once the textured fraction is covered.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{lift_pixel_to_ground, BevSpec, CameraExtrinsics, CameraIntrinsics};
use crate::image::DenseImage;

pub const SCENARIO_SCHEMA_VERSION: &str = "copersim.scenario.v1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("frame index {frame} out of range (scenario has {frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario schema version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },
}

/// Scene generation parameters. Identical configs (same seed included)
/// produce bit-identical scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Ground area extent along x, meters.
    pub area_width_m: f64,
    /// Ground area extent along y, meters.
    pub area_height_m: f64,
    pub num_uavs: usize,
    pub uav_altitude_m: f64,
    pub num_vehicles: usize,
    pub frame_rate_hz: f64,
    /// Frames per sequence (inputs + prediction horizon).
    pub frames: usize,
    /// Leading frames treated as observations.
    pub input_frames: usize,
    /// Rendered image rows (the image X axis).
    pub image_height: usize,
    /// Rendered image columns (the image Y axis).
    pub image_width: usize,
    pub image_channels: usize,
    /// Rendering quantization depth in bits per sample.
    pub quant_bits: u32,
    /// BEV cell edge length, meters.
    pub bev_cell_m: f64,
    /// Each camera view spans this multiple of the area extent.
    pub view_span_scale: f64,
    /// Vehicle speed range in m/s; equal bounds give constant speeds and
    /// zero freezes the traffic.
    #[serde(default = "default_speed_min")]
    pub speed_min_m_s: f64,
    #[serde(default = "default_speed_max")]
    pub speed_max_m_s: f64,
    pub rng_seed: u64,
}

fn default_speed_min() -> f64 {
    2.0
}

fn default_speed_max() -> f64 {
    8.0
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_width_m: 100.0,
            area_height_m: 100.0,
            num_uavs: 4,
            uav_altitude_m: 50.0,
            num_vehicles: 12,
            frame_rate_hz: 2.0,
            frames: 7,
            input_frames: 3,
            image_height: 56,
            image_width: 120,
            image_channels: 3,
            quant_bits: 8,
            bev_cell_m: 0.5,
            view_span_scale: 1.1,
            speed_min_m_s: default_speed_min(),
            speed_max_m_s: default_speed_max(),
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: &str| Err(ScenarioError::InvalidConfig(msg.to_string()));
        if self.area_width_m <= 0.0 || self.area_height_m <= 0.0 {
            return fail("area extent must be positive");
        }
        if self.num_uavs < 1 {
            return fail("need at least one UAV");
        }
        if self.num_vehicles < 1 {
            return fail("need at least one vehicle");
        }
        if self.frames < 1 {
            return fail("need at least one frame");
        }
        if self.input_frames > self.frames {
            return fail("input_frames cannot exceed frames");
        }
        if self.frame_rate_hz <= 0.0 {
            return fail("frame rate must be positive");
        }
        if self.image_height < 4 || self.image_width < 4 {
            return fail("image must be at least 4x4 pixels");
        }
        if self.image_channels < 1 {
            return fail("image needs at least one channel");
        }
        if !(1..=24).contains(&self.quant_bits) {
            return fail("quant_bits must be in 1..=24");
        }
        if self.bev_cell_m <= 0.0 {
            return fail("BEV cell size must be positive");
        }
        if self.uav_altitude_m <= 0.0 {
            return fail("UAV altitude must be positive");
        }
        if self.view_span_scale <= 0.0 {
            return fail("view span scale must be positive");
        }
        if self.speed_min_m_s < 0.0 || self.speed_max_m_s < self.speed_min_m_s {
            return fail("speed range must satisfy 0 <= min <= max");
        }
        Ok(())
    }

    pub fn frame_interval_s(&self) -> f64 {
        1.0 / self.frame_rate_hz
    }

    pub fn bev_spec(&self) -> BevSpec {
        BevSpec::new(
            0.0,
            self.area_width_m,
            0.0,
            self.area_height_m,
            self.bev_cell_m,
            self.bev_cell_m,
        )
        .expect("validated config yields a non-empty BEV spec")
    }
}

/// One vehicle: an axis-aligned rectangle with per-frame center and
/// velocity. Motion reflects at the area boundary, so
/// `centers[t+1] = centers[t] + velocities[t] * dt` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub id: u32,
    pub half_length_m: f64,
    pub half_width_m: f64,
    pub centers: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl VehicleTrack {
    /// Half-open footprint `[x0, x1) x [y0, y1)` at a frame.
    pub fn footprint(&self, frame: usize) -> (f64, f64, f64, f64) {
        let [cx, cy] = self.centers[frame];
        (
            cx - self.half_length_m,
            cx + self.half_length_m,
            cy - self.half_width_m,
            cy + self.half_width_m,
        )
    }

    pub fn contains(&self, frame: usize, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.footprint(frame);
        x >= x0 && x < x1 && y >= y0 && y < y1
    }
}

/// UAV camera pose: world position, camera-to-world rotation, intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavPose {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub intrinsics: CameraIntrinsics,
}

impl UavPose {
    pub fn nadir(position: Vector3<f64>, intrinsics: CameraIntrinsics) -> Self {
        let extr = CameraExtrinsics::nadir(position);
        let r = extr.rotation();
        let mut rotation = [[0.0; 3]; 3];
        for row in 0..3 {
            for col in 0..3 {
                rotation[row][col] = r[(row, col)];
            }
        }
        Self {
            position: [position.x, position.y, position.z],
            rotation,
            intrinsics,
        }
    }

    pub fn extrinsics(&self) -> CameraExtrinsics {
        CameraExtrinsics::new(
            nalgebra::Matrix3::from_fn(|r, c| self.rotation[r][c]),
            Vector3::from_column_slice(&self.position),
        )
        .expect("stored pose rotation is proper")
    }
}

/// A generated scene: immutable after generation and safe to share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub vehicles: Vec<VehicleTrack>,
    pub uavs: Vec<UavPose>,
    pub bev: BevSpec,
}

// Rendering palette. Vehicles and background dots are dark features on a
// flat bright field; both land in the top score quantiles of the default
// importance scorer, which pins the Top-K saturation knee near the
// textured pixel fraction.
const BG_BASE_VALUE: f64 = 0.55;
const DOT_VALUE: f64 = 0.30;
const DOT_NODE_PITCH_M: f64 = 7.0;
const DOT_RADIUS_M: f64 = 1.3;
const VEHICLE_BASE_VALUE: f64 = 0.05;
const VEHICLE_ID_VALUE_STEP: f64 = 0.015;

fn background_value(cfg: &ScenarioConfig, x: f64, y: f64) -> f64 {
    // Dot lattice anchored at the area center and symmetric under
    // reflection about either center axis.
    let cx = cfg.area_width_m / 2.0;
    let cy = cfg.area_height_m / 2.0;
    let u = (x - cx) / DOT_NODE_PITCH_M;
    let v = (y - cy) / DOT_NODE_PITCH_M;
    let du = (u - u.round()) * DOT_NODE_PITCH_M;
    let dv = (v - v.round()) * DOT_NODE_PITCH_M;
    if du * du + dv * dv < DOT_RADIUS_M * DOT_RADIUS_M {
        DOT_VALUE
    } else {
        BG_BASE_VALUE
    }
}

fn vehicle_value(id: u32) -> f64 {
    VEHICLE_BASE_VALUE + VEHICLE_ID_VALUE_STEP * ((id - 1) % 5) as f64
}

/// Generate a scenario deterministically from its config.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let dt = cfg.frame_interval_s();

    let mut vehicles = Vec::with_capacity(cfg.num_vehicles);
    for idx in 0..cfg.num_vehicles {
        let half_length = rng.random_range(2.0..3.2);
        let half_width = rng.random_range(1.0..1.5);
        let margin_x = half_length + 0.5;
        let margin_y = half_width + 0.5;
        if 2.0 * margin_x >= cfg.area_width_m || 2.0 * margin_y >= cfg.area_height_m {
            return Err(ScenarioError::InvalidConfig(
                "area too small to place a vehicle".to_string(),
            ));
        }
        // Rejection-sample a start position that does not overlap earlier
        // vehicles; give up after a while and accept the overlap.
        let mut center = [0.0f64; 2];
        for attempt in 0..100 {
            center = [
                rng.random_range(margin_x..cfg.area_width_m - margin_x),
                rng.random_range(margin_y..cfg.area_height_m - margin_y),
            ];
            let clear = vehicles.iter().all(|v: &VehicleTrack| {
                let [ox, oy] = v.centers[0];
                (center[0] - ox).abs() > half_length + v.half_length_m + 1.0
                    || (center[1] - oy).abs() > half_width + v.half_width_m + 1.0
            });
            if clear || attempt == 99 {
                break;
            }
        }
        let speed = if cfg.speed_max_m_s > cfg.speed_min_m_s {
            rng.random_range(cfg.speed_min_m_s..cfg.speed_max_m_s)
        } else {
            cfg.speed_min_m_s
        };
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut velocity = [speed * heading.cos(), speed * heading.sin()];

        let mut centers = Vec::with_capacity(cfg.frames);
        let mut velocities = Vec::with_capacity(cfg.frames);
        centers.push(center);
        for _ in 1..cfg.frames {
            // Reflect before stepping so the recorded velocity matches the
            // actual displacement of this frame interval.
            let cur = *centers.last().unwrap();
            if cur[0] + velocity[0] * dt < margin_x
                || cur[0] + velocity[0] * dt > cfg.area_width_m - margin_x
            {
                velocity[0] = -velocity[0];
            }
            if cur[1] + velocity[1] * dt < margin_y
                || cur[1] + velocity[1] * dt > cfg.area_height_m - margin_y
            {
                velocity[1] = -velocity[1];
            }
            velocities.push(velocity);
            centers.push([cur[0] + velocity[0] * dt, cur[1] + velocity[1] * dt]);
        }
        velocities.push(velocity);

        vehicles.push(VehicleTrack {
            id: (idx + 1) as u32,
            half_length_m: half_length,
            half_width_m: half_width,
            centers,
            velocities,
        });
    }

    let uavs = default_uav_ring(cfg);
    Ok(Scenario { config: cfg.clone(), vehicles, uavs, bev: cfg.bev_spec() })
}

/// Default UAV layout: nadir cameras on a ring of quarter-extent radius
/// (a single UAV hovers over the center). Every view spans
/// `view_span_scale` times the area, so all views overlap.
fn default_uav_ring(cfg: &ScenarioConfig) -> Vec<UavPose> {
    let cx = cfg.area_width_m / 2.0;
    let cy = cfg.area_height_m / 2.0;
    let span_x = cfg.view_span_scale * cfg.area_width_m;
    let span_y = cfg.view_span_scale * cfg.area_height_m;
    let intr = CameraIntrinsics::new(
        cfg.uav_altitude_m * cfg.image_height as f64 / span_x,
        cfg.uav_altitude_m * cfg.image_width as f64 / span_y,
        (cfg.image_height as f64 - 1.0) / 2.0,
        (cfg.image_width as f64 - 1.0) / 2.0,
    )
    .expect("positive focal lengths");

    (0..cfg.num_uavs)
        .map(|k| {
            let (px, py) = if cfg.num_uavs == 1 {
                (cx, cy)
            } else {
                let angle = std::f64::consts::TAU * k as f64 / cfg.num_uavs as f64
                    + std::f64::consts::FRAC_PI_4;
                (
                    cx + 0.25 * cfg.area_width_m * angle.cos(),
                    cy + 0.25 * cfg.area_height_m * angle.sin(),
                )
            };
            UavPose::nadir(Vector3::new(px, py, cfg.uav_altitude_m), intr)
        })
        .collect()
}

impl Scenario {
    pub fn frames(&self) -> usize {
        self.config.frames
    }

    /// Frames evaluated as predictions (those after the input frames), or
    /// the last frame when the whole sequence is observed.
    pub fn prediction_frames(&self) -> Vec<usize> {
        if self.config.input_frames < self.config.frames {
            (self.config.input_frames..self.config.frames).collect()
        } else {
            vec![self.config.frames - 1]
        }
    }

    /// The frame whose observations feed the perceiver.
    pub fn observation_frame(&self) -> usize {
        self.config.input_frames.saturating_sub(1).min(self.config.frames - 1)
    }

    /// Instance id at a ground point, lowest id winning overlaps; 0 for
    /// background.
    pub fn instance_at(&self, frame: usize, x: f64, y: f64) -> u32 {
        for v in &self.vehicles {
            if v.contains(frame, x, y) {
                return v.id;
            }
        }
        0
    }

    /// Ground-truth BEV instances at a frame: every cell whose area
    /// overlaps a vehicle footprint, contested cells going to the lowest
    /// id (matching the renderer).
    pub fn ground_truth_instances(&self, frame: usize) -> Result<Vec<(u32, BTreeSet<(usize, usize)>)>, ScenarioError> {
        self.check_frame(frame)?;
        let mut claimed: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut out = Vec::with_capacity(self.vehicles.len());
        for v in &self.vehicles {
            let (x0, x1, y0, y1) = v.footprint(frame);
            let mut cells = BTreeSet::new();
            for cell in rasterize_rect(&self.bev, x0, x1, y0, y1) {
                if claimed.insert(cell) {
                    cells.insert(cell);
                }
            }
            if !cells.is_empty() {
                out.push((v.id, cells));
            }
        }
        Ok(out)
    }

    fn check_frame(&self, frame: usize) -> Result<(), ScenarioError> {
        if frame >= self.config.frames {
            return Err(ScenarioError::FrameOutOfRange { frame, frames: self.config.frames });
        }
        Ok(())
    }
}

/// All BEV cells whose area overlap with the half-open rectangle
/// `[x0, x1) x [y0, y1)` is strictly positive.
pub fn rasterize_rect(spec: &BevSpec, x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let w_lo = (((x0 - spec.w_min) / spec.delta_w).floor().max(0.0)) as usize;
    let h_lo = (((y0 - spec.h_min) / spec.delta_h).floor().max(0.0)) as usize;
    for w in w_lo..spec.w_cells() {
        let cell_x0 = spec.w_min + w as f64 * spec.delta_w;
        if cell_x0 >= x1 {
            break;
        }
        if cell_x0 + spec.delta_w <= x0 {
            continue;
        }
        for h in h_lo..spec.h_cells() {
            let cell_y0 = spec.h_min + h as f64 * spec.delta_h;
            if cell_y0 >= y1 {
                break;
            }
            if cell_y0 + spec.delta_h <= y0 {
                continue;
            }
            cells.push((w, h));
        }
    }
    cells
}

/// Render the view of one UAV at a frame.
///
/// A pixel carries instance id `k` iff the camera ray through it meets
/// vehicle `k`'s footprint on the ground plane; values are the synthetic
/// palette quantized to the configured bit depth, identical across
/// channels.
pub fn render_view(
    scenario: &Scenario,
    uav: &UavPose,
    frame: usize,
) -> Result<DenseImage, ScenarioError> {
    scenario.check_frame(frame)?;
    let cfg = &scenario.config;
    let mut img = DenseImage::constant(
        cfg.image_height,
        cfg.image_width,
        cfg.image_channels,
        cfg.quant_bits,
        DenseImage::quantize(BG_BASE_VALUE, cfg.quant_bits),
    );
    let extr = uav.extrinsics();
    for i in 0..cfg.image_height {
        for j in 0..cfg.image_width {
            let ground = match lift_pixel_to_ground(&uav.intrinsics, &extr, (i as f64, j as f64), 0.0)
            {
                Ok(p) => p,
                Err(_) => continue, // sky pixel: keep flat background
            };
            let id = scenario.instance_at(frame, ground.x, ground.y);
            let value = if id == 0 {
                background_value(cfg, ground.x, ground.y)
            } else {
                img.set_instance_id(i, j, id);
                vehicle_value(id)
            };
            let q = DenseImage::quantize(value, cfg.quant_bits);
            for c in 0..cfg.image_channels {
                img.set_value(i, j, c, q);
            }
        }
    }
    Ok(img)
}

/// Render every UAV's view at a frame.
pub fn render_all_views(scenario: &Scenario, frame: usize) -> Result<Vec<DenseImage>, ScenarioError> {
    scenario.uavs.iter().map(|uav| render_view(scenario, uav, frame)).collect()
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    schema_version: String,
    scenario: serde_json::Value,
}

/// Persist a scenario as versioned, self-describing JSON.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    let file = ScenarioFile {
        schema_version: SCENARIO_SCHEMA_VERSION.to_string(),
        scenario: serde_json::to_value(scenario)?,
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Load a scenario, rejecting unknown schema versions.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile = serde_json::from_str(&text)?;
    if file.schema_version != SCENARIO_SCHEMA_VERSION {
        return Err(ScenarioError::VersionMismatch {
            found: file.schema_version,
            expected: SCENARIO_SCHEMA_VERSION.to_string(),
        });
    }
    Ok(serde_json::from_value(file.scenario)?)
}
