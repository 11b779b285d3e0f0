//! Geometry-based 3D wideband MIMO channel realizations.
//!
//! Each propagation path is a rank-1 outer product of uniform-planar-array
//! responses weighted by a complex gain, a Doppler phasor, and a delay
//! phasor; line-of-sight and scattered components mix through a Rician
//! K-factor. Realizations are discretized onto the OFDM time-frequency
//! grid (per-subcarrier frequency offsets, per-symbol time offsets).
//!
//! Dual-polarized arrays are modeled as two co-located sub-arrays stacked
//! into the antenna dimension; each path carries independent unit-modulus
//! polarization phases so the per-path matrix stays rank 1.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Scenario;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform planar array: `n_x x n_y` elements per polarization,
/// `polarization_pairs` co-located sub-arrays (1 = single, 2 = dual).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayGeometry {
    pub n_x: usize,
    pub n_y: usize,
    pub spacing_m: f64,
    pub polarization_pairs: usize,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        let lambda = SPEED_OF_LIGHT_M_S / 3.5e9;
        Self { n_x: 2, n_y: 2, spacing_m: lambda / 2.0, polarization_pairs: 2 }
    }
}

impl ArrayGeometry {
    pub fn new(n_x: usize, n_y: usize, spacing_m: f64, polarization_pairs: usize) -> Result<Self, ChannelError> {
        if n_x < 1 || n_y < 1 {
            return Err(ChannelError::InvalidConfig("array needs at least one element per axis".into()));
        }
        if spacing_m <= 0.0 {
            return Err(ChannelError::InvalidConfig("element spacing must be positive".into()));
        }
        if !(1..=2).contains(&polarization_pairs) {
            return Err(ChannelError::InvalidConfig("polarization_pairs must be 1 or 2".into()));
        }
        Ok(Self { n_x, n_y, spacing_m, polarization_pairs })
    }

    /// Total antenna elements including polarization stacking.
    pub fn elements(&self) -> usize {
        self.polarization_pairs * self.n_x * self.n_y
    }
}

/// Single-polarization UPA response `a_x (x) a_y`, unit norm, length
/// `n_x * n_y`; first entry `1/sqrt(n_x n_y)`.
pub fn array_response(geom: &ArrayGeometry, az: f64, el: f64, lambda_m: f64) -> DVector<Complex64> {
    let phase_unit = TAU * geom.spacing_m / lambda_m * el.sin();
    let phase_x = phase_unit * az.cos();
    let phase_y = phase_unit * az.sin();
    let ax: Vec<Complex64> = (0..geom.n_x)
        .map(|n| Complex64::from_polar(1.0, phase_x * n as f64) / (geom.n_x as f64).sqrt())
        .collect();
    let ay: Vec<Complex64> = (0..geom.n_y)
        .map(|n| Complex64::from_polar(1.0, phase_y * n as f64) / (geom.n_y as f64).sqrt())
        .collect();
    let mut out = DVector::zeros(geom.n_x * geom.n_y);
    for (ix, &vx) in ax.iter().enumerate() {
        for (iy, &vy) in ay.iter().enumerate() {
            out[ix * geom.n_y + iy] = vx * vy;
        }
    }
    out
}

/// Full-array response with polarization stacking: `[a; psi a] / sqrt(2)`
/// for dual-polarized arrays, plain `a` otherwise. Unit norm either way.
pub fn stacked_response(
    geom: &ArrayGeometry,
    az: f64,
    el: f64,
    lambda_m: f64,
    pol_phase: Complex64,
) -> DVector<Complex64> {
    let base = array_response(geom, az, el, lambda_m);
    if geom.polarization_pairs == 1 {
        return base;
    }
    let n = base.len();
    let mut out = DVector::zeros(2 * n);
    let scale = 1.0 / 2.0f64.sqrt();
    for i in 0..n {
        out[i] = base[i] * scale;
        out[n + i] = base[i] * pol_phase * scale;
    }
    out
}

/// Parameters of one propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: Complex64,
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub aod_az: f64,
    pub aod_el: f64,
    /// Unit-modulus polarization phases for the stacked sub-arrays.
    pub rx_pol_phase: Complex64,
    pub tx_pol_phase: Complex64,
}

impl PathParams {
    /// Co-polarized path with the given geometry and gain.
    pub fn co_polarized(gain: Complex64, delay_s: f64, doppler_hz: f64, aoa: (f64, f64), aod: (f64, f64)) -> Self {
        Self {
            gain,
            delay_s,
            doppler_hz,
            aoa_az: aoa.0,
            aoa_el: aoa.1,
            aod_az: aod.0,
            aod_el: aod.1,
            rx_pol_phase: Complex64::new(1.0, 0.0),
            tx_pol_phase: Complex64::new(1.0, 0.0),
        }
    }
}

/// Rank-1 path matrix at time `t_s` and frequency offset `f_hz`:
/// `gain * e^{j 2 pi nu t} * e^{-j 2 pi f tau} * a_r a_t^H`.
pub fn path_component(
    p: &PathParams,
    tx_geom: &ArrayGeometry,
    rx_geom: &ArrayGeometry,
    lambda_m: f64,
    t_s: f64,
    f_hz: f64,
) -> DMatrix<Complex64> {
    let a_r = stacked_response(rx_geom, p.aoa_az, p.aoa_el, lambda_m, p.rx_pol_phase);
    let a_t = stacked_response(tx_geom, p.aod_az, p.aod_el, lambda_m, p.tx_pol_phase);
    let phase = Complex64::from_polar(1.0, TAU * (p.doppler_hz * t_s - f_hz * p.delay_s));
    let scale = p.gain * phase;
    let mut out = DMatrix::zeros(a_r.len(), a_t.len());
    for r in 0..a_r.len() {
        for c in 0..a_t.len() {
            out[(r, c)] = scale * a_r[r] * a_t[c].conj();
        }
    }
    out
}

/// Rician mixing of a line-of-sight matrix with scattered path matrices:
/// `sqrt(k/(k+1)) H_los + sqrt(1/(k+1)) sum_l H_l`.
pub fn rician_mix(
    los: &DMatrix<Complex64>,
    nlos_paths: &[DMatrix<Complex64>],
    k_factor: f64,
) -> DMatrix<Complex64> {
    assert!(k_factor >= 0.0, "Rician K-factor must be non-negative");
    let w_los = (k_factor / (k_factor + 1.0)).sqrt();
    let w_nlos = (1.0 / (k_factor + 1.0)).sqrt();
    let mut out = los * Complex64::new(w_los, 0.0);
    for h in nlos_paths {
        out += h * Complex64::new(w_nlos, 0.0);
    }
    out
}

/// Wideband channel configuration, defaulting to a 3.5 GHz carrier with
/// 72 subcarriers at 15 kHz spacing, half-wavelength dual-polarized
/// arrays (2x1 with 4 elements at the UAV, 2x2 with 8 at the BS).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub carrier_hz: f64,
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub symbols: usize,
    pub num_nlos_paths: usize,
    pub k_factor: f64,
    /// Total scattered power split evenly across the NLoS paths.
    pub nlos_total_power: f64,
    pub max_excess_delay_s: f64,
    pub max_doppler_hz: f64,
    pub bs_position: [f64; 3],
    pub bs_array: ArrayGeometry,
    pub uav_array: ArrayGeometry,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let lambda = SPEED_OF_LIGHT_M_S / 3.5e9;
        Self {
            carrier_hz: 3.5e9,
            subcarriers: 72,
            subcarrier_spacing_hz: 15e3,
            symbols: 2,
            num_nlos_paths: 5,
            k_factor: 10.0,
            nlos_total_power: 1.0,
            max_excess_delay_s: 1e-6,
            max_doppler_hz: 50.0,
            bs_position: [0.0, 0.0, 25.0],
            bs_array: ArrayGeometry { n_x: 2, n_y: 2, spacing_m: lambda / 2.0, polarization_pairs: 2 },
            uav_array: ArrayGeometry { n_x: 2, n_y: 1, spacing_m: lambda / 2.0, polarization_pairs: 2 },
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.carrier_hz <= 0.0 || self.subcarrier_spacing_hz <= 0.0 {
            return Err(ChannelError::InvalidConfig("carrier and spacing must be positive".into()));
        }
        if self.subcarriers < 1 || self.symbols < 1 {
            return Err(ChannelError::InvalidConfig("need at least one subcarrier and symbol".into()));
        }
        if self.k_factor < 0.0 || self.nlos_total_power < 0.0 {
            return Err(ChannelError::InvalidConfig("powers must be non-negative".into()));
        }
        if self.max_excess_delay_s < 0.0 || self.max_doppler_hz < 0.0 {
            return Err(ChannelError::InvalidConfig("delay/doppler bounds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_M_S / self.carrier_hz
    }

    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    pub fn rx_antennas(&self) -> usize {
        self.bs_array.elements()
    }

    pub fn tx_antennas(&self) -> usize {
        self.uav_array.elements()
    }
}

/// Azimuth/elevation of a direction vector: azimuth in the x-y plane,
/// elevation measured from the horizon (pi/2 = straight up).
pub fn direction_angles(direction: [f64; 3]) -> (f64, f64) {
    let [dx, dy, dz] = direction;
    (dy.atan2(dx), dz.atan2((dx * dx + dy * dy).sqrt()))
}

/// A realized channel tensor: `rx x tx` matrix per (UAV, subcarrier,
/// symbol).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub config: ChannelConfig,
    /// `h[u][k][s]` is the matrix for UAV `u`, subcarrier `k`, symbol `s`.
    pub h: Vec<Vec<Vec<DMatrix<Complex64>>>>,
    /// Line-of-sight angles per UAV (aoa_az, aoa_el, aod_az, aod_el).
    pub los_angles: Vec<(f64, f64, f64, f64)>,
}

impl ChannelRealization {
    pub fn num_uavs(&self) -> usize {
        self.h.len()
    }

    /// Subcarrier- and symbol-averaged channel matrix for one UAV.
    pub fn mean_matrix(&self, uav: usize) -> DMatrix<Complex64> {
        let grid = &self.h[uav];
        let mut acc = DMatrix::<Complex64>::zeros(grid[0][0].nrows(), grid[0][0].ncols());
        let mut n = 0.0;
        for per_k in grid {
            for m in per_k {
                acc += m;
                n += 1.0;
            }
        }
        acc / Complex64::new(n, 0.0)
    }

    /// Export the tensor as a raw binary blob (f64 LE, row-major matrices,
    /// real/imaginary interleaved, ordered by UAV, subcarrier, symbol)
    /// plus a JSON sidecar describing dimensions and parameters.
    pub fn export(&self, blob_path: &Path, sidecar_path: &Path) -> Result<(), ChannelError> {
        let mut bytes = Vec::new();
        for per_u in &self.h {
            for per_k in per_u {
                for m in per_k {
                    for r in 0..m.nrows() {
                        for c in 0..m.ncols() {
                            bytes.extend_from_slice(&m[(r, c)].re.to_le_bytes());
                            bytes.extend_from_slice(&m[(r, c)].im.to_le_bytes());
                        }
                    }
                }
            }
        }
        std::fs::write(blob_path, bytes)?;
        let sidecar = serde_json::json!({
            "schema_version": "copersim.channel.v1",
            "num_uavs": self.num_uavs(),
            "subcarriers": self.config.subcarriers,
            "symbols": self.config.symbols,
            "rx_antennas": self.config.rx_antennas(),
            "tx_antennas": self.config.tx_antennas(),
            "layout": "u,k,s,row-major,re/im f64 LE",
            "config": serde_json::to_value(&self.config).expect("config serializes"),
        });
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))?;
        Ok(())
    }
}

fn complex_normal(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

fn unit_phase(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::from_polar(1.0, rng.random_range(0.0..TAU))
}

/// Realize the channel between every UAV of a scenario and the BS.
///
/// The LoS path is deterministic from geometry (delay = distance / c,
/// carrier phase folded into the gain); NLoS paths draw delays, Dopplers,
/// hemisphere angles, gains, and polarization phases from the configured
/// ranges under the given seed.
pub fn realize_channel(
    scenario: &Scenario,
    cfg: &ChannelConfig,
    seed: u64,
) -> Result<ChannelRealization, ChannelError> {
    cfg.validate()?;
    let lambda = cfg.wavelength_m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Vec::with_capacity(scenario.uavs.len());
    let mut los_angles = Vec::with_capacity(scenario.uavs.len());

    for uav in &scenario.uavs {
        let delta = [
            uav.position[0] - cfg.bs_position[0],
            uav.position[1] - cfg.bs_position[1],
            uav.position[2] - cfg.bs_position[2],
        ];
        let distance = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
        let (aoa_az, aoa_el) = direction_angles(delta);
        let (aod_az, aod_el) = direction_angles([-delta[0], -delta[1], -delta[2]]);
        los_angles.push((aoa_az, aoa_el, aod_az, aod_el));

        let los_delay = distance / SPEED_OF_LIGHT_M_S;
        // Carrier phase accumulated over the LoS distance.
        let los_gain = Complex64::from_polar(1.0, -TAU * cfg.carrier_hz * los_delay);
        let los_path = PathParams::co_polarized(
            los_gain,
            los_delay,
            0.0,
            (aoa_az, aoa_el),
            (aod_az, aod_el),
        );

        let per_path_power = if cfg.num_nlos_paths > 0 {
            cfg.nlos_total_power / cfg.num_nlos_paths as f64
        } else {
            0.0
        };
        let nlos_paths: Vec<PathParams> = (0..cfg.num_nlos_paths)
            .map(|_| PathParams {
                gain: complex_normal(&mut rng, per_path_power),
                delay_s: los_delay + rng.random_range(0.0..=cfg.max_excess_delay_s),
                doppler_hz: rng.random_range(-cfg.max_doppler_hz..=cfg.max_doppler_hz),
                // Arrivals from above the BS horizon, departures below the UAV.
                aoa_az: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                aoa_el: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
                aod_az: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                aod_el: rng.random_range(-std::f64::consts::FRAC_PI_2..0.0),
                rx_pol_phase: unit_phase(&mut rng),
                tx_pol_phase: unit_phase(&mut rng),
            })
            .collect();

        let mut per_uav = Vec::with_capacity(cfg.subcarriers);
        for k in 0..cfg.subcarriers {
            let f = k as f64 * cfg.subcarrier_spacing_hz;
            let mut per_k = Vec::with_capacity(cfg.symbols);
            for s in 0..cfg.symbols {
                let t = s as f64 * cfg.symbol_duration_s();
                let los = path_component(&los_path, &cfg.uav_array, &cfg.bs_array, lambda, t, f);
                let nlos: Vec<DMatrix<Complex64>> = nlos_paths
                    .iter()
                    .map(|p| path_component(p, &cfg.uav_array, &cfg.bs_array, lambda, t, f))
                    .collect();
                per_k.push(rician_mix(&los, &nlos, cfg.k_factor));
            }
            per_uav.push(per_k);
        }
        h.push(per_uav);
    }

    Ok(ChannelRealization { config: cfg.clone(), h, los_angles })
}
