//! MU-MIMO uplink processing: Type-I DFT precoding codebook, effective
//! channel assembly, MMSE equalization, post-equalization SINR, and
//! Shannon achievable rates, plus exhaustive/greedy precoder search.
//!
//! All selected UAVs share the same time-frequency resources and transmit
//! a single stream each; the BS separates them with a linear MMSE
//! equalizer computed per subcarrier and symbol.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelRealization;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("no UAV selected")]
    EmptySelection,
    #[error("precoder index {index} out of range for codebook of {size}")]
    PrecoderOutOfRange { index: usize, size: usize },
    #[error("link state shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in channel or equalizer input")]
    NonFinite,
    #[error("joint search space too large: {0} candidates")]
    JointSearchTooLarge(u128),
}

/// Type-I single-stream precoding codebook for a dual-polarized
/// `n_x x n_y` transmit array: oversampled DFT beams with four co-phasing
/// factors, every entry unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderCodebook {
    pub n_x: usize,
    pub n_y: usize,
    pub o_x: usize,
    pub o_y: usize,
    entries: Vec<DVector<Complex64>>,
}

/// Build the codebook: beams indexed by `(n_x, n_y, m)` with
/// `n_x in 0..O_x N_x`, `n_y in 0..O_y N_y`, co-phase `psi_m = e^{j pi m / 2}`
/// in `{1, j, -1, -j}`; entry
/// `W = [M; psi_m M] / sqrt(2 N_x N_y)` where `M` is the Kronecker product
/// of the per-axis DFT vectors.
pub fn build_codebook(n_x: usize, n_y: usize, o_x: usize, o_y: usize) -> PrecoderCodebook {
    assert!(n_x >= 1 && n_y >= 1 && o_x >= 1 && o_y >= 1);
    let mut entries = Vec::with_capacity(o_x * n_x * o_y * n_y * 4);
    let norm = 1.0 / (2.0 * (n_x * n_y) as f64).sqrt();
    for beam_x in 0..o_x * n_x {
        // DFT vector entries e^{j 2 pi n beam / (N O)}, unnormalized.
        let cx: Vec<Complex64> = (0..n_x)
            .map(|n| {
                Complex64::from_polar(
                    1.0,
                    std::f64::consts::TAU * (beam_x * n) as f64 / (n_x * o_x) as f64,
                )
            })
            .collect();
        for beam_y in 0..o_y * n_y {
            let cy: Vec<Complex64> = (0..n_y)
                .map(|n| {
                    Complex64::from_polar(
                        1.0,
                        std::f64::consts::TAU * (beam_y * n) as f64 / (n_y * o_y) as f64,
                    )
                })
                .collect();
            // Kronecker product of the DFT vectors.
            let mut kron = Vec::with_capacity(n_x * n_y);
            for &vx in &cx {
                for &vy in &cy {
                    kron.push(vx * vy);
                }
            }
            for m in 0..4 {
                let psi = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_2 * m as f64);
                let mut w = DVector::zeros(2 * n_x * n_y);
                for (i, &v) in kron.iter().enumerate() {
                    w[i] = v * norm;
                    w[n_x * n_y + i] = v * psi * norm;
                }
                entries.push(w);
            }
        }
    }
    PrecoderCodebook { n_x, n_y, o_x, o_y, entries }
}

impl PrecoderCodebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> Result<&DVector<Complex64>, LinkError> {
        self.entries.get(index).ok_or(LinkError::PrecoderOutOfRange {
            index,
            size: self.entries.len(),
        })
    }

    /// Antennas each entry drives (2 polarizations x n_x x n_y).
    pub fn t_x(&self) -> usize {
        2 * self.n_x * self.n_y
    }

    /// Flat index of beam `(beam_x, beam_y)` with co-phase `m`.
    pub fn index_of(&self, beam_x: usize, beam_y: usize, m: usize) -> usize {
        (beam_x * self.o_y * self.n_y + beam_y) * 4 + m
    }

    /// Co-phasing factor `psi_m`.
    pub fn co_phase(m: usize) -> Complex64 {
        Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_2 * m as f64)
    }

    /// CSV dump (`index,antenna,re,im`) for cross-validation.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index,antenna,re,im\n");
        for (idx, entry) in self.entries.iter().enumerate() {
            for (ant, v) in entry.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", idx, ant, v.re, v.im));
            }
        }
        out
    }
}

/// Per-UAV link state: single-BS association flags, precoder indices,
/// transmit powers, and the receiver noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub association: Vec<bool>,
    pub precoder_idx: Vec<usize>,
    pub power_w: Vec<f64>,
    pub noise_var: f64,
}

impl LinkState {
    pub fn uniform(num_uavs: usize, precoder_idx: usize, power_w: f64, noise_var: f64) -> Self {
        Self {
            association: vec![true; num_uavs],
            precoder_idx: vec![precoder_idx; num_uavs],
            power_w: vec![power_w; num_uavs],
            noise_var,
        }
    }

    pub fn validate(&self, codebook_len: usize) -> Result<(), LinkError> {
        let n = self.association.len();
        if self.precoder_idx.len() != n || self.power_w.len() != n {
            return Err(LinkError::ShapeMismatch(format!(
                "association {n}, precoders {}, powers {}",
                self.precoder_idx.len(),
                self.power_w.len()
            )));
        }
        for &idx in &self.precoder_idx {
            if idx >= codebook_len {
                return Err(LinkError::PrecoderOutOfRange { index: idx, size: codebook_len });
            }
        }
        if self.selected().is_empty() {
            return Err(LinkError::EmptySelection);
        }
        if self.power_w.iter().any(|&p| p <= 0.0) || self.noise_var <= 0.0 {
            return Err(LinkError::ShapeMismatch("powers and noise variance must be positive".into()));
        }
        Ok(())
    }

    /// Indices of associated UAVs, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.association
            .iter()
            .enumerate()
            .filter_map(|(u, &a)| a.then_some(u))
            .collect()
    }
}

/// Assemble the effective channel: one column per selected UAV,
/// `H_u W_u sqrt(p_u)`; deselected UAVs contribute no column.
pub fn effective_channel(
    h_per_uav: &[&DMatrix<Complex64>],
    link: &LinkState,
    codebook: &PrecoderCodebook,
) -> Result<DMatrix<Complex64>, LinkError> {
    let selected = link.selected();
    if selected.is_empty() {
        return Err(LinkError::EmptySelection);
    }
    if h_per_uav.len() != link.association.len() {
        return Err(LinkError::ShapeMismatch(format!(
            "{} channel matrices for {} UAVs",
            h_per_uav.len(),
            link.association.len()
        )));
    }
    let r_x = h_per_uav[0].nrows();
    let mut h_eff = DMatrix::zeros(r_x, selected.len());
    for (col, &u) in selected.iter().enumerate() {
        let w = codebook.entry(link.precoder_idx[u])?;
        if h_per_uav[u].ncols() != w.len() {
            return Err(LinkError::ShapeMismatch(format!(
                "channel has {} tx antennas, precoder {}",
                h_per_uav[u].ncols(),
                w.len()
            )));
        }
        let column = h_per_uav[u] * w * Complex64::new(link.power_w[u].sqrt(), 0.0);
        h_eff.set_column(col, &column);
    }
    Ok(h_eff)
}

/// MMSE equalizer `G = (H^H H + sigma^2 I)^{-1} H^H`, computed through a
/// Cholesky solve of the regularized Gram matrix.
pub fn mmse_equalizer(h_eff: &DMatrix<Complex64>, noise_var: f64) -> Result<DMatrix<Complex64>, LinkError> {
    if h_eff.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) || !noise_var.is_finite() {
        return Err(LinkError::NonFinite);
    }
    let u = h_eff.ncols();
    let gram = h_eff.adjoint() * h_eff
        + DMatrix::<Complex64>::identity(u, u) * Complex64::new(noise_var, 0.0);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(LinkError::NonFinite)?;
    Ok(chol.solve(&h_eff.adjoint()))
}

/// Post-equalization SINR per selected UAV:
/// `|g_u^H h_u|^2 / (sum_{u' != u} |g_u^H h_{u'}|^2 + sigma^2 ||g_u||^2)`.
pub fn sinr_per_uav(
    equalizer: &DMatrix<Complex64>,
    h_eff: &DMatrix<Complex64>,
    noise_var: f64,
) -> Vec<f64> {
    let u_sel = h_eff.ncols();
    debug_assert_eq!(equalizer.nrows(), u_sel);
    debug_assert_eq!(equalizer.ncols(), h_eff.nrows());
    let cross = equalizer * h_eff; // U x U
    (0..u_sel)
        .map(|u| {
            let signal = cross[(u, u)].norm_sqr();
            let mut interference = 0.0;
            for v in 0..u_sel {
                if v != u {
                    interference += cross[(u, v)].norm_sqr();
                }
            }
            let row_norm_sq: f64 = equalizer.row(u).iter().map(|g| g.norm_sqr()).sum();
            signal / (interference + noise_var * row_norm_sq)
        })
        .collect()
}

/// Average spectral efficiency and physical-unit achievable rate over the
/// OFDM grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Mean of `log2(1 + SINR)` over all subcarriers and symbols.
    pub spectral_efficiency: f64,
    /// Spectral efficiency times occupied bandwidth (K subcarriers at the
    /// configured spacing), bits per second.
    pub rate_bps: f64,
}

/// Aggregate per-grid-point SINRs into a rate.
pub fn achievable_rate(
    sinr_grid: &[f64],
    subcarriers: usize,
    subcarrier_spacing_hz: f64,
) -> RateReport {
    assert!(!sinr_grid.is_empty());
    let se = sinr_grid.iter().map(|&s| (1.0 + s).log2()).sum::<f64>() / sinr_grid.len() as f64;
    RateReport {
        spectral_efficiency: se,
        rate_bps: se * subcarriers as f64 * subcarrier_spacing_hz,
    }
}

/// Rates for every UAV of a realization under a link state; deselected
/// UAVs report `None`.
pub fn link_rates(
    channel: &ChannelRealization,
    link: &LinkState,
    codebook: &PrecoderCodebook,
) -> Result<Vec<Option<RateReport>>, LinkError> {
    let selected = link.selected();
    if selected.is_empty() {
        return Err(LinkError::EmptySelection);
    }
    let k_count = channel.config.subcarriers;
    let s_count = channel.config.symbols;
    let mut sinr_acc: Vec<Vec<f64>> = vec![Vec::with_capacity(k_count * s_count); selected.len()];
    for k in 0..k_count {
        for s in 0..s_count {
            let h_refs: Vec<&DMatrix<Complex64>> =
                (0..channel.num_uavs()).map(|u| &channel.h[u][k][s]).collect();
            let h_eff = effective_channel(&h_refs, link, codebook)?;
            let g = mmse_equalizer(&h_eff, link.noise_var)?;
            for (slot, sinr) in sinr_per_uav(&g, &h_eff, link.noise_var).into_iter().enumerate() {
                sinr_acc[slot].push(sinr);
            }
        }
    }
    let mut out = vec![None; channel.num_uavs()];
    for (slot, &u) in selected.iter().enumerate() {
        out[u] = Some(achievable_rate(
            &sinr_acc[slot],
            k_count,
            channel.config.subcarrier_spacing_hz,
        ));
    }
    Ok(out)
}

/// What the precoder search maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchObjective {
    /// Each UAV greedily maximizes its own rate given the others.
    PerUavRate,
    /// Coordinate ascent (or joint enumeration) on the sum of rates.
    SumRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Round-robin per-UAV sweeps to a fixed point, at most `max_sweeps`.
    Greedy { max_sweeps: usize },
    /// Full Cartesian enumeration over the selected UAVs' precoders.
    Joint,
    /// Greedy always; joint as well when the product space is small, in
    /// which case the joint answer wins.
    Auto,
}

/// Search result: full per-UAV index vector (deselected UAVs keep their
/// incoming index) plus the objective trace per sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub precoder_idx: Vec<usize>,
    pub objective: f64,
    pub sweep_objectives: Vec<f64>,
}

const JOINT_AUTO_LIMIT: u128 = 4096;
const JOINT_HARD_LIMIT: u128 = 1 << 20;

fn sum_rate(rates: &[Option<RateReport>]) -> f64 {
    rates.iter().flatten().map(|r| r.rate_bps).sum()
}

/// Exhaustively search the codebook for good per-UAV precoders.
pub fn exhaustive_precoder_search(
    channel: &ChannelRealization,
    link: &LinkState,
    codebook: &PrecoderCodebook,
    objective: SearchObjective,
    mode: SearchMode,
) -> Result<SearchOutcome, LinkError> {
    link.validate(codebook.len())?;
    let selected = link.selected();
    match mode {
        SearchMode::Greedy { max_sweeps } => greedy_search(channel, link, codebook, objective, max_sweeps),
        SearchMode::Joint => joint_search(channel, link, codebook, JOINT_HARD_LIMIT),
        SearchMode::Auto => {
            let greedy = greedy_search(channel, link, codebook, objective, 5)?;
            let space = (codebook.len() as u128).pow(selected.len() as u32);
            if space <= JOINT_AUTO_LIMIT {
                joint_search(channel, link, codebook, JOINT_AUTO_LIMIT)
            } else {
                Ok(greedy)
            }
        }
    }
}

fn greedy_search(
    channel: &ChannelRealization,
    link: &LinkState,
    codebook: &PrecoderCodebook,
    objective: SearchObjective,
    max_sweeps: usize,
) -> Result<SearchOutcome, LinkError> {
    let selected = link.selected();
    let mut current = link.clone();
    let mut sweep_objectives = Vec::new();
    for _ in 0..max_sweeps {
        let mut changed = false;
        for &u in &selected {
            let mut best_idx = current.precoder_idx[u];
            let mut best_val = f64::NEG_INFINITY;
            for cand in 0..codebook.len() {
                let mut trial = current.clone();
                trial.precoder_idx[u] = cand;
                let rates = link_rates(channel, &trial, codebook)?;
                let val = match objective {
                    SearchObjective::PerUavRate => rates[u].map(|r| r.rate_bps).unwrap_or(0.0),
                    SearchObjective::SumRate => sum_rate(&rates),
                };
                if val > best_val {
                    best_val = val;
                    best_idx = cand;
                }
            }
            if best_idx != current.precoder_idx[u] {
                current.precoder_idx[u] = best_idx;
                changed = true;
            }
        }
        let rates = link_rates(channel, &current, codebook)?;
        sweep_objectives.push(sum_rate(&rates));
        if !changed {
            break;
        }
    }
    let objective_value = *sweep_objectives.last().expect("at least one sweep");
    Ok(SearchOutcome {
        precoder_idx: current.precoder_idx,
        objective: objective_value,
        sweep_objectives,
    })
}

fn joint_search(
    channel: &ChannelRealization,
    link: &LinkState,
    codebook: &PrecoderCodebook,
    limit: u128,
) -> Result<SearchOutcome, LinkError> {
    let selected = link.selected();
    let space = (codebook.len() as u128).pow(selected.len() as u32);
    if space > limit {
        return Err(LinkError::JointSearchTooLarge(space));
    }
    let mut best = link.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut assignment = vec![0usize; selected.len()];
    loop {
        let mut trial = link.clone();
        for (slot, &u) in selected.iter().enumerate() {
            trial.precoder_idx[u] = assignment[slot];
        }
        let rates = link_rates(channel, &trial, codebook)?;
        let val = sum_rate(&rates);
        if val > best_val {
            best_val = val;
            best = trial;
        }
        // Odometer increment over the assignment vector.
        let mut pos = 0;
        loop {
            if pos == assignment.len() {
                return Ok(SearchOutcome {
                    precoder_idx: best.precoder_idx,
                    objective: best_val,
                    sweep_objectives: vec![best_val],
                });
            }
            assignment[pos] += 1;
            if assignment[pos] < codebook.len() {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}
