//! Top-K pixel sparsification and sparse-image reconstruction.
//!
//! An importance map is computed onboard (default scorer: channel-mean
//! luminance blended with a 3x3 local standard deviation), scored through
//! a center-excluded 3x3 neighborhood average, and the highest-scoring
//! `floor(kappa * X * Y)` pixels are retained. A wire codec packs the mask
//! bitmap and M-bit quantized values for the simulated uplink, and a
//! Gaussian kernel interpolates the missing pixels on the receiver side.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::DenseImage;

#[derive(Debug, Error, PartialEq)]
pub enum SparsifyError {
    #[error("top-k ratio must lie in (0, 1], got {0}")]
    KappaOutOfRange(f64),
    #[error("score array length {got} does not match image pixel count {want}")]
    ScoreShapeMismatch { got: usize, want: usize },
    #[error("gaussian length scale must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("sparse image retains no pixels")]
    NoRetainedPixels,
    #[error("wire payload is truncated or malformed: {0}")]
    Malformed(String),
    #[error("quantization depth must be in 1..=24 bits, got {0}")]
    InvalidQuantBits(u32),
}

/// Single-channel importance map with the same spatial shape as its source.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ImportanceMap {
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }
}

/// Weight of the luminance term in the default importance scorer; the
/// remainder goes to the local-contrast (standard deviation) term.
const SCORER_LUMINANCE_WEIGHT: f64 = 0.5;

/// Default importance scorer: per-pixel channel-mean luminance blended
/// with the standard deviation of the truncated 3x3 luminance window.
///
/// The blend keeps isolated bright pixels strictly above their neighbors
/// (pure local variance ties them). Deterministic; pluggable via
/// [`importance_map_with`].
pub fn importance_map(image: &DenseImage) -> ImportanceMap {
    let (h, w) = (image.height, image.width);
    let mut lum = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            lum[i * w + j] = image.luminance(i, j);
        }
    }
    let mut values = vec![0.0; h * w];
    let mut window = Vec::with_capacity(9);
    for i in 0..h {
        for j in 0..w {
            window.clear();
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                        continue;
                    }
                    window.push(lum[ni as usize * w + nj as usize]);
                }
            }
            let n = window.len() as f64;
            let mean = window.iter().sum::<f64>() / n;
            // Two-pass variance: exact zero on constant windows.
            let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            values[i * w + j] = SCORER_LUMINANCE_WEIGHT * lum[i * w + j]
                + (1.0 - SCORER_LUMINANCE_WEIGHT) * var.sqrt();
        }
    }
    ImportanceMap { height: h, width: w, values }
}

/// Importance map through a caller-supplied scorer `f(image) -> values`.
pub fn importance_map_with<F>(image: &DenseImage, scorer: F) -> ImportanceMap
where
    F: Fn(&DenseImage) -> Vec<f64>,
{
    let values = scorer(image);
    assert_eq!(values.len(), image.num_pixels(), "scorer changed the spatial shape");
    ImportanceMap { height: image.height, width: image.width, values }
}

/// Center-excluded neighborhood score: mean of the in-bounds 3x3 neighbors
/// minus the center value. Border pixels use truncated neighborhoods
/// (|N| in {3, 5, 8}).
pub fn neighborhood_score(map: &ImportanceMap) -> Vec<f64> {
    let (h, w) = (map.height, map.width);
    let mut scores = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut sum = 0.0;
            let mut n = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                        continue;
                    }
                    sum += map.value(ni as usize, nj as usize);
                    n += 1.0;
                }
            }
            scores[i * w + j] = sum / n - map.value(i, j);
        }
    }
    scores
}

/// Sparsified image: retention mask, retained channel values, and the
/// Top-K ratio that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kappa: f64,
    /// Row-major retention mask; exactly `max(1, floor(kappa * X * Y))`
    /// entries are true.
    pub mask: Vec<bool>,
    /// Values of retained pixels in row-major pixel order, channel
    /// interleaved.
    pub retained: Vec<f64>,
}

impl SparseImage {
    pub fn retained_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Number of pixels retained for ratio `kappa` on an `X x Y` image:
/// `floor(kappa * X * Y)`, clamped to at least one pixel.
pub fn retained_count(height: usize, width: usize, kappa: f64) -> usize {
    (((height * width) as f64 * kappa).floor() as usize).max(1)
}

/// Select the `floor(kappa * X * Y)` pixels with the largest scores.
///
/// Ties at the cut are broken by ascending row-major pixel index, which
/// makes selections nested across increasing `kappa`.
pub fn top_k_select(
    image: &DenseImage,
    scores: &[f64],
    kappa: f64,
) -> Result<SparseImage, SparsifyError> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(SparsifyError::KappaOutOfRange(kappa));
    }
    if scores.len() != image.num_pixels() {
        return Err(SparsifyError::ScoreShapeMismatch {
            got: scores.len(),
            want: image.num_pixels(),
        });
    }
    let k = retained_count(image.height, image.width, kappa);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
    });
    let mut mask = vec![false; scores.len()];
    for &idx in order.iter().take(k) {
        mask[idx] = true;
    }
    let mut retained = Vec::with_capacity(k * image.channels);
    for (pix, &keep) in mask.iter().enumerate() {
        if keep {
            let base = pix * image.channels;
            retained.extend_from_slice(&image.values[base..base + image.channels]);
        }
    }
    Ok(SparseImage {
        height: image.height,
        width: image.width,
        channels: image.channels,
        kappa,
        mask,
        retained,
    })
}

/// Side window (in pixels) of the Gaussian interpolation neighborhood:
/// a 5x5 window including the center, wider than the 3x3 scoring window
/// so that 25% retention rarely leaves a pixel without support.
const RECONSTRUCT_RADIUS: i64 = 2;

/// Reconstruction diagnostics: pixels that had no retained neighbor and
/// fell back to the global mean of retained values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReconstructStats {
    pub fallback_pixels: usize,
}

/// Fill missing pixels by a normalized Gaussian-weighted average of the
/// retained pixels inside the 5x5 neighborhood; retained pixels pass
/// through verbatim.
///
/// The returned image carries no instance labels (all background): the
/// receiver reconstructs values only.
pub fn gaussian_reconstruct(
    sparse: &SparseImage,
    sigma: f64,
    quant_bits: u32,
) -> Result<(DenseImage, ReconstructStats), SparsifyError> {
    if sigma <= 0.0 {
        return Err(SparsifyError::InvalidSigma(sigma));
    }
    let (h, w, c) = (sparse.height, sparse.width, sparse.channels);
    let total_retained = sparse.retained_pixels();
    if total_retained == 0 {
        return Err(SparsifyError::NoRetainedPixels);
    }
    // Map pixel index -> offset into `retained`.
    let mut retained_offset = vec![usize::MAX; h * w];
    let mut next = 0;
    for (pix, &keep) in sparse.mask.iter().enumerate() {
        if keep {
            retained_offset[pix] = next;
            next += c;
        }
    }
    let mut global_mean = vec![0.0; c];
    for (pix, &keep) in sparse.mask.iter().enumerate() {
        if keep {
            let off = retained_offset[pix];
            for ch in 0..c {
                global_mean[ch] += sparse.retained[off + ch];
            }
        }
    }
    for m in &mut global_mean {
        *m /= total_retained as f64;
    }

    let mut out = DenseImage::constant(h, w, c, quant_bits, 0.0);
    let mut stats = ReconstructStats::default();
    let two_sigma_sq = 2.0 * sigma * sigma;
    for i in 0..h {
        for j in 0..w {
            let pix = i * w + j;
            if sparse.mask[pix] {
                let off = retained_offset[pix];
                for ch in 0..c {
                    out.set_value(i, j, ch, sparse.retained[off + ch]);
                }
                continue;
            }
            let mut weight_sum = 0.0;
            let mut acc = vec![0.0; c];
            for di in -RECONSTRUCT_RADIUS..=RECONSTRUCT_RADIUS {
                for dj in -RECONSTRUCT_RADIUS..=RECONSTRUCT_RADIUS {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                        continue;
                    }
                    let npix = ni as usize * w + nj as usize;
                    if !sparse.mask[npix] {
                        continue;
                    }
                    let d_sq = (di * di + dj * dj) as f64;
                    let weight = (-d_sq / two_sigma_sq).exp();
                    let off = retained_offset[npix];
                    for ch in 0..c {
                        acc[ch] += weight * sparse.retained[off + ch];
                    }
                    weight_sum += weight;
                }
            }
            if weight_sum > 0.0 {
                for ch in 0..c {
                    out.set_value(i, j, ch, acc[ch] / weight_sum);
                }
            } else {
                stats.fallback_pixels += 1;
                for ch in 0..c {
                    out.set_value(i, j, ch, global_mean[ch]);
                }
            }
        }
    }
    Ok((out, stats))
}

/// Payload size of a sparsified image in bits: retained pixels times
/// channels times quantization depth. The wire header and mask bitmap are
/// excluded from this accounting.
pub fn data_size(sparse: &SparseImage, bits_per_sample: u32) -> u64 {
    sparse.retained_pixels() as u64 * sparse.channels as u64 * bits_per_sample as u64
}

pub mod wire {
    //! Uplink wire format for [`SparseImage`].
    //!
    //! Layout: an 18-byte header (`height: u16, width: u16, channels: u8,
    //! bits_per_sample: u8, kappa: f64 LE, retained count: u32`), followed
    //! by one continuous bitstream holding the row-major retention bitmap
    //! (`X * Y` bits) and the retained samples (`count * C` values of
    //! `bits_per_sample` bits each, MSB first). The final byte is
    //! zero-padded.
    //!
    //! The per-image overhead beyond the quantized payload is therefore
    //! the fixed `144 + X * Y` bits reported by [`overhead_bits`].

    use super::{data_size, SparseImage, SparsifyError};

    /// Header size in bits.
    pub const HEADER_BITS: u64 = 144;

    /// Fixed per-image overhead in bits for the given resolution.
    pub fn overhead_bits(height: usize, width: usize) -> u64 {
        HEADER_BITS + (height * width) as u64
    }

    /// Total logical bits on the wire (header + mask bitmap + payload).
    pub fn wire_bits(sparse: &SparseImage, bits_per_sample: u32) -> u64 {
        overhead_bits(sparse.height, sparse.width) + data_size(sparse, bits_per_sample)
    }

    struct BitWriter {
        bytes: Vec<u8>,
        bit: u8,
    }

    impl BitWriter {
        fn new(bytes: Vec<u8>) -> Self {
            Self { bytes, bit: 0 }
        }

        fn push_bits(&mut self, value: u32, n_bits: u32) {
            for k in (0..n_bits).rev() {
                let bit = ((value >> k) & 1) as u8;
                if self.bit == 0 {
                    self.bytes.push(0);
                }
                let last = self.bytes.last_mut().unwrap();
                *last |= bit << (7 - self.bit);
                self.bit = (self.bit + 1) % 8;
            }
        }
    }

    struct BitReader<'a> {
        bytes: &'a [u8],
        pos: u64,
    }

    impl<'a> BitReader<'a> {
        fn read_bits(&mut self, n_bits: u32) -> Result<u32, SparsifyError> {
            let mut out = 0u32;
            for _ in 0..n_bits {
                let byte = (self.pos / 8) as usize;
                if byte >= self.bytes.len() {
                    return Err(SparsifyError::Malformed("bitstream truncated".into()));
                }
                let shift = 7 - (self.pos % 8) as u32;
                out = (out << 1) | ((self.bytes[byte] >> shift) & 1) as u32;
                self.pos += 1;
            }
            Ok(out)
        }
    }

    /// Encode a sparse image for transmission.
    pub fn encode(sparse: &SparseImage, bits_per_sample: u32) -> Result<Vec<u8>, SparsifyError> {
        if !(1..=24).contains(&bits_per_sample) {
            return Err(SparsifyError::InvalidQuantBits(bits_per_sample));
        }
        let count = sparse.retained_pixels() as u32;
        let mut header = Vec::with_capacity(18);
        header.extend_from_slice(&(sparse.height as u16).to_le_bytes());
        header.extend_from_slice(&(sparse.width as u16).to_le_bytes());
        header.push(sparse.channels as u8);
        header.push(bits_per_sample as u8);
        header.extend_from_slice(&sparse.kappa.to_le_bytes());
        header.extend_from_slice(&count.to_le_bytes());
        debug_assert_eq!(header.len() as u64 * 8, HEADER_BITS);

        let levels = ((1u64 << bits_per_sample) - 1) as f64;
        let mut writer = BitWriter::new(header);
        for &keep in &sparse.mask {
            writer.push_bits(keep as u32, 1);
        }
        for &v in &sparse.retained {
            let q = (v.clamp(0.0, 1.0) * levels).round() as u32;
            writer.push_bits(q, bits_per_sample);
        }
        Ok(writer.bytes)
    }

    /// Decode a wire buffer back into a [`SparseImage`].
    pub fn decode(bytes: &[u8]) -> Result<SparseImage, SparsifyError> {
        if bytes.len() < 18 {
            return Err(SparsifyError::Malformed("header truncated".into()));
        }
        let height = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        let width = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
        let channels = bytes[4] as usize;
        let bits_per_sample = bytes[5] as u32;
        if !(1..=24).contains(&bits_per_sample) {
            return Err(SparsifyError::InvalidQuantBits(bits_per_sample));
        }
        let kappa = f64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let count = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
        if channels == 0 || height == 0 || width == 0 {
            return Err(SparsifyError::Malformed("empty image dimensions".into()));
        }

        let mut reader = BitReader { bytes: &bytes[18..], pos: 0 };
        let mut mask = vec![false; height * width];
        let mut seen = 0usize;
        for m in mask.iter_mut() {
            *m = reader.read_bits(1)? == 1;
            seen += *m as usize;
        }
        if seen != count {
            return Err(SparsifyError::Malformed(format!(
                "mask population {seen} disagrees with header count {count}"
            )));
        }
        let levels = ((1u64 << bits_per_sample) - 1) as f64;
        let mut retained = Vec::with_capacity(count * channels);
        for _ in 0..count * channels {
            let q = reader.read_bits(bits_per_sample)?;
            retained.push(q as f64 / levels);
        }
        Ok(SparseImage { height, width, channels, kappa, mask, retained })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> DenseImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = DenseImage::constant(h, w, c, 8, 0.0);
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let q: u32 = rng.random_range(0..256);
                    img.set_value(i, j, ch, q as f64 / 255.0);
                }
            }
        }
        img
    }

    // Independent scalar reimplementation of the default scorer.
    fn scorer_oracle(img: &DenseImage) -> Vec<f64> {
        let (h, w) = (img.height, img.width);
        let mut out = vec![0.0; h * w];
        for i in 0..h as i64 {
            for j in 0..w as i64 {
                let mut window = Vec::new();
                for ni in i - 1..=i + 1 {
                    for nj in j - 1..=j + 1 {
                        if ni >= 0 && nj >= 0 && ni < h as i64 && nj < w as i64 {
                            window.push(img.luminance(ni as usize, nj as usize));
                        }
                    }
                }
                let mean = window.iter().sum::<f64>() / window.len() as f64;
                let var =
                    window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / window.len() as f64;
                out[(i * w as i64 + j) as usize] =
                    0.5 * img.luminance(i as usize, j as usize) + 0.5 * var.sqrt();
            }
        }
        out
    }

    #[test]
    fn constant_image_has_constant_importance() {
        let img = DenseImage::constant(6, 9, 3, 8, 0.4);
        let map = importance_map(&img);
        for &v in &map.values {
            assert_relative_eq!(v, map.values[0], epsilon = 1e-15);
        }
    }

    #[test]
    fn single_bright_pixel_is_strictly_maximal() {
        let mut img = DenseImage::constant(5, 5, 1, 8, 0.0);
        img.set_value(2, 2, 0, 1.0);
        let map = importance_map(&img);
        let center = map.value(2, 2);
        for i in 0..5 {
            for j in 0..5 {
                if (i, j) != (2, 2) {
                    assert!(
                        map.value(i, j) < center,
                        "({}, {}) = {} not below center {}",
                        i,
                        j,
                        map.value(i, j),
                        center
                    );
                }
            }
        }
        // Hand evaluation on the 5x5: the center window holds one 1 among
        // nine samples, so var = 8/81 and S = 0.5 + 0.5*sqrt(8)/9.
        assert_relative_eq!(center, 0.5 + 0.5 * (8.0f64).sqrt() / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn importance_map_is_deterministic_and_matches_oracle() {
        let img = random_image(7, 11, 3, 5);
        let a = importance_map(&img);
        let b = importance_map(&img);
        assert_eq!(a, b);
        let oracle = scorer_oracle(&img);
        for (got, want) in a.values.iter().zip(oracle.iter()) {
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn pluggable_scorer_is_used() {
        let img = random_image(4, 4, 1, 9);
        let map = importance_map_with(&img, |im| {
            (0..im.num_pixels()).map(|p| p as f64).collect()
        });
        assert_eq!(map.value(0, 0), 0.0);
        assert_eq!(map.value(3, 3), 15.0);
    }

    #[test]
    fn constant_map_scores_zero() {
        let map = ImportanceMap { height: 4, width: 5, values: vec![0.7; 20] };
        for s in neighborhood_score(&map) {
            assert_relative_eq!(s, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_center_surrounded_by_ones_scores_one() {
        let mut values = vec![1.0; 9];
        values[4] = 0.0;
        let map = ImportanceMap { height: 3, width: 3, values };
        let scores = neighborhood_score(&map);
        assert_relative_eq!(scores[4], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn neighborhood_score_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let map = ImportanceMap { height: 4, width: 4, values: values.clone() };
        let got = neighborhood_score(&map);
        for i in 0..4i64 {
            for j in 0..4i64 {
                let mut sum = 0.0;
                let mut n = 0.0;
                for ni in i - 1..=i + 1 {
                    for nj in j - 1..=j + 1 {
                        if (ni, nj) == (i, j) || ni < 0 || nj < 0 || ni > 3 || nj > 3 {
                            continue;
                        }
                        sum += values[(ni * 4 + nj) as usize];
                        n += 1.0;
                    }
                }
                let want = sum / n - values[(i * 4 + j) as usize];
                assert_eq!(got[(i * 4 + j) as usize], want, "mismatch at ({i},{j})");
            }
        }
    }

    #[test]
    fn border_neighborhood_sizes() {
        // 3x3 ones with a probe at each position class: corner (3
        // neighbors), edge (5), interior (8). Scores must be exactly the
        // truncated means.
        let mut values = vec![0.0; 9];
        values[0] = 9.0; // corner contributes 9/n to its neighbors
        let map = ImportanceMap { height: 3, width: 3, values };
        let scores = neighborhood_score(&map);
        // Corner (0,0): neighbors (0,1),(1,0),(1,1) all zero -> -9.
        assert_relative_eq!(scores[0], -9.0, epsilon = 1e-12);
        // Edge (0,1): 5 neighbors, one of them is the 9 -> 9/5.
        assert_relative_eq!(scores[1], 9.0 / 5.0, epsilon = 1e-12);
        // Interior (1,1): 8 neighbors -> 9/8.
        assert_relative_eq!(scores[4], 9.0 / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn kappa_one_retains_everything() {
        let img = random_image(6, 8, 2, 3);
        let scores = neighborhood_score(&importance_map(&img));
        let sparse = top_k_select(&img, &scores, 1.0).unwrap();
        assert_eq!(sparse.retained_pixels(), 48);
        assert!(sparse.mask.iter().all(|&m| m));
        assert_eq!(sparse.retained, img.values);
    }

    #[test]
    fn minimal_kappa_selects_single_argmax() {
        let img = random_image(4, 4, 1, 21);
        let mut scores = vec![0.0; 16];
        scores[9] = 5.0;
        let sparse = top_k_select(&img, &scores, 1.0 / 16.0).unwrap();
        assert_eq!(sparse.retained_pixels(), 1);
        assert!(sparse.mask[9]);
    }

    #[test]
    fn tiny_kappa_is_clamped_to_one_pixel() {
        let img = random_image(4, 4, 1, 21);
        let scores = vec![0.0; 16];
        let sparse = top_k_select(&img, &scores, 1e-6).unwrap();
        assert_eq!(sparse.retained_pixels(), 1);
    }

    #[test]
    fn kappa_out_of_range_is_rejected() {
        let img = random_image(2, 2, 1, 0);
        let scores = vec![0.0; 4];
        assert_eq!(
            top_k_select(&img, &scores, 0.0).unwrap_err(),
            SparsifyError::KappaOutOfRange(0.0)
        );
        assert_eq!(
            top_k_select(&img, &scores, 1.5).unwrap_err(),
            SparsifyError::KappaOutOfRange(1.5)
        );
    }

    #[test]
    fn three_way_tie_breaks_row_major_against_sort_oracle() {
        let img = random_image(3, 3, 1, 7);
        // Indices 2, 5, 7 tie at the cut below the two clear winners.
        let scores = vec![0.0, 9.0, 5.0, 0.0, 8.0, 5.0, 0.0, 5.0, 0.0];
        let sparse = top_k_select(&img, &scores, 4.0 / 9.0).unwrap();
        // Full-sort oracle with explicit (score desc, index asc) ordering.
        let mut order: Vec<usize> = (0..9).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut want = vec![false; 9];
        for &i in order.iter().take(4) {
            want[i] = true;
        }
        assert_eq!(sparse.mask, want);
        assert!(sparse.mask[2] && sparse.mask[5], "row-major tie break");
        assert!(!sparse.mask[7]);
    }

    #[test]
    fn reconstruction_is_lossless_at_full_retention() {
        let img = random_image(6, 7, 3, 13);
        let scores = neighborhood_score(&importance_map(&img));
        let sparse = top_k_select(&img, &scores, 1.0).unwrap();
        let (recon, stats) = gaussian_reconstruct(&sparse, 1.0, 8).unwrap();
        assert_eq!(recon.values, img.values);
        assert_eq!(stats.fallback_pixels, 0);
    }

    #[test]
    fn uniform_retained_neighbors_reconstruct_their_value() {
        // All retained pixels share value v: any interpolated pixel is a
        // convex combination and must equal v for any sigma.
        let mut img = DenseImage::constant(5, 5, 1, 8, 0.25);
        img.set_value(2, 2, 0, 0.25);
        let mut mask = vec![true; 25];
        mask[12] = false;
        let sparse = SparseImage {
            height: 5,
            width: 5,
            channels: 1,
            kappa: 24.0 / 25.0,
            mask,
            retained: vec![0.25; 24],
        };
        for sigma in [0.3, 1.0, 4.0] {
            let (recon, _) = gaussian_reconstruct(&sparse, sigma, 8).unwrap();
            assert_relative_eq!(recon.value(2, 2, 0), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_neighbor_hand_case() {
        // Retained neighbors at distance 1 (value 0) and sqrt(2) (value 1),
        // sigma = 1: output = e^{-1} / (e^{-0.5} + e^{-1}).
        let mut mask = vec![false; 9];
        mask[5] = true; // (1, 2): distance 1 from center (1, 1)
        mask[8] = true; // (2, 2): distance sqrt(2)
        let sparse = SparseImage {
            height: 3,
            width: 3,
            channels: 1,
            kappa: 2.0 / 9.0,
            mask,
            retained: vec![0.0, 1.0],
        };
        let (recon, _) = gaussian_reconstruct(&sparse, 1.0, 8).unwrap();
        let want = (-1.0f64).exp() / ((-0.5f64).exp() + (-1.0f64).exp());
        assert_relative_eq!(recon.value(1, 1, 0), want, epsilon = 1e-12);
        assert_relative_eq!(recon.value(1, 1, 0), 0.3775, epsilon = 1e-4);
    }

    #[test]
    fn empty_neighborhood_falls_back_to_global_mean() {
        // One retained pixel in a corner of a big image: far pixels have
        // no retained neighbor in the 5x5 window.
        let mut mask = vec![false; 100];
        mask[0] = true;
        let sparse = SparseImage {
            height: 10,
            width: 10,
            channels: 1,
            kappa: 0.01,
            mask,
            retained: vec![0.8],
        };
        let (recon, stats) = gaussian_reconstruct(&sparse, 1.0, 8).unwrap();
        assert!(stats.fallback_pixels > 0);
        assert_relative_eq!(recon.value(9, 9, 0), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn invalid_sigma_is_rejected() {
        let img = random_image(3, 3, 1, 1);
        let scores = vec![0.0; 9];
        let sparse = top_k_select(&img, &scores, 1.0).unwrap();
        assert_eq!(
            gaussian_reconstruct(&sparse, 0.0, 8).unwrap_err(),
            SparsifyError::InvalidSigma(0.0)
        );
    }

    #[test]
    fn data_size_matches_hand_computation() {
        // 224x480, C = 3, M = 8, kappa = 0.25 -> 26,880 pixels -> 645,120 bits.
        let img = DenseImage::constant(224, 480, 3, 8, 0.0);
        let scores = vec![0.0; 224 * 480];
        let sparse = top_k_select(&img, &scores, 0.25).unwrap();
        assert_eq!(sparse.retained_pixels(), 26_880);
        assert_eq!(data_size(&sparse, 8), 645_120);
    }

    #[test]
    fn data_size_trivial_and_linear_in_depth() {
        let img = DenseImage::constant(1, 1, 1, 8, 0.0);
        let sparse = top_k_select(&img, &[0.0], 1.0).unwrap();
        assert_eq!(data_size(&sparse, 8), 8);
        assert_eq!(data_size(&sparse, 16), 16);
    }

    #[test]
    fn wire_round_trip_is_identity() {
        let img = random_image(9, 13, 3, 77);
        let scores = neighborhood_score(&importance_map(&img));
        for kappa in [0.05, 0.25, 0.6, 1.0] {
            let sparse = top_k_select(&img, &scores, kappa).unwrap();
            let bytes = wire::encode(&sparse, 8).unwrap();
            let back = wire::decode(&bytes).unwrap();
            assert_eq!(back, sparse);
            assert_eq!(
                wire::wire_bits(&sparse, 8),
                data_size(&sparse, 8) + wire::overhead_bits(9, 13)
            );
            // Byte buffer length matches the logical bit count, padded.
            assert_eq!(bytes.len() as u64, 18 + (wire::wire_bits(&sparse, 8) - 144).div_ceil(8));
        }
    }

    #[test]
    fn wire_decode_rejects_truncation() {
        let img = random_image(5, 5, 1, 3);
        let scores = vec![0.0; 25];
        let sparse = top_k_select(&img, &scores, 0.5).unwrap();
        let bytes = wire::encode(&sparse, 8).unwrap();
        assert!(matches!(
            wire::decode(&bytes[..10]).unwrap_err(),
            SparsifyError::Malformed(_)
        ));
        assert!(matches!(
            wire::decode(&bytes[..bytes.len() - 2]).unwrap_err(),
            SparsifyError::Malformed(_)
        ));
    }

    #[test]
    fn wire_round_trip_odd_bit_depth() {
        // 5-bit samples exercise non-byte-aligned packing.
        let mut img = DenseImage::constant(4, 6, 2, 5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..4 {
            for j in 0..6 {
                for ch in 0..2 {
                    let q: u32 = rng.random_range(0..32);
                    img.set_value(i, j, ch, q as f64 / 31.0);
                }
            }
        }
        let scores = neighborhood_score(&importance_map(&img));
        let sparse = top_k_select(&img, &scores, 0.4).unwrap();
        let bytes = wire::encode(&sparse, 5).unwrap();
        assert_eq!(wire::decode(&bytes).unwrap(), sparse);
    }

    proptest! {
        // Nested selection: kappa1 <= kappa2 implies mask(kappa1) is a
        // subset of mask(kappa2) for the same scores.
        #[test]
        fn prop_masks_are_nested(seed in 0u64..200, k1 in 0.01f64..1.0, k2 in 0.01f64..1.0) {
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let img = random_image(8, 8, 1, seed);
            let scores = neighborhood_score(&importance_map(&img));
            let a = top_k_select(&img, &scores, lo).unwrap();
            let b = top_k_select(&img, &scores, hi).unwrap();
            for (ma, mb) in a.mask.iter().zip(b.mask.iter()) {
                prop_assert!(!ma || *mb, "selection not nested");
            }
        }

        // data_size follows the floor formula over a parameter sweep.
        #[test]
        fn prop_data_size_formula(
            h in 1usize..20,
            w in 1usize..20,
            c in 1usize..4,
            m in 1u32..16,
            kappa in 0.01f64..1.0,
        ) {
            let img = DenseImage::constant(h, w, c, 8, 0.1);
            let scores = vec![0.0; h * w];
            let sparse = top_k_select(&img, &scores, kappa).unwrap();
            let expected_pixels = (((h * w) as f64 * kappa).floor() as u64).max(1);
            prop_assert_eq!(data_size(&sparse, m), expected_pixels * c as u64 * m as u64);
        }

        // data_size is monotone in kappa.
        #[test]
        fn prop_data_size_monotone(k1 in 0.01f64..1.0, k2 in 0.01f64..1.0) {
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let img = DenseImage::constant(12, 12, 3, 8, 0.1);
            let scores = vec![0.0; 144];
            let a = top_k_select(&img, &scores, lo).unwrap();
            let b = top_k_select(&img, &scores, hi).unwrap();
            prop_assert!(data_size(&a, 8) <= data_size(&b, 8));
        }
    }
}
