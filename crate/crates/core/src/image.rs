//! Dense multi-channel images with per-pixel instance labels.
//!
//! Pixel `(i, j)` indexes row `i` (the image X axis, `0..height`) and
//! column `j` (the image Y axis, `0..width`). Instance id 0 is background;
//! vehicle instances use dense ids starting at 1.

use serde::{Deserialize, Serialize};

/// A rendered camera view: `channels` value planes plus an instance-id map.
///
/// Values are stored row-major, pixel-interleaved: the sample for pixel
/// `(i, j)` channel `c` lives at `(i * width + j) * channels + c`. Values
/// are expected to sit on the `quant_bits` quantization grid
/// `n / (2^quant_bits - 1)` so that wire transfer is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Quantization depth the values were rendered at (bits per sample).
    pub quant_bits: u32,
    pub values: Vec<f64>,
    pub instance_ids: Vec<u32>,
}

impl DenseImage {
    /// All-background image filled with a constant value on every channel.
    pub fn constant(height: usize, width: usize, channels: usize, quant_bits: u32, value: f64) -> Self {
        assert!(channels >= 1, "image needs at least one channel");
        Self {
            height,
            width,
            channels,
            quant_bits,
            values: vec![value; height * width * channels],
            instance_ids: vec![0; height * width],
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel_index(&self, i: usize, j: usize) -> usize {
        i * self.width + j
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[(i * self.width + j) * self.channels + c]
    }

    #[inline]
    pub fn set_value(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.values[(i * self.width + j) * self.channels + c] = v;
    }

    #[inline]
    pub fn instance_id(&self, i: usize, j: usize) -> u32 {
        self.instance_ids[i * self.width + j]
    }

    #[inline]
    pub fn set_instance_id(&mut self, i: usize, j: usize, id: u32) {
        self.instance_ids[i * self.width + j] = id;
    }

    /// Channel-mean luminance of a pixel.
    #[inline]
    pub fn luminance(&self, i: usize, j: usize) -> f64 {
        let base = (i * self.width + j) * self.channels;
        let mut sum = 0.0;
        for c in 0..self.channels {
            sum += self.values[base + c];
        }
        sum / self.channels as f64
    }

    /// Fraction of pixels carrying a non-background instance id.
    pub fn foreground_fraction(&self) -> f64 {
        if self.instance_ids.is_empty() {
            return 0.0;
        }
        let fg = self.instance_ids.iter().filter(|&&id| id != 0).count();
        fg as f64 / self.instance_ids.len() as f64
    }

    /// Number of distinct non-background instances visible in the view.
    pub fn visible_instances(&self) -> usize {
        let mut ids: Vec<u32> = self.instance_ids.iter().copied().filter(|&id| id != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Snap a value onto the `quant_bits` grid (round to nearest level).
    pub fn quantize(value: f64, quant_bits: u32) -> f64 {
        let levels = ((1u64 << quant_bits) - 1) as f64;
        (value.clamp(0.0, 1.0) * levels).round() / levels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_background() {
        let img = DenseImage::constant(4, 6, 3, 8, 0.5);
        assert_eq!(img.num_pixels(), 24);
        assert_eq!(img.foreground_fraction(), 0.0);
        assert_eq!(img.visible_instances(), 0);
        assert_eq!(img.luminance(2, 3), 0.5);
    }

    #[test]
    fn quantize_round_trips_grid_values() {
        for n in [0u64, 1, 17, 128, 255] {
            let v = n as f64 / 255.0;
            assert_eq!(DenseImage::quantize(v, 8), v);
        }
        assert_eq!(DenseImage::quantize(1.7, 8), 1.0);
        assert_eq!(DenseImage::quantize(-0.2, 8), 0.0);
    }

    #[test]
    fn foreground_accounting() {
        let mut img = DenseImage::constant(2, 2, 1, 8, 0.0);
        img.set_instance_id(0, 0, 3);
        img.set_instance_id(1, 1, 3);
        img.set_instance_id(0, 1, 5);
        assert_eq!(img.foreground_fraction(), 0.75);
        assert_eq!(img.visible_instances(), 2);
    }
}
