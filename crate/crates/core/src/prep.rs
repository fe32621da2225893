//! Per-channel normalization and the crop / flip / brightness / contrast
//! augmentation chain. Images are `(channels, height, width)` arrays.

use log::warn;
use ndarray::{s, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for a channel's standard deviation.
pub const STDDEV_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Stats over plain feature vectors, one "channel" per coordinate.
    pub fn from_vectors<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for v in vectors {
            if n == 0 {
                mean = vec![0.0; v.len()];
                m2 = vec![0.0; v.len()];
            } else if v.len() != mean.len() {
                return Err(Error::DimensionMismatch {
                    expected: mean.len(),
                    actual: v.len(),
                });
            }
            n += 1;
            // Welford update per coordinate.
            for ((m, s), &x) in mean.iter_mut().zip(&mut m2).zip(v) {
                let d = x - *m;
                *m += d / n as f64;
                *s += d * (x - *m);
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput("no vectors for statistics".into()));
        }
        let stddev = m2.iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(finish(mean, stddev))
    }

    pub fn normalize_vector(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.channels() {
            return Err(Error::DimensionMismatch {
                expected: self.channels(),
                actual: v.len(),
            });
        }
        Ok(v.iter()
            .zip(self.mean.iter().zip(&self.stddev))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

fn finish(mean: Vec<f64>, mut stddev: Vec<f64>) -> ChannelStats {
    for (c, s) in stddev.iter_mut().enumerate() {
        if *s < STDDEV_EPSILON {
            warn!("channel {c} has zero variance; clamping stddev to {STDDEV_EPSILON}");
            *s = STDDEV_EPSILON;
        }
    }
    ChannelStats { mean, stddev }
}

/// Population mean and standard deviation per channel over every pixel of
/// every image.
pub fn compute_channel_stats(images: &[Array3<f64>]) -> Result<ChannelStats> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptyInput("no images for channel statistics".into()))?;
    let channels = first.len_of(Axis(0));
    let mut sum = vec![0.0; channels];
    let mut count = 0usize;
    for im in images {
        if im.len_of(Axis(0)) != channels {
            return Err(Error::DimensionMismatch {
                expected: channels,
                actual: im.len_of(Axis(0)),
            });
        }
        for (c, plane) in im.axis_iter(Axis(0)).enumerate() {
            sum[c] += plane.sum();
        }
        count += im.len() / channels.max(1);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut var = vec![0.0; channels];
    for im in images {
        for (c, plane) in im.axis_iter(Axis(0)).enumerate() {
            var[c] += plane.iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let stddev = var.iter().map(|v| (v / count as f64).sqrt()).collect();
    Ok(finish(mean, stddev))
}

fn check_channels(image: &Array3<f64>, stats: &ChannelStats) -> Result<()> {
    let c = image.len_of(Axis(0));
    if c != stats.channels() {
        return Err(Error::DimensionMismatch {
            expected: stats.channels(),
            actual: c,
        });
    }
    Ok(())
}

/// `(x - mean[c]) / stddev[c]` channel-wise.
pub fn normalize(image: &Array3<f64>, stats: &ChannelStats) -> Result<Array3<f64>> {
    check_channels(image, stats)?;
    let mut out = image.clone();
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (m, s) = (stats.mean[c], stats.stddev[c]);
        plane.mapv_inplace(|x| (x - m) / s);
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(image: &Array3<f64>, stats: &ChannelStats) -> Result<Array3<f64>> {
    check_channels(image, stats)?;
    let mut out = image.clone();
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (m, s) = (stats.mean[c], stats.stddev[c]);
        plane.mapv_inplace(|x| x * s + m);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// `(height, width)` of the output window.
    pub crop_size: (usize, usize),
    pub flip_probability: f64,
    /// Additive delta drawn uniformly from this closed interval.
    pub brightness_delta_range: (f64, f64),
    /// Factor drawn uniformly; applied as `mean + factor * (x - mean)`.
    pub contrast_factor_range: (f64, f64),
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            crop_size: (224, 224),
            flip_probability: 0.5,
            brightness_delta_range: (-0.1, 0.1),
            contrast_factor_range: (0.8, 1.2),
        }
    }
}

impl AugmentSpec {
    /// Crop to full size with every random transform disabled.
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            crop_size: (height, width),
            flip_probability: 0.0,
            brightness_delta_range: (0.0, 0.0),
            contrast_factor_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config("flip_probability", "must lie in [0, 1]"));
        }
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.brightness_delta_range) {
            return Err(Error::config("brightness_delta_range", "must be an ordered interval"));
        }
        if !ordered(self.contrast_factor_range) {
            return Err(Error::config("contrast_factor_range", "must be an ordered interval"));
        }
        if self.crop_size.0 == 0 || self.crop_size.1 == 0 {
            return Err(Error::config("crop_size", "must be non-zero"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Mirrors the width axis.
pub fn flip_horizontal(image: &Array3<f64>) -> Array3<f64> {
    image.slice(s![.., .., ..;-1]).to_owned()
}

/// Random crop, then flip, then brightness shift, then per-channel contrast.
/// Values are not clipped.
pub fn augment(image: &Array3<f64>, spec: &AugmentSpec, rng: &mut impl Rng) -> Result<Array3<f64>> {
    spec.validate()?;
    let (_, h, w) = image.dim();
    let (ch, cw) = spec.crop_size;
    if ch > h || cw > w {
        return Err(Error::OutOfRange(format!("crop {ch}x{cw} larger than image {h}x{w}")));
    }
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let mut out = image.slice(s![.., top..top + ch, left..left + cw]).to_owned();

    if rng.random_bool(spec.flip_probability) {
        out = flip_horizontal(&out);
    }
    let delta = uniform(rng, spec.brightness_delta_range);
    let factor = uniform(rng, spec.contrast_factor_range);
    if delta != 0.0 {
        out.mapv_inplace(|x| x + delta);
    }
    if factor != 1.0 {
        for mut plane in out.axis_iter_mut(Axis(0)) {
            let m = plane.mean().unwrap_or(0.0);
            plane.mapv_inplace(|x| m + factor * (x - m));
        }
    }
    Ok(out)
}
