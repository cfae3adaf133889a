use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::PixelGrid;
use crate::{rng, Error, Result};

/// Pretraining augmentations for square RGB images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Horizontal flip with probability 1/2.
    pub mirror: bool,
    /// Random crop covering an area fraction drawn from `[lo, hi]`, resized back.
    pub crop_scale: Option<(f64, f64)>,
    /// Per-channel gain drawn from `[1 - j, 1 + j]`; 0 disables jitter.
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            mirror: false,
            crop_scale: None,
            jitter: 0.0,
        }
    }

    /// Mirror, crops with scale in `[0.3, 1]`, and 0.2 jitter.
    pub fn standard() -> Self {
        Self {
            mirror: true,
            crop_scale: Some((0.3, 1.0)),
            jitter: 0.2,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.mirror && self.crop_scale.is_none() && self.jitter == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.crop_scale {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::invalid(format!(
                    "crop scale range [{lo}, {hi}] is empty or non-positive"
                )));
            }
            if hi > 1.0 {
                return Err(Error::invalid(format!(
                    "crop scale {hi} is larger than the image"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(Error::invalid(format!(
                "jitter {} not in [0, 1]",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Flips `h × w × 3` pixels left to right in place.
pub fn mirror_in_place(pixels: &mut [f64], h: usize, w: usize) {
    for y in 0..h {
        let row = &mut pixels[y * w * 3..(y + 1) * w * 3];
        for x in 0..w / 2 {
            for c in 0..3 {
                row.swap(x * 3 + c, (w - 1 - x) * 3 + c);
            }
        }
    }
}

/// Bilinear resample of the window `(top, left, ch, cw)` back to `h × w`.
fn crop_resize(
    pixels: &[f64],
    h: usize,
    w: usize,
    top: f64,
    left: f64,
    ch: f64,
    cw: f64,
) -> Vec<f64> {
    let at = |y: usize, x: usize, c: usize| pixels[(y * w + x) * 3 + c];
    let mut out = vec![0.0; pixels.len()];
    for y in 0..h {
        let sy = (top + (y as f64 + 0.5) * ch / h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..w {
            let sx = (left + (x as f64 + 0.5) * cw / w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
            let x1 = (x0 + 1).min(w - 1);
            for c in 0..3 {
                let top_row = at(y0, x0, c) * (1.0 - fx) + at(y0, x1, c) * fx;
                let bottom = at(y1, x0, c) * (1.0 - fx) + at(y1, x1, c) * fx;
                out[(y * w + x) * 3 + c] = top_row * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Applies mirror, crop and jitter in that order to an `h × w × 3` image.
/// Deterministic given `seed`.
pub fn augment_slice(
    pixels: &mut [f64],
    h: usize,
    w: usize,
    config: &AugmentConfig,
    seed: u64,
) -> Result<()> {
    config.validate()?;
    if pixels.len() != h * w * 3 {
        return Err(Error::shape(format!(
            "{} values for a {h}x{w}x3 image",
            pixels.len()
        )));
    }
    let mut r = rng::rng(seed);
    if config.mirror && r.random_bool(0.5) {
        mirror_in_place(pixels, h, w);
    }
    if let Some((lo, hi)) = config.crop_scale {
        let scale = if hi > lo { r.random_range(lo..=hi) } else { lo };
        let side = scale.sqrt();
        let (ch, cw) = (side * h as f64, side * w as f64);
        let top = r.random_range(0.0..=(h as f64 - ch));
        let left = r.random_range(0.0..=(w as f64 - cw));
        let out = crop_resize(pixels, h, w, top, left, ch, cw);
        pixels.copy_from_slice(&out);
    }
    if config.jitter > 0.0 {
        let j = config.jitter;
        let gains: [f64; 3] = std::array::from_fn(|_| r.random_range(1.0 - j..=1.0 + j));
        for px in pixels.chunks_exact_mut(3) {
            for (v, g) in px.iter_mut().zip(gains) {
                *v = (*v * g).clamp(0.0, 1.0);
            }
        }
    }
    Ok(())
}

pub fn augment(pixels: &PixelGrid, config: &AugmentConfig, seed: u64) -> Result<PixelGrid> {
    let mut data: Vec<f64> = pixels.as_slice().iter().map(|&v| v as f64).collect();
    augment_slice(&mut data, pixels.height(), pixels.width(), config, seed)?;
    PixelGrid::new(
        pixels.height(),
        pixels.width(),
        data.into_iter().map(|v| v as f32).collect(),
    )
}
