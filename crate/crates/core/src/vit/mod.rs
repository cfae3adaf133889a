//! A tiny Vision Transformer: patch embedding, class token, learned position
//! embeddings, pre-norm encoder blocks and an optional linear head, with a
//! hand-written backward pass.

mod layers;
mod model;

pub use layers::{gelu, gelu_grad, Attention, AttnCache, AttnGrads, LayerNorm, LnCache, LN_EPS};
pub use model::{Block, BlockCache, VitCache, VitModel};

use serde::{Deserialize, Serialize};

use crate::corpus::PixelGrid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Final-norm class token.
    #[default]
    ClassToken,
    /// Mean of the final-norm patch tokens.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub mlp_dim: usize,
    /// Head width; 0 means headless.
    pub n_classes: usize,
    #[serde(default)]
    pub pooling: Pooling,
}

impl VitConfig {
    /// ViT-Base with 16×16 patches at 224 pixels, headless.
    pub fn vit_b16() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            layers: 12,
            heads: 12,
            hidden_dim: 768,
            mlp_dim: 3072,
            n_classes: 0,
            pooling: Pooling::ClassToken,
        }
    }

    /// ViT-Base with 32×32 patches at 224 pixels, headless.
    pub fn vit_b32() -> Self {
        Self {
            patch_size: 32,
            ..Self::vit_b16()
        }
    }

    /// Desk-scale default: 32-pixel images, 8-pixel patches, 2 layers of width 64.
    pub fn desk(n_classes: usize) -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            layers: 2,
            heads: 4,
            hidden_dim: 64,
            mlp_dim: 128,
            n_classes,
            pooling: Pooling::ClassToken,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 || self.hidden_dim == 0 || self.heads == 0 {
            return Err(Error::invalid("vit sizes must be positive"));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::invalid(format!(
                "patch size {} does not divide image size {}",
                self.patch_size, self.image_size
            )));
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden dim {} not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if self.layers > 0 && self.mlp_dim == 0 {
            return Err(Error::invalid("mlp_dim must be positive"));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    /// Patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn input_dim(&self) -> usize {
        self.image_size * self.image_size * 3
    }
}

/// Closed-form parameter count.
pub fn vit_param_count(config: &VitConfig) -> usize {
    let d = config.hidden_dim;
    let m = config.mlp_dim;
    let patch = config.patch_dim() * d + d;
    let cls = d;
    let pos = config.seq_len() * d;
    let per_layer = 2 * d // norm 1
        + d * 3 * d + 2 * d // qkv (no key bias)
        + d * d + d // attention output
        + 2 * d // norm 2
        + d * m + m // mlp in
        + m * d + d; // mlp out
    let final_norm = 2 * d;
    let head = if config.n_classes > 0 {
        d * config.n_classes + config.n_classes
    } else {
        0
    };
    patch + cls + pos + config.layers * per_layer + final_norm + head
}

/// Splits an `h × w × 3` row-major image into row-major patches of
/// `patch² · 3` values each (rows within a patch, then columns, then channels).
pub fn patchify_slice(pixels: &[f64], h: usize, w: usize, patch: usize) -> Result<Vec<f64>> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(format!(
            "patch size {patch} does not divide {h}x{w}"
        )));
    }
    if pixels.len() != h * w * 3 {
        return Err(Error::shape(format!(
            "{} values for a {h}x{w}x3 image",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(pixels.len());
    for py in 0..h / patch {
        for px in 0..w / patch {
            for y in 0..patch {
                let row = (py * patch + y) * w + px * patch;
                out.extend_from_slice(&pixels[row * 3..(row + patch) * 3]);
            }
        }
    }
    Ok(out)
}

pub fn patchify(pixels: &PixelGrid, patch: usize) -> Result<Vec<Vec<f64>>> {
    let data: Vec<f64> = pixels.as_slice().iter().map(|&v| v as f64).collect();
    let flat = patchify_slice(&data, pixels.height(), pixels.width(), patch)?;
    Ok(flat
        .chunks(patch * patch * 3)
        .map(<[f64]>::to_vec)
        .collect())
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &[Vec<f64>], h: usize, w: usize, patch: usize) -> Result<PixelGrid> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(format!(
            "patch size {patch} does not divide {h}x{w}"
        )));
    }
    let per_row = w / patch;
    if patches.len() != (h / patch) * per_row
        || patches.iter().any(|p| p.len() != patch * patch * 3)
    {
        return Err(Error::shape("patch list does not tile the image"));
    }
    let mut px = PixelGrid::filled(h, w, 0.0);
    for (i, p) in patches.iter().enumerate() {
        let (py, pxi) = (i / per_row, i % per_row);
        for y in 0..patch {
            for x in 0..patch {
                for c in 0..3 {
                    px.set(
                        py * patch + y,
                        pxi * patch + x,
                        c,
                        p[(y * patch + x) * 3 + c] as f32,
                    );
                }
            }
        }
    }
    Ok(px)
}
