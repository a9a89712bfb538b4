//! Frame tokenizer. An encoder maps a rain-rate frame to an `h x w` grid of
//! continuous latents, each latent is snapped to its nearest codebook vector,
//! and a mirrored decoder maps the quantized grid back to a frame.

mod loss;
mod model;
mod quantize;

use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};

pub use loss::{vqvae_loss, GradientPyramid, PerceptualLoss, VqLossBreakdown, VqLossTerms};
pub use model::{VqForward, VqVae};
pub use quantize::{
    assignment_error, nearest_code, quantize, quantize_tensor, straight_through, Codebook, LatentGrid,
    TokenGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqVaeConfig {
    /// Total spatial reduction; a power of two.
    pub downsample: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Residual blocks per resolution level.
    pub res_blocks: usize,
    pub attention: bool,
    /// Vocabulary size `K`.
    pub codebook_size: usize,
    /// Code dimension `n_z`.
    pub code_dim: usize,
    /// Rain rate (mm/h) mapped to unit scale at the encoder input and
    /// decoder output.
    pub input_scale: f64,
    /// Weight of the perceptual term; 0 switches it off.
    pub perceptual_weight: f64,
    /// Reset unused codes to encoder outputs during training.
    pub reseed_dead_codes: bool,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            downsample: 4,
            base_channels: 16,
            max_channels: 32,
            res_blocks: 1,
            attention: true,
            codebook_size: 64,
            code_dim: 8,
            input_scale: 10.0,
            perceptual_weight: 0.1,
            reseed_dead_codes: false,
        }
    }
}

impl VqVaeConfig {
    /// Full-size layout: five halvings (256x256 frames to 8x8 tokens), two
    /// residual blocks per level.
    pub fn full_size() -> Self {
        Self {
            downsample: 32,
            base_channels: 64,
            max_channels: 512,
            res_blocks: 2,
            attention: true,
            codebook_size: 1024,
            code_dim: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NowcastError::Config(m));
        if !self.downsample.is_power_of_two() {
            return bad(format!("downsample must be a power of two, got {}", self.downsample));
        }
        if self.codebook_size < 2 {
            return bad(format!("codebook_size must be at least 2, got {}", self.codebook_size));
        }
        if self.code_dim == 0 || self.base_channels == 0 || self.max_channels == 0 {
            return bad("code_dim and channel widths must be positive".into());
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return bad(format!("input_scale must be positive, got {}", self.input_scale));
        }
        if !(self.perceptual_weight >= 0.0 && self.perceptual_weight.is_finite()) {
            return bad(format!("perceptual_weight must be non-negative, got {}", self.perceptual_weight));
        }
        Ok(())
    }

    /// Number of stride-2 stages.
    pub fn levels(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    /// Channel width after `level` halvings.
    pub fn channels_at(&self, level: usize) -> usize {
        (self.base_channels << level.min(16)).min(self.max_channels)
    }
}
