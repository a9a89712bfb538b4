//! Causal transformer over flattened token sequences. Frames are laid out
//! frame-major, raster-scan within each frame; the logits at position `i`
//! predict the token at `i + 1`.

mod generate;
mod model;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{NowcastError, Result};
use crate::vqvae::TokenGrid;

pub use generate::{generate, NextTokenModel, Sampling};
pub use model::{ar_loss, shift_targets, Dynamics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub context_frames: usize,
    pub horizon_frames: usize,
    pub vocab_size: usize,
    /// Tokens per frame, `h * w`.
    pub tokens_per_frame: usize,
    pub max_sequence_length: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            embed_dim: 128,
            context_frames: 3,
            horizon_frames: 6,
            vocab_size: 64,
            tokens_per_frame: 16,
            max_sequence_length: 144,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NowcastError::Config(m));
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "embed_dim {} must be divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.vocab_size < 2 || self.tokens_per_frame == 0 {
            return bad("n_layers, vocab_size and tokens_per_frame must be positive".into());
        }
        if self.context_frames == 0 {
            return bad("context_frames must be positive".into());
        }
        let need = (self.context_frames + self.horizon_frames) * self.tokens_per_frame;
        if self.max_sequence_length < need {
            return bad(format!(
                "max_sequence_length {} is below the {need} tokens of a full sequence",
                self.max_sequence_length
            ));
        }
        Ok(())
    }

    pub fn context_len(&self) -> usize {
        self.context_frames * self.tokens_per_frame
    }
}

/// Token indices of consecutive frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    frame_len: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, frame_len: usize, vocab_size: usize) -> Result<Self> {
        if frame_len == 0 || tokens.len() % frame_len != 0 {
            return Err(NowcastError::InvalidInput(format!(
                "{} tokens do not split into frames of {frame_len}",
                tokens.len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(NowcastError::InvalidInput(format!(
                "token {t} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(Self { tokens, frame_len })
    }

    pub fn from_grids(grids: &[TokenGrid], vocab_size: usize) -> Result<Self> {
        let frame_len = grids.first().map(|g| g.indices.len()).unwrap_or(1);
        if grids.iter().any(|g| g.indices.len() != frame_len) {
            return Err(NowcastError::InvalidInput("token grids differ in size".into()));
        }
        Self::new(grids.iter().flat_map(|g| g.flat()).collect(), frame_len, vocab_size)
    }

    /// Splits back into `h x w` grids.
    pub fn to_grids(&self, h: usize, w: usize) -> Result<Vec<TokenGrid>> {
        if h * w != self.frame_len {
            return Err(NowcastError::Shape(format!("{h}x{w} does not hold {} tokens", self.frame_len)));
        }
        self.tokens
            .chunks_exact(self.frame_len)
            .map(|c| {
                Ok(TokenGrid {
                    indices: Array2::from_shape_vec((h, w), c.to_vec())
                        .map_err(|e| NowcastError::Shape(e.to_string()))?,
                })
            })
            .collect()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn n_frames(&self) -> usize {
        self.tokens.len() / self.frame_len
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Offset of the first token of each frame.
    pub fn frame_boundaries(&self) -> Vec<usize> {
        (0..self.n_frames()).map(|f| f * self.frame_len).collect()
    }
}

/// `n x n` additive attention mask: query `i` may attend key `j` iff `j <= i`;
/// forbidden entries hold `-inf`.
pub fn causal_mask(n: usize) -> Array2<f32> {
    Array2::from_shape_fn((n, n), |(i, j)| if j <= i { 0.0 } else { f32::NEG_INFINITY })
}
