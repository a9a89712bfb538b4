use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::error::{NowcastError, Result};

/// Anything that scores the next token given a prefix.
pub trait NextTokenModel {
    fn vocab_size(&self) -> usize;

    /// Logits for the token following `prefix`.
    fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Sampling {
    /// Highest logit, lowest index on ties.
    Greedy,
    Categorical { temperature: f64, seed: u64 },
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Categorical { temperature: 1.0, seed: 0 }
    }
}

fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(logits: &[f32], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let weights: Vec<f64> = logits.iter().map(|&v| ((v as f64 - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Extends `context` by `horizon_frames` frames, one model call per emitted
/// token. Returns only the generated frames.
pub fn generate<M: NextTokenModel + ?Sized>(
    model: &M,
    context: &TokenSequence,
    context_frames: usize,
    horizon_frames: usize,
    sampling: Sampling,
) -> Result<TokenSequence> {
    if context.n_frames() != context_frames {
        return Err(NowcastError::InvalidInput(format!(
            "context holds {} frames, expected {context_frames}",
            context.n_frames()
        )));
    }
    let mut rng = match sampling {
        Sampling::Greedy => None,
        Sampling::Categorical { temperature, seed } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(NowcastError::InvalidInput(format!(
                    "temperature must be positive, got {temperature}"
                )));
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
    };
    let k = model.vocab_size();
    let n_new = horizon_frames * context.frame_len();
    let mut seq = context.tokens().to_vec();
    seq.reserve(n_new);
    for _ in 0..n_new {
        let logits = model.next_logits(&seq)?;
        if logits.len() != k {
            return Err(NowcastError::Shape(format!("model returned {} logits for vocabulary {k}", logits.len())));
        }
        let next = match (&sampling, rng.as_mut()) {
            (Sampling::Categorical { temperature, .. }, Some(rng)) => sample_categorical(&logits, *temperature, rng),
            _ => argmax(&logits),
        };
        seq.push(next as u32);
    }
    TokenSequence::new(seq.split_off(context.len()), context.frame_len(), k)
}
