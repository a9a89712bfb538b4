//! Precipitation nowcasting with a vector-quantized tokenizer, a causal
//! autoregressive transformer over the tokens, and an extreme value loss
//! regularizer fed by a per-token extreme classifier.

pub mod classifier;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod evl;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod vqvae;

pub use error::{NowcastError, Result};
