//! Bidirectional transformer that labels each predicted token as extreme or
//! not, and the bridge that feeds the dynamics model's logits into it.

use candle_core::{DType, Device, Tensor, Var, D};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NowcastError, Result};
use crate::evl::bce_loss_tensor;
use crate::nn::{softmax, Checkpoint, Init, LayerNorm, Linear, ParamStore, TransformerBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_sequence_length: usize,
    /// Cut the gradient path from the classifier input back to the dynamics
    /// logits.
    pub detached_bridge: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            embed_dim: 128,
            n_heads: 4,
            vocab_size: 64,
            max_sequence_length: 144,
            detached_bridge: false,
        }
    }
}

impl ClassifierConfig {
    pub fn full_size() -> Self {
        Self {
            n_layers: 6,
            embed_dim: 1024,
            n_heads: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(NowcastError::Config(format!(
                "classifier embed_dim {} must be divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.vocab_size < 2 || self.max_sequence_length == 0 {
            return Err(NowcastError::Config(
                "classifier n_layers, vocab_size and max_sequence_length must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub struct TokenClassifier {
    cfg: ClassifierConfig,
    ps: ParamStore,
    tok_emb: Tensor,
    pos_emb: Tensor,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
    head: Linear,
}

impl std::fmt::Debug for TokenClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TokenClassifier")
            .field("cfg", &self.cfg)
            .field("parameters", &self.ps.num_parameters())
            .finish()
    }
}

impl TokenClassifier {
    pub fn new(cfg: ClassifierConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let d = cfg.embed_dim;
        let tok_emb = ps.var("classifier.tok_emb", &[cfg.vocab_size, d], Init::Normal { std: 0.02 })?;
        let pos_emb = ps.var("classifier.pos_emb", &[cfg.max_sequence_length, d], Init::Normal { std: 0.02 })?;
        let blocks = (0..cfg.n_layers)
            .map(|i| TransformerBlock::new(&mut ps, &format!("classifier.block{i:02}"), d, cfg.n_heads, cfg.n_layers))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(&mut ps, "classifier.ln_f", d)?;
        let head = Linear::new(&mut ps, "classifier.head", d, 2, 0.02, true)?;
        Ok(Self {
            cfg,
            ps,
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    pub fn vars(&self) -> Vec<Var> {
        self.ps.all_vars()
    }

    pub fn token_embedding(&self) -> &Tensor {
        &self.tok_emb
    }

    /// Embeddings of hard token ids (B, T) -> (B, T, D).
    pub fn embed_tokens(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, t) = tokens.dims2()?;
        Ok(self
            .tok_emb
            .index_select(&tokens.flatten_all()?, 0)?
            .reshape((b, t, self.cfg.embed_dim))?)
    }

    /// Classifier inputs from dynamics logits (B, T, K).
    ///
    /// Forward value is the embedding of the argmax token. In the default
    /// mode the gradient flows to the logits as if the input were the
    /// softmax-weighted mixture of embeddings; in detached mode it stops.
    pub fn bridge_predicted_tokens(&self, logits: &Tensor) -> Result<Tensor> {
        let k = logits.dim(D::Minus1)?;
        if k != self.cfg.vocab_size {
            return Err(shape_err(format!(
                "logits over {k} tokens, classifier vocabulary is {}",
                self.cfg.vocab_size
            )));
        }
        let hard = one_hot_argmax(logits)?;
        let weights = if self.cfg.detached_bridge {
            hard
        } else {
            let soft = softmax(logits, D::Minus1)?;
            (hard + (&soft - soft.detach())?)?
        };
        Ok(weights.broadcast_matmul(&self.tok_emb)?)
    }

    /// Per-token (non-extreme, extreme) probabilities, (B, T, 2).
    pub fn classify_tokens(&self, reps: &Tensor) -> Result<Tensor> {
        let (_, t, d) = reps.dims3()?;
        if t == 0 || t > self.cfg.max_sequence_length || d != self.cfg.embed_dim {
            return Err(shape_err(format!(
                "classifier input {:?} incompatible with length <= {} and width {}",
                reps.dims(),
                self.cfg.max_sequence_length,
                self.cfg.embed_dim
            )));
        }
        let mut h = reps.broadcast_add(&self.pos_emb.narrow(0, 0, t)?)?;
        for block in &self.blocks {
            h = block.forward(&h, None)?;
        }
        softmax(&self.head.forward(&self.ln_f.forward(&h)?)?, D::Minus1)
    }

    /// Extreme-class probability `u` per token, (B, T).
    pub fn extreme_probability(&self, reps: &Tensor) -> Result<Tensor> {
        Ok(self.classify_tokens(reps)?.narrow(D::Minus1, 1, 1)?.squeeze(D::Minus1)?)
    }

    pub fn export_into(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.meta["classifier_config"] = serde_json::to_value(&self.cfg)?;
        self.ps.export_into(ckpt, "")
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType, device: &Device) -> Result<Self> {
        let cfg: ClassifierConfig = serde_json::from_value(
            ckpt.meta
                .get("classifier_config")
                .cloned()
                .ok_or_else(|| NowcastError::Checkpoint("checkpoint lacks a classifier config".into()))?,
        )?;
        let model = Self::new(cfg, 0, dtype, device)?;
        model.ps.import_from(ckpt, "")?;
        Ok(model)
    }
}

/// One-hot encoding of the last-axis argmax (lowest index on ties), detached.
pub fn one_hot_argmax(logits: &Tensor) -> Result<Tensor> {
    let k = logits.dim(D::Minus1)?;
    let idx = logits.detach().argmax_keepdim(D::Minus1)?;
    let range = Tensor::arange(0u32, k as u32, logits.device())?;
    Ok(idx.broadcast_eq(&range)?.to_dtype(logits.dtype())?)
}

/// Binary cross-entropy of extreme probabilities against 0/1 labels.
pub fn classifier_loss(u: &Tensor, v: &Tensor, epsilon: f64) -> Result<Tensor> {
    bce_loss_tensor(u, v, epsilon)
}
