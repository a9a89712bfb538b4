use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;

use super::generate::NextTokenModel;
use super::DynamicsConfig;
use crate::error::{shape_err, NowcastError, Result};
use crate::nn::{causal_mask_tensor, Checkpoint, Init, LayerNorm, Linear, ParamStore, TransformerBlock};

/// Mean cross-entropy of `logits` (.., K) against aligned `targets` (..).
pub fn ar_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let k = logits.dim(candle_core::D::Minus1)?;
    let n = targets.elem_count();
    if logits.elem_count() != n * k {
        return Err(shape_err(format!(
            "logits {:?} do not align with targets {:?}",
            logits.dims(),
            targets.dims()
        )));
    }
    let logits = logits.reshape((n, k))?;
    let targets = targets.flatten_all()?.to_dtype(DType::U32)?;
    Ok(candle_nn::loss::cross_entropy(&logits, &targets)?)
}

/// Inputs `s[..T-1]` and targets `s[1..]` for a batch of equal-length
/// sequences, as (B, T-1) u32 tensors.
pub fn shift_targets(batch: &[&[u32]], device: &Device) -> Result<(Tensor, Tensor)> {
    let t = batch.first().map(|s| s.len()).unwrap_or(0);
    if t < 2 || batch.iter().any(|s| s.len() != t) {
        return Err(shape_err("batch needs equal-length sequences of at least 2 tokens"));
    }
    let inputs: Vec<u32> = batch.iter().flat_map(|s| s[..t - 1].iter().copied()).collect();
    let targets: Vec<u32> = batch.iter().flat_map(|s| s[1..].iter().copied()).collect();
    Ok((
        Tensor::from_vec(inputs, (batch.len(), t - 1), device)?,
        Tensor::from_vec(targets, (batch.len(), t - 1), device)?,
    ))
}

/// Decoder-only transformer with learned absolute positions.
pub struct Dynamics {
    cfg: DynamicsConfig,
    ps: ParamStore,
    tok_emb: Tensor,
    pos_emb: Tensor,
    blocks: Vec<TransformerBlock>,
    ln_f: LayerNorm,
    head: Linear,
    mask: Tensor,
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dynamics")
            .field("cfg", &self.cfg)
            .field("parameters", &self.ps.num_parameters())
            .finish()
    }
}

impl Dynamics {
    pub fn new(cfg: DynamicsConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let d = cfg.embed_dim;
        let tok_emb = ps.var("dynamics.tok_emb", &[cfg.vocab_size, d], Init::Normal { std: 0.02 })?;
        let pos_emb = ps.var("dynamics.pos_emb", &[cfg.max_sequence_length, d], Init::Normal { std: 0.02 })?;
        let blocks = (0..cfg.n_layers)
            .map(|i| TransformerBlock::new(&mut ps, &format!("dynamics.block{i:02}"), d, cfg.n_heads, cfg.n_layers))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(&mut ps, "dynamics.ln_f", d)?;
        let head = Linear::new(&mut ps, "dynamics.head", d, cfg.vocab_size, 0.02, false)?;
        let mask = causal_mask_tensor(cfg.max_sequence_length, device)?.to_dtype(dtype)?;
        Ok(Self {
            cfg,
            ps,
            tok_emb,
            pos_emb,
            blocks,
            ln_f,
            head,
            mask,
        })
    }

    pub fn config(&self) -> &DynamicsConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    pub fn vars(&self) -> Vec<Var> {
        self.ps.all_vars()
    }

    pub fn device(&self) -> &Device {
        self.ps.device()
    }

    /// (B, T) u32 token ids to (B, T, K) logits.
    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, t) = tokens.dims2()?;
        if t == 0 || t > self.cfg.max_sequence_length {
            return Err(NowcastError::InvalidInput(format!(
                "sequence length {t} outside 1..={}",
                self.cfg.max_sequence_length
            )));
        }
        let d = self.cfg.embed_dim;
        let x = self
            .tok_emb
            .index_select(&tokens.flatten_all()?, 0)?
            .reshape((b, t, d))?
            .broadcast_add(&self.pos_emb.narrow(0, 0, t)?)?;
        let mask = self.mask.narrow(0, 0, t)?.narrow(1, 0, t)?.contiguous()?;
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(&h, Some(&mask))?;
        }
        self.head.forward(&self.ln_f.forward(&h)?)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(NowcastError::InvalidInput(format!(
                "token {t} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Logits for every position of `prefix`, shape (len, K).
    pub fn next_token_logits(&self, prefix: &[u32]) -> Result<Array2<f32>> {
        self.check_tokens(prefix)?;
        let t = Tensor::from_slice(prefix, (1, prefix.len()), self.device())?;
        let logits = self.forward(&t)?.squeeze(0)?.to_dtype(DType::F32)?;
        let v: Vec<f32> = logits.flatten_all()?.to_vec1()?;
        Array2::from_shape_vec((prefix.len(), self.cfg.vocab_size), v).map_err(|e| shape_err(e.to_string()))
    }

    /// Teacher-forced loss on full sequences. Returns (loss, logits) with
    /// logits shaped (B, T-1, K).
    pub fn sequence_loss(&self, batch: &[&[u32]]) -> Result<(Tensor, Tensor)> {
        for s in batch {
            self.check_tokens(s)?;
        }
        let (inputs, targets) = shift_targets(batch, self.device())?;
        let logits = self.forward(&inputs)?;
        Ok((ar_loss(&logits, &targets)?, logits))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({ "kind": "dynamics", "dynamics_config": self.cfg });
        let mut ckpt = Checkpoint::new(meta);
        self.ps.export_into(&mut ckpt, "")?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType, device: &Device) -> Result<Self> {
        let cfg: DynamicsConfig = serde_json::from_value(
            ckpt.meta
                .get("dynamics_config")
                .cloned()
                .ok_or_else(|| NowcastError::Checkpoint("checkpoint lacks a dynamics config".into()))?,
        )?;
        let model = Self::new(cfg, 0, dtype, device)?;
        model.ps.import_from(ckpt, "")?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, device)?, DType::F32, device)
    }
}

impl NextTokenModel for Dynamics {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn next_logits(&self, prefix: &[u32]) -> Result<Vec<f32>> {
        let logits = self.next_token_logits(prefix)?;
        Ok(logits.row(prefix.len() - 1).to_vec())
    }
}
