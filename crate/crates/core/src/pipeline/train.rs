use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::RunConfig;
use crate::classifier::{classifier_loss, TokenClassifier};
use crate::data::{token_labels, RadarFrame, RadarSequence};
use crate::dynamics::Dynamics;
use crate::error::{NowcastError, Result};
use crate::evl::evl_loss_tensor;
use crate::nn::Adam;
use crate::vqvae::VqVae;

const BATCH_STREAM: u64 = 0x5eed_ba7c;
const CLASSIFIER_STREAM: u64 = 0xc1a5_51f1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VqLogRow {
    pub step: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub perceptual: f64,
    /// Distinct codes hit by this step's batch.
    pub codes_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynLogRow {
    pub step: usize,
    /// Objective the dynamics optimizer minimized.
    pub total: f64,
    pub ar_loss: f64,
    pub evl: f64,
    pub classifier_bce: f64,
}

/// Indices of a training batch: all items when the batch covers the set,
/// otherwise a fresh sample without replacement.
fn batch_indices(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        (0..n).collect()
    } else {
        let mut idx = sample_indices(rng, n, batch).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn finite(step: usize, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NowcastError::Diverged {
            step,
            detail: format!("{name} became {v}"),
        })
    }
}

fn should_log(step: usize, total: usize, every: usize) -> bool {
    step == 1 || step % every == 0 || step == total
}

/// Trains the tokenizer on individual frames.
pub fn fit_vqvae(cfg: &RunConfig, frames: &[&RadarFrame], seed: u64) -> Result<(VqVae, Vec<VqLogRow>)> {
    if frames.is_empty() {
        return Err(NowcastError::InsufficientData { found: 0, required: 1 });
    }
    let model = VqVae::new(cfg.vqvae.clone(), seed, DType::F32, &Device::Cpu)?;
    let mut opt = Adam::new(model.params().all_vars(), &cfg.train.vqvae_optim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BATCH_STREAM);
    let mut usage = vec![0u64; cfg.vqvae.codebook_size];
    let steps = cfg.train.vqvae_steps;
    let mut log = Vec::new();
    for step in 1..=steps {
        let idx = batch_indices(&mut rng, frames.len(), cfg.train.vqvae_batch);
        let batch: Vec<&RadarFrame> = idx.iter().map(|&i| frames[i]).collect();
        let x = model.frames_to_tensor(&batch)?;
        let (terms, fwd) = model.loss(&x)?;
        let b = terms.breakdown()?;
        finite(step, "tokenizer loss", b.total)?;
        opt.backward_step(&terms.total)?;
        for &i in &fwd.indices {
            usage[i as usize] += 1;
        }
        if cfg.vqvae.reseed_dead_codes && cfg.train.reseed_interval > 0 && step % cfg.train.reseed_interval == 0 {
            let n = model.reseed_dead_codes(&usage, &fwd.z_hat, &mut rng)?;
            if n > 0 {
                log::debug!("step {step}: reseeded {n} unused codes");
            }
            usage.iter_mut().for_each(|u| *u = 0);
        }
        if should_log(step, steps, cfg.train.log_every) {
            let codes_used = fwd.indices.iter().collect::<BTreeSet<_>>().len();
            log::info!(
                "tokenizer step {step}: total {:.4} recon {:.4} codes {codes_used}",
                b.total,
                b.reconstruction
            );
            log.push(VqLogRow {
                step,
                total: b.total,
                reconstruction: b.reconstruction,
                codebook: b.codebook,
                commitment: b.commitment,
                perceptual: b.perceptual,
                codes_used,
            });
        }
    }
    Ok((model, log))
}

/// Token sequences of whole radar sequences plus per-token extreme labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDataset {
    pub tokens: Vec<Vec<u32>>,
    /// 1.0 where the token's source patch averages above the threshold.
    pub labels: Vec<Vec<f32>>,
}

impl TokenDataset {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Share of extreme labels.
    pub fn extreme_share(&self) -> f64 {
        let n: usize = self.labels.iter().map(Vec::len).sum();
        let pos: f64 = self.labels.iter().flatten().map(|&v| v as f64).sum();
        if n == 0 {
            0.0
        } else {
            pos / n as f64
        }
    }
}

pub fn token_dataset(vq: &VqVae, sequences: &[RadarSequence], threshold_mm: f64) -> Result<TokenDataset> {
    let mut tokens = Vec::with_capacity(sequences.len());
    let mut labels = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let frames: Vec<&RadarFrame> = seq.frames().iter().collect();
        let grids = vq.tokenize(&frames)?;
        tokens.push(grids.iter().flat_map(|g| g.flat()).collect());
        let mut lab = Vec::new();
        for (frame, grid) in frames.iter().zip(&grids) {
            let l = token_labels(frame.values(), grid.dims(), threshold_mm)?;
            lab.extend(l.iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        }
        labels.push(lab);
    }
    Ok(TokenDataset { tokens, labels })
}

pub struct TrainedDynamics {
    pub dynamics: Dynamics,
    /// Present when the extreme value loss was enabled.
    pub classifier: Option<TokenClassifier>,
    pub log: Vec<DynLogRow>,
}

/// Trains the autoregressive model with teacher forcing. With `evl_enabled`
/// the objective is `ar_loss + lambda * EVL(u, v)` where `u` comes from the
/// token classifier fed with the model's own predictions, and the classifier
/// is updated on its cross-entropy in an alternating step.
pub fn fit_dynamics(
    cfg: &RunConfig,
    data: &TokenDataset,
    seed: u64,
    evl_enabled: bool,
    lambda: f64,
) -> Result<TrainedDynamics> {
    if data.is_empty() {
        return Err(NowcastError::InsufficientData { found: 0, required: 1 });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(NowcastError::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let dev = Device::Cpu;
    let dynamics = Dynamics::new(cfg.dynamics.clone(), seed, DType::F32, &dev)?;
    let k = cfg.dynamics.vocab_size;
    if let Some(bad) = data.tokens.iter().flatten().find(|&&t| t as usize >= k) {
        return Err(NowcastError::Config(format!("token {bad} outside the dynamics vocabulary of {k}")));
    }
    let classifier = if evl_enabled {
        if cfg.classifier.vocab_size != k {
            return Err(NowcastError::Config(format!(
                "classifier vocabulary {} differs from dynamics vocabulary {k}",
                cfg.classifier.vocab_size
            )));
        }
        Some(TokenClassifier::new(cfg.classifier.clone(), seed ^ CLASSIFIER_STREAM, DType::F32, &dev)?)
    } else {
        None
    };
    let mut dyn_opt = Adam::new(dynamics.vars(), &cfg.train.dynamics_optim)?;
    let mut clf_opt = match &classifier {
        Some(c) => Some(Adam::new(c.vars(), &cfg.train.classifier_optim)?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BATCH_STREAM);
    let steps = cfg.train.dynamics_steps;
    let mut log = Vec::new();
    for step in 1..=steps {
        let idx = batch_indices(&mut rng, data.len(), cfg.train.dynamics_batch);
        let batch: Vec<&[u32]> = idx.iter().map(|&i| data.tokens[i].as_slice()).collect();
        let (ce, logits) = dynamics.sequence_loss(&batch)?;
        let ce_value = finite(step, "ar_loss", ce.to_scalar::<f32>()? as f64)?;
        let (total, evl_value, bce_value) = match (&classifier, clf_opt.as_mut()) {
            (Some(clf), Some(clf_opt)) => {
                let (b, t) = (batch.len(), logits.dim(1)?);
                let v: Vec<f32> = idx.iter().flat_map(|&i| data.labels[i][1..].iter().copied()).collect();
                let v = Tensor::from_vec(v, (b, t), &dev)?;

                let u = clf.extreme_probability(&clf.bridge_predicted_tokens(&logits)?)?;
                let evl = evl_loss_tensor(&u, &v, &cfg.evl)?;
                let evl_value = finite(step, "EVL", evl.to_scalar::<f32>()? as f64)?;
                let total = (&ce + (&evl * lambda)?)?;
                dyn_opt.backward_step(&total)?;

                let predicted = logits.detach().argmax(candle_core::D::Minus1)?;
                let u_hat = clf.extreme_probability(&clf.embed_tokens(&predicted)?)?;
                let bce = classifier_loss(&u_hat, &v, cfg.evl.epsilon)?;
                let bce_value = finite(step, "classifier loss", bce.to_scalar::<f32>()? as f64)?;
                clf_opt.backward_step(&bce)?;
                (ce_value + lambda * evl_value, evl_value, bce_value)
            }
            _ => {
                dyn_opt.backward_step(&ce)?;
                (ce_value, 0.0, 0.0)
            }
        };
        if should_log(step, steps, cfg.train.log_every) {
            log::info!("dynamics step {step}: total {total:.4} ar {ce_value:.4} evl {evl_value:.4}");
            log.push(DynLogRow {
                step,
                total,
                ar_loss: ce_value,
                evl: evl_value,
                classifier_bce: bce_value,
            });
        }
    }
    Ok(TrainedDynamics {
        dynamics,
        classifier,
        log,
    })
}

/// Writes serializable rows as CSV with a header taken from field names.
pub fn write_log_csv<T: Serialize>(rows: &[T], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header_done = false;
    for row in rows {
        let serde_json::Value::Object(map) = serde_json::to_value(row)? else {
            return Err(NowcastError::InvalidInput("log rows must serialize to objects".into()));
        };
        if !header_done {
            writeln!(out, "{}", map.keys().cloned().collect::<Vec<_>>().join(","))?;
            header_done = true;
        }
        let cells: Vec<String> = map.values().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
