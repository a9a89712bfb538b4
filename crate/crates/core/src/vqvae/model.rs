use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;
use rand::Rng;

use super::loss::{vqvae_loss, GradientPyramid, PerceptualLoss, VqLossTerms};
use super::quantize::{quantize_tensor, straight_through, Codebook, LatentGrid, TokenGrid};
use super::VqVaeConfig;
use crate::data::RadarFrame;
use crate::error::{shape_err, NowcastError, Result};
use crate::nn::{gelu, Checkpoint, Conv2dLayer, Init, ParamStore, TransformerBlock};

#[derive(Debug, Clone)]
struct ResBlock {
    c1: Conv2dLayer,
    c2: Conv2dLayer,
}

impl ResBlock {
    fn new(ps: &mut ParamStore, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            c1: Conv2dLayer::new(ps, &format!("{name}.conv1"), ch, ch, 3, 1, 1)?,
            c2: Conv2dLayer::new(ps, &format!("{name}.conv2"), ch, ch, 3, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.c1.forward(&gelu(&x)?)?;
        let h = self.c2.forward(&gelu(&h)?)?;
        Ok((x + h)?)
    }
}

/// Self-attention over the spatial cells of a feature map.
#[derive(Debug, Clone)]
struct SpatialAttention {
    block: TransformerBlock,
}

impl SpatialAttention {
    fn new(ps: &mut ParamStore, name: &str, ch: usize) -> Result<Self> {
        Ok(Self {
            block: TransformerBlock::new(ps, name, ch, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let seq = x.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let out = self.block.forward(&seq, None)?;
        Ok(out.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?)
    }
}

#[derive(Debug, Clone)]
struct Level {
    blocks: Vec<ResBlock>,
    resample: Conv2dLayer,
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

/// Outputs of one training forward pass.
#[derive(Debug, Clone)]
pub struct VqForward {
    pub z_hat: Tensor,
    pub z_q: Tensor,
    pub indices: Vec<u32>,
    pub x_hat: Tensor,
}

/// Convolutional tokenizer: encoder, codebook and mirrored decoder.
pub struct VqVae {
    cfg: VqVaeConfig,
    ps: ParamStore,
    enc_in: Conv2dLayer,
    enc_levels: Vec<Level>,
    enc_mid: ResBlock,
    enc_attn: Option<SpatialAttention>,
    enc_out: Conv2dLayer,
    dec_in: Conv2dLayer,
    dec_attn: Option<SpatialAttention>,
    dec_mid: ResBlock,
    dec_levels: Vec<Level>,
    dec_out: Conv2dLayer,
    codebook: Tensor,
    perceptual: GradientPyramid,
}

impl std::fmt::Debug for VqVae {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VqVae")
            .field("cfg", &self.cfg)
            .field("parameters", &self.ps.num_parameters())
            .finish()
    }
}

impl VqVae {
    pub fn new(cfg: VqVaeConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let levels = cfg.levels();
        let ch: Vec<usize> = (0..=levels).map(|i| cfg.channels_at(i)).collect();
        let top = ch[levels];

        let enc_in = Conv2dLayer::new(&mut ps, "encoder.conv_in", 1, ch[0], 3, 1, 1)?;
        let mut enc_levels = Vec::with_capacity(levels);
        for i in 0..levels {
            let blocks = (0..cfg.res_blocks)
                .map(|r| ResBlock::new(&mut ps, &format!("encoder.down{i}.res{r}"), ch[i]))
                .collect::<Result<Vec<_>>>()?;
            let resample = Conv2dLayer::new(&mut ps, &format!("encoder.down{i}.conv"), ch[i], ch[i + 1], 3, 2, 1)?;
            enc_levels.push(Level { blocks, resample });
        }
        let enc_mid = ResBlock::new(&mut ps, "encoder.mid.res", top)?;
        let enc_attn = if cfg.attention {
            Some(SpatialAttention::new(&mut ps, "encoder.mid.attn", top)?)
        } else {
            None
        };
        let enc_out = Conv2dLayer::new(&mut ps, "encoder.conv_out", top, cfg.code_dim, 1, 1, 0)?;

        let dec_in = Conv2dLayer::new(&mut ps, "decoder.conv_in", cfg.code_dim, top, 3, 1, 1)?;
        let dec_attn = if cfg.attention {
            Some(SpatialAttention::new(&mut ps, "decoder.mid.attn", top)?)
        } else {
            None
        };
        let dec_mid = ResBlock::new(&mut ps, "decoder.mid.res", top)?;
        let mut dec_levels = Vec::with_capacity(levels);
        for i in (0..levels).rev() {
            let resample = Conv2dLayer::new(&mut ps, &format!("decoder.up{i}.conv"), ch[i + 1], ch[i], 3, 1, 1)?;
            let blocks = (0..cfg.res_blocks)
                .map(|r| ResBlock::new(&mut ps, &format!("decoder.up{i}.res{r}"), ch[i]))
                .collect::<Result<Vec<_>>>()?;
            dec_levels.push(Level { blocks, resample });
        }
        let dec_out = Conv2dLayer::new(&mut ps, "decoder.conv_out", ch[0], 1, 3, 1, 1)?;

        let bound = 1.0 / cfg.codebook_size as f64;
        let codebook = ps.var(
            "codebook",
            &[cfg.codebook_size, cfg.code_dim],
            Init::Uniform { low: -bound, high: bound },
        )?;
        Ok(Self {
            cfg,
            ps,
            enc_in,
            enc_levels,
            enc_mid,
            enc_attn,
            enc_out,
            dec_in,
            dec_attn,
            dec_mid,
            dec_levels,
            dec_out,
            codebook,
            perceptual: GradientPyramid::default(),
        })
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    pub fn device(&self) -> &Device {
        self.ps.device()
    }

    pub fn dtype(&self) -> DType {
        self.ps.dtype()
    }

    pub fn encoder_vars(&self) -> Vec<Var> {
        self.ps.vars_with_prefix("encoder.")
    }

    pub fn decoder_vars(&self) -> Vec<Var> {
        self.ps.vars_with_prefix("decoder.")
    }

    pub fn codebook_var(&self) -> Var {
        self.ps.get("codebook").expect("codebook registered at construction").clone()
    }

    pub fn codebook_tensor(&self) -> &Tensor {
        &self.codebook
    }

    pub fn codebook(&self) -> Result<Codebook> {
        Codebook::from_tensor(&self.codebook)
    }

    /// Latent grid size for a frame of `height x width`.
    pub fn latent_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let f = self.cfg.downsample;
        if height % f != 0 || width % f != 0 || height == 0 || width == 0 {
            return Err(shape_err(format!(
                "frame {height}x{width} is not divisible by the downsampling factor {f}"
            )));
        }
        Ok((height / f, width / f))
    }

    /// (B, 1, H, W) rain rates to (B, n_z, h, w) continuous latents.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(shape_err(format!("expected one input channel, got {c}")));
        }
        self.latent_dims(h, w)?;
        let x = (x.to_dtype(self.dtype())? / self.cfg.input_scale)?;
        let mut h = self.enc_in.forward(&x)?;
        for level in &self.enc_levels {
            for block in &level.blocks {
                h = block.forward(&h)?;
            }
            h = level.resample.forward(&h)?;
        }
        h = self.enc_mid.forward(&h)?;
        if let Some(attn) = &self.enc_attn {
            h = attn.forward(&h)?;
        }
        self.enc_out.forward(&gelu(&h)?)
    }

    /// (B, n_z, h, w) latents to (B, 1, H, W) non-negative rain rates.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let (_, n_z, _, _) = z.dims4()?;
        if n_z != self.cfg.code_dim {
            return Err(shape_err(format!(
                "latent has {n_z} channels, decoder expects {}",
                self.cfg.code_dim
            )));
        }
        let mut h = self.dec_in.forward(&z.to_dtype(self.dtype())?)?;
        if let Some(attn) = &self.dec_attn {
            h = attn.forward(&h)?;
        }
        h = self.dec_mid.forward(&h)?;
        for level in &self.dec_levels {
            let (_, _, lh, lw) = h.dims4()?;
            h = level.resample.forward(&h.upsample_nearest2d(lh * 2, lw * 2)?)?;
            for block in &level.blocks {
                h = block.forward(&h)?;
            }
        }
        let out = self.dec_out.forward(&gelu(&h)?)?;
        Ok((softplus(&out)? * self.cfg.input_scale)?)
    }

    /// Encode, quantize and decode through the straight-through path.
    pub fn forward(&self, x: &Tensor) -> Result<VqForward> {
        let z_hat = self.encode_tensor(x)?;
        let (indices, z_q) = quantize_tensor(&z_hat, &self.codebook)?;
        let x_hat = self.decode_tensor(&straight_through(&z_hat, &z_q)?)?;
        Ok(VqForward { z_hat, z_q, indices, x_hat })
    }

    /// Forward pass plus the four-term loss on `x`.
    pub fn loss(&self, x: &Tensor) -> Result<(VqLossTerms, VqForward)> {
        let fwd = self.forward(x)?;
        let x = x.to_dtype(self.dtype())?;
        let perceptual = if self.cfg.perceptual_weight > 0.0 {
            Some((&self.perceptual as &dyn PerceptualLoss, self.cfg.perceptual_weight))
        } else {
            None
        };
        let terms = vqvae_loss(&x, &fwd.x_hat, &fwd.z_hat, &fwd.z_q, perceptual)?;
        Ok((terms, fwd))
    }

    pub fn frames_to_tensor(&self, frames: &[&RadarFrame]) -> Result<Tensor> {
        let (h, w) = frames
            .first()
            .ok_or_else(|| NowcastError::InvalidInput("empty frame batch".into()))?
            .shape();
        let mut flat = Vec::with_capacity(frames.len() * h * w);
        for f in frames {
            if f.shape() != (h, w) {
                return Err(shape_err("frames in one batch must share a shape"));
            }
            flat.extend(f.values().iter().copied());
        }
        Ok(Tensor::from_vec(flat, (frames.len(), 1, h, w), self.device())?.to_dtype(self.dtype())?)
    }

    pub fn encode(&self, frame: &RadarFrame) -> Result<LatentGrid> {
        let x = self.frames_to_tensor(&[frame])?;
        LatentGrid::from_tensor(&self.encode_tensor(&x)?)
    }

    pub fn decode(&self, z_q: &LatentGrid) -> Result<RadarFrame> {
        let out = self.decode_tensor(&z_q.to_tensor(self.device())?)?;
        let (_, _, h, w) = out.dims4()?;
        let v: Vec<f32> = out.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        RadarFrame::new(Array2::from_shape_vec((h, w), v).map_err(|e| shape_err(e.to_string()))?, 0)
    }

    /// Token grids for a batch of frames.
    pub fn tokenize(&self, frames: &[&RadarFrame]) -> Result<Vec<TokenGrid>> {
        let x = self.frames_to_tensor(frames)?;
        let z_hat = self.encode_tensor(&x)?;
        let (_, _, h, w) = z_hat.dims4()?;
        let (indices, _) = quantize_tensor(&z_hat, &self.codebook)?;
        indices
            .chunks_exact(h * w)
            .map(|c| {
                Ok(TokenGrid {
                    indices: Array2::from_shape_vec((h, w), c.to_vec()).map_err(|e| shape_err(e.to_string()))?,
                })
            })
            .collect()
    }

    /// Frames decoded from token grids; timestamps are left at 0.
    pub fn detokenize(&self, tokens: &[TokenGrid]) -> Result<Vec<RadarFrame>> {
        let Some(first) = tokens.first() else {
            return Ok(Vec::new());
        };
        let (h, w) = first.dims();
        let k = self.cfg.codebook_size as u32;
        let mut flat = Vec::with_capacity(tokens.len() * h * w);
        for t in tokens {
            if t.dims() != (h, w) {
                return Err(shape_err("token grids in one batch must share a shape"));
            }
            if let Some(bad) = t.indices.iter().find(|&&i| i >= k) {
                return Err(NowcastError::InvalidInput(format!("token {bad} outside vocabulary of {k}")));
            }
            flat.extend(t.indices.iter().copied());
        }
        let idx = Tensor::from_vec(flat, tokens.len() * h * w, self.device())?;
        let z = self
            .codebook
            .index_select(&idx, 0)?
            .reshape((tokens.len(), h, w, self.cfg.code_dim))?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        let out = self.decode_tensor(&z)?.to_dtype(DType::F32)?;
        let (_, _, fh, fw) = out.dims4()?;
        let v: Vec<f32> = out.flatten_all()?.to_vec1()?;
        v.chunks_exact(fh * fw)
            .map(|c| RadarFrame::new(Array2::from_shape_vec((fh, fw), c.to_vec()).map_err(|e| shape_err(e.to_string()))?, 0))
            .collect()
    }

    /// Replaces codes with zero usage by randomly chosen encoder outputs from
    /// `z_hat` (B, n_z, h, w). Returns how many codes were reseeded.
    pub fn reseed_dead_codes<R: Rng>(&self, usage: &[u64], z_hat: &Tensor, rng: &mut R) -> Result<usize> {
        let k = self.cfg.codebook_size;
        let n_z = self.cfg.code_dim;
        if usage.len() != k {
            return Err(shape_err(format!("usage has {} entries, codebook has {k}", usage.len())));
        }
        let cells: Vec<f64> = z_hat
            .detach()
            .permute((0, 2, 3, 1))?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        let n_cells = cells.len() / n_z;
        if n_cells == 0 {
            return Ok(0);
        }
        let mut book: Vec<f64> = self.codebook.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let mut count = 0;
        for (code, _) in usage.iter().enumerate().filter(|(_, &u)| u == 0) {
            let src = rng.random_range(0..n_cells);
            book[code * n_z..(code + 1) * n_z].copy_from_slice(&cells[src * n_z..(src + 1) * n_z]);
            count += 1;
        }
        if count > 0 {
            let t = Tensor::from_vec(book, (k, n_z), self.device())?.to_dtype(self.dtype())?;
            self.codebook_var().set(&t)?;
        }
        Ok(count)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({ "kind": "vqvae", "vqvae_config": self.cfg });
        let mut ckpt = Checkpoint::new(meta);
        self.ps.export_into(&mut ckpt, "vqvae.")?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType, device: &Device) -> Result<Self> {
        let cfg: VqVaeConfig = serde_json::from_value(
            ckpt.meta
                .get("vqvae_config")
                .cloned()
                .ok_or_else(|| NowcastError::Checkpoint("checkpoint lacks a tokenizer config".into()))?,
        )?;
        let model = Self::new(cfg, 0, dtype, device)?;
        model.ps.import_from(ckpt, "vqvae.")?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let ckpt = Checkpoint::load(path, device)?;
        Self::from_checkpoint(&ckpt, DType::F32, device)
    }
}
