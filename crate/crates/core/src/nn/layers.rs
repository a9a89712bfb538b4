use candle_core::shape::Dim;
use candle_core::{CpuStorage, CustomOp1, Device, Layout, Shape, Tensor, D};

use super::{Init, ParamStore};
use crate::error::Result;

/// Softmax along `dim`. The last dimension takes a fused kernel with an
/// explicit backward; other dimensions are composed from primitives.
pub fn softmax(xs: &Tensor, dim: D) -> Result<Tensor> {
    let dim = dim.to_index(xs.shape(), "softmax")?;
    if dim + 1 == xs.rank() {
        return Ok(xs.contiguous()?.apply_op1(SoftmaxLastDim)?);
    }
    let max = xs.max_keepdim(dim)?.detach();
    let e = xs.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(dim)?;
    Ok(e.broadcast_div(&s)?)
}

/// Fused softmax over the last dimension of a contiguous tensor.
struct SoftmaxLastDim;

fn softmax_rows<T: num_traits::Float>(src: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for row in src.chunks_exact(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum = sum + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e = *e / sum);
    }
    out
}

impl CustomOp1 for SoftmaxLastDim {
    fn name(&self) -> &'static str {
        "softmax-last-dim"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("softmax input must be contiguous".into()))?;
        let n = layout.dims().last().copied().unwrap_or(1).max(1);
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(softmax_rows(&v[start..end], n)),
            CpuStorage::F64(v) => CpuStorage::F64(softmax_rows(&v[start..end], n)),
            _ => candle_core::bail!("softmax supports f32 and f64 only"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad_res * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some((res * grad_res.broadcast_sub(&dot)?)?))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu_value(x: f64) -> f64 {
    let z = GELU_C * (x + GELU_A * x * x * x);
    let t = 1.0 - 2.0 / ((2.0 * z).exp() + 1.0);
    0.5 * x * (1.0 + t)
}

fn gelu_slope(x: f64) -> f64 {
    let z = GELU_C * (x + GELU_A * x * x * x);
    let t = 1.0 - 2.0 / ((2.0 * z).exp() + 1.0);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Elementwise map over a contiguous f32/f64 tensor.
fn map_contiguous(storage: &CpuStorage, layout: &Layout, f: fn(f64) -> f64) -> candle_core::Result<(CpuStorage, Shape)> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("input must be contiguous".into()))?;
    let out = match storage {
        CpuStorage::F32(v) => CpuStorage::F32(v[start..end].iter().map(|&x| f(x as f64) as f32).collect()),
        CpuStorage::F64(v) => CpuStorage::F64(v[start..end].iter().map(|&x| f(x)).collect()),
        _ => candle_core::bail!("only f32 and f64 are supported"),
    };
    Ok((out, layout.shape().clone()))
}

struct Gelu;
struct GeluSlope;

impl CustomOp1 for Gelu {
    fn name(&self) -> &'static str {
        "gelu-tanh"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        map_contiguous(storage, layout, gelu_value)
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let slope = arg.contiguous()?.apply_op1_no_bwd(&GeluSlope)?;
        Ok(Some((grad_res * slope)?))
    }
}

impl CustomOp1 for GeluSlope {
    fn name(&self) -> &'static str {
        "gelu-tanh-slope"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        map_contiguous(storage, layout, gelu_slope)
    }
}

/// Tanh-approximated GELU with a fused kernel and an exact derivative.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Gelu)?)
}

/// Layer normalization over the last dimension.
pub fn layer_norm(x: &Tensor, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(weight)?.broadcast_add(bias)?)
}

/// `n x n` additive attention mask: 0 where key `j <= i`, `-inf` elsewhere.
pub fn causal_mask_tensor(n: usize, device: &Device) -> Result<Tensor> {
    let mask: Vec<f32> = (0..n)
        .flat_map(|i| (0..n).map(move |j| if j <= i { 0.0 } else { f32::NEG_INFINITY }))
        .collect();
    Ok(Tensor::from_vec(mask, (n, n), device)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, inp: usize, out: usize, std: f64, bias: bool) -> Result<Self> {
        let weight = ps.var(&format!("{name}.weight"), &[out, inp], Init::Normal { std })?;
        let bias = if bias {
            Some(ps.var(&format!("{name}.bias"), &[out], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.var(&format!("{name}.weight"), &[dim], Init::Const(1.0))?,
            bias: ps.var(&format!("{name}.bias"), &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.weight, &self.bias, 1e-5)
    }
}

/// 2-D convolution over NCHW input.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    stride: usize,
}

impl Conv2dLayer {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let weight = ps.var(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::Normal { std: fan_in.sqrt().recip() },
        )?;
        let bias = ps.var(&format!("{name}.bias"), &[out_ch], Init::Const(0.0))?;
        Ok(Self {
            weight,
            bias,
            padding,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Pre-norm transformer block: self-attention then a GELU MLP, both residual.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    n_heads: usize,
}

impl TransformerBlock {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, n_heads: usize, n_layers: usize) -> Result<Self> {
        // residual projections scaled down with depth
        let resid_std = 0.02 / (2.0 * n_layers as f64).sqrt();
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            qkv: Linear::new(ps, &format!("{name}.attn.qkv"), dim, 3 * dim, 0.02, true)?,
            proj: Linear::new(ps, &format!("{name}.attn.proj"), dim, dim, resid_std, true)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            fc1: Linear::new(ps, &format!("{name}.mlp.fc1"), dim, 4 * dim, 0.02, true)?,
            fc2: Linear::new(ps, &format!("{name}.mlp.fc2"), 4 * dim, dim, resid_std, true)?,
            n_heads,
        })
    }

    /// `x`: (batch, time, dim). `mask`: optional additive (time, time) mask.
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attention(&self.ln1.forward(x)?, mask)?)?;
        let h = gelu(&self.fc1.forward(&self.ln2.forward(&x)?)?)?;
        Ok((&x + self.fc2.forward(&h)?)?)
    }

    fn attention(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, dim) = x.dims3()?;
        let hd = dim / self.n_heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, self.n_heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * (hd as f64).sqrt().recip())?;
        if let Some(mask) = mask {
            scores = scores.broadcast_add(&mask.to_dtype(scores.dtype())?)?;
        }
        let att = softmax(&scores, D::Minus1)?;
        let out = att
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, t, dim))?;
        self.proj.forward(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn softmax_rows_sum_to_one_and_respect_mask() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[[1.0f32, 2.0, 3.0], [0.5, 0.5, 0.5]], &dev).unwrap();
        let m = causal_mask_tensor(3, &dev).unwrap().narrow(0, 0, 2).unwrap();
        let p = softmax(&(x + m).unwrap(), D::Minus1).unwrap();
        let rows: Vec<Vec<f32>> = p.to_vec2().unwrap();
        assert_eq!(rows[0], vec![1.0, 0.0, 0.0]);
        assert!((rows[1][0] - 0.5).abs() < 1e-6 && rows[1][2] == 0.0);
    }

    #[test]
    fn fused_softmax_matches_composed_with_gradients() {
        let dev = Device::Cpu;
        let x = candle_core::Var::from_tensor(&Tensor::randn(0f64, 2.0, (3, 5, 7), &dev).unwrap()).unwrap();
        let m = causal_mask_tensor(7, &dev).unwrap().narrow(0, 0, 5).unwrap().to_dtype(DType::F64).unwrap();
        let w = Tensor::randn(0f64, 1.0, (3, 5, 7), &dev).unwrap();
        let xm = x.broadcast_add(&m).unwrap();
        let fused = softmax(&xm, D::Minus1).unwrap();
        let composed = softmax(&xm.transpose(1, 2).unwrap(), D::Minus2).unwrap().transpose(1, 2).unwrap();
        let diff: f64 = (&fused - &composed).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(diff < 1e-15);
        let g1 = (&fused * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = (&composed * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let (g1, g2) = (g1.get(&x).unwrap(), g2.get(&x).unwrap());
        let diff: f64 = (g1 - g2).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(diff < 1e-14, "{diff}");
    }

    #[test]
    fn fused_gelu_matches_candle_and_differentiates() {
        let dev = Device::Cpu;
        let xs: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.2).collect();
        let x = candle_core::Var::from_vec(xs.clone(), xs.len(), &dev).unwrap();
        let ours = gelu(&x).unwrap();
        let reference = x.gelu().unwrap();
        let diff: f64 = (&ours - &reference).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(diff < 1e-12, "{diff}");
        let g = ours.sum_all().unwrap().backward().unwrap();
        let g: Vec<f64> = g.get(&x).unwrap().to_vec1().unwrap();
        for (&xi, &gi) in xs.iter().zip(&g) {
            let h = 1e-6;
            let fd = (gelu_value(xi + h) - gelu_value(xi - h)) / (2.0 * h);
            assert!((fd - gi).abs() < 1e-8, "x {xi}: {fd} vs {gi}");
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &dev).unwrap();
        let w = Tensor::ones(4, DType::F64, &dev).unwrap();
        let b = Tensor::zeros(4, DType::F64, &dev).unwrap();
        let y: Vec<f64> = layer_norm(&x, &w, &b, 0.0).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
