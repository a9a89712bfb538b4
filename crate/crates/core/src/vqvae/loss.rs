use candle_core::Tensor;

use crate::error::{shape_err, Result};

/// A differentiable distance between a frame batch and its reconstruction.
/// Implementations must return a non-negative scalar that is zero when the
/// two batches are equal.
pub trait PerceptualLoss: Send + Sync {
    /// `x`, `x_hat`: (batch, 1, H, W). Returns a scalar tensor.
    fn distance(&self, x: &Tensor, x_hat: &Tensor) -> Result<Tensor>;
}

/// Squared L2 distance between gradient-magnitude maps, summed over dyadic
/// scales 1, 2, 4, ... and divided by the batch size.
#[derive(Debug, Clone, Copy)]
pub struct GradientPyramid {
    pub scales: usize,
}

impl Default for GradientPyramid {
    fn default() -> Self {
        Self { scales: 3 }
    }
}

const MAGNITUDE_EPS: f64 = 1e-6;

fn gradient_magnitude(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let dx = (x.narrow(3, 1, w - 1)? - x.narrow(3, 0, w - 1)?)?.narrow(2, 0, h - 1)?;
    let dy = (x.narrow(2, 1, h - 1)? - x.narrow(2, 0, h - 1)?)?.narrow(3, 0, w - 1)?;
    Ok(((dx.sqr()? + dy.sqr()?)? + MAGNITUDE_EPS)?.sqrt()?)
}

impl PerceptualLoss for GradientPyramid {
    fn distance(&self, x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
        if x.dims() != x_hat.dims() {
            return Err(shape_err(format!("perceptual inputs {:?} vs {:?}", x.dims(), x_hat.dims())));
        }
        let (b, _, h, w) = x.dims4()?;
        let mut total = Tensor::zeros((), x.dtype(), x.device())?;
        for s in 0..self.scales {
            let f = 1usize << s;
            if h / f < 2 || w / f < 2 {
                break;
            }
            let (a, c) = if f == 1 {
                (x.clone(), x_hat.clone())
            } else {
                (x.avg_pool2d(f)?, x_hat.avg_pool2d(f)?)
            };
            let d = (gradient_magnitude(&a)? - gradient_magnitude(&c)?)?.sqr()?.sum_all()?;
            total = (total + d)?;
        }
        Ok((total / b as f64)?)
    }
}

/// Scalar values of the four loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct VqLossBreakdown {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Loss terms as graph tensors; `total` is what training backpropagates.
#[derive(Debug, Clone)]
pub struct VqLossTerms {
    pub reconstruction: Tensor,
    pub codebook: Tensor,
    pub commitment: Tensor,
    pub perceptual: Tensor,
    pub total: Tensor,
}

impl VqLossTerms {
    pub fn breakdown(&self) -> Result<VqLossBreakdown> {
        let f = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?) };
        Ok(VqLossBreakdown {
            reconstruction: f(&self.reconstruction)?,
            codebook: f(&self.codebook)?,
            commitment: f(&self.commitment)?,
            perceptual: f(&self.perceptual)?,
            total: f(&self.total)?,
        })
    }
}

/// Tokenizer loss: reconstruction + codebook + commitment + weighted
/// perceptual. Every term is a sum over elements divided by the batch size.
///
/// The codebook term sees `z_hat` detached, so only the codebook receives its
/// gradient; the commitment term sees `z_q` detached, so only the encoder does.
pub fn vqvae_loss(
    x: &Tensor,
    x_hat: &Tensor,
    z_hat: &Tensor,
    z_q: &Tensor,
    perceptual: Option<(&dyn PerceptualLoss, f64)>,
) -> Result<VqLossTerms> {
    if x.dims() != x_hat.dims() {
        return Err(shape_err(format!("frame batch {:?} vs reconstruction {:?}", x.dims(), x_hat.dims())));
    }
    if z_hat.dims() != z_q.dims() {
        return Err(shape_err(format!("latents {:?} vs quantized {:?}", z_hat.dims(), z_q.dims())));
    }
    let b = x.dim(0)?;
    if z_hat.dim(0)? != b {
        return Err(shape_err("frame and latent batch sizes differ"));
    }
    let bf = b as f64;
    let reconstruction = ((x - x_hat)?.sqr()?.sum_all()? / bf)?;
    let codebook = ((z_hat.detach() - z_q)?.sqr()?.sum_all()? / bf)?;
    let commitment = ((z_q.detach() - z_hat)?.sqr()?.sum_all()? / bf)?;
    let perceptual = match perceptual {
        Some((p, weight)) if weight != 0.0 => (p.distance(x, x_hat)? * weight)?,
        _ => Tensor::zeros((), x.dtype(), x.device())?,
    };
    let total = (((&reconstruction + &codebook)? + &commitment)? + &perceptual)?;
    Ok(VqLossTerms {
        reconstruction,
        codebook,
        commitment,
        perceptual,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn frames(v: Vec<f64>, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(v, (1, 1, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn equal_inputs_give_zero_total() {
        let x = frames((0..64).map(|i| (i % 7) as f64).collect(), 8, 8);
        let z = Tensor::ones((1, 2, 2, 2), DType::F64, &Device::Cpu).unwrap();
        let p = GradientPyramid::default();
        let l = vqvae_loss(&x, &x, &z, &z, Some((&p, 1.0))).unwrap().breakdown().unwrap();
        assert_eq!(l, VqLossBreakdown::default());
    }

    #[test]
    fn reconstruction_is_sum_of_squares() {
        let x = frames(vec![0.0, 1.0, 2.0, 3.0], 2, 2);
        let xh = (&x + 1.0).unwrap();
        let z = Tensor::zeros((1, 2, 1, 1), DType::F64, &Device::Cpu).unwrap();
        let l = vqvae_loss(&x, &xh, &z, &z, None).unwrap().breakdown().unwrap();
        assert_eq!(l.reconstruction, 4.0);
        assert_eq!(l.total, 4.0);
    }

    #[test]
    fn unit_latent_offset_gives_unit_codebook_and_commitment() {
        let x = frames(vec![0.0; 4], 2, 2);
        let zq = Tensor::zeros((1, 2, 1, 2), DType::F64, &Device::Cpu).unwrap();
        let zh = Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0], (1, 2, 1, 2), &Device::Cpu).unwrap();
        let l = vqvae_loss(&x, &x, &zh, &zq, None).unwrap().breakdown().unwrap();
        assert_eq!((l.codebook, l.commitment, l.total), (1.0, 1.0, 2.0));
    }

    #[test]
    fn perceptual_is_symmetric_and_positive() {
        let a = frames((0..256).map(|i| ((i * 37) % 11) as f64).collect(), 16, 16);
        let b = frames((0..256).map(|i| ((i * 13) % 5) as f64).collect(), 16, 16);
        let p = GradientPyramid::default();
        let ab: f64 = p.distance(&a, &b).unwrap().to_scalar().unwrap();
        let ba: f64 = p.distance(&b, &a).unwrap().to_scalar().unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-12 * ab);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let x = frames(vec![0.0; 4], 2, 2);
        let y = frames(vec![0.0; 16], 4, 4);
        let z = Tensor::zeros((1, 2, 1, 1), DType::F64, &Device::Cpu).unwrap();
        assert!(vqvae_loss(&x, &y, &z, &z, None).is_err());
    }
}
