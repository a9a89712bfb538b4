//! Differentiable versions of the losses, for training.

use candle_core::Tensor;

use super::EvlParams;
use crate::error::Result;

fn bracket(x: &Tensor, gamma: f64) -> Result<Tensor> {
    let base = x.affine(-1.0 / gamma, 1.0)?.relu()?;
    Ok(if gamma == 1.0 { base } else { base.powf(gamma)? })
}

/// Mean extreme value loss of probabilities `u` against 0/1 labels `v`
/// (same shape, same float dtype).
pub fn evl_loss_tensor(u: &Tensor, v: &Tensor, params: &EvlParams) -> Result<Tensor> {
    let u = u.clamp(params.epsilon, 1.0 - params.epsilon)?;
    let one_minus_u = u.affine(-1.0, 1.0)?;
    let one_minus_v = v.affine(-1.0, 1.0)?;
    let positive = (bracket(&u, params.gamma)? * v)?
        .mul(&u.log()?)?
        .affine(-params.beta1, 0.0)?;
    let negative = (bracket(&one_minus_u, params.gamma)? * one_minus_v)?
        .mul(&one_minus_u.log()?)?
        .affine(-params.beta0, 0.0)?;
    Ok((positive + negative)?.mean_all()?)
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce_loss_tensor(u: &Tensor, v: &Tensor, epsilon: f64) -> Result<Tensor> {
    let u = u.clamp(epsilon, 1.0 - epsilon)?;
    let one_minus_u = u.affine(-1.0, 1.0)?;
    let one_minus_v = v.affine(-1.0, 1.0)?;
    let nll = ((v * u.log()?)? + (one_minus_v * one_minus_u.log()?)?)?.neg()?;
    Ok(nll.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evl::{bce_grad, bce_loss, evl_grad, evl_loss};
    use candle_core::{Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let v = (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
        (u, v)
    }

    #[test]
    fn tensor_losses_agree_with_scalar_forms() {
        let dev = Device::Cpu;
        for &gamma in &[1.0, 2.0] {
            let params = EvlParams { gamma, ..Default::default() };
            let (u, v) = batch(gamma as u64, 64);
            let ut = Var::from_vec(u.clone(), 64, &dev).unwrap();
            let vt = Tensor::from_vec(v.clone(), 64, &dev).unwrap();

            let evl = evl_loss_tensor(ut.as_tensor(), &vt, &params).unwrap();
            assert!((evl.to_scalar::<f64>().unwrap() - evl_loss(&u, &v, &params)).abs() < 1e-14);
            let grads = evl.backward().unwrap();
            let g: Vec<f64> = grads.get(&ut).unwrap().to_vec1().unwrap();
            for (a, b) in g.iter().zip(evl_grad(&u, &v, &params)) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }

            let bce = bce_loss_tensor(ut.as_tensor(), &vt, params.epsilon).unwrap();
            assert!((bce.to_scalar::<f64>().unwrap() - bce_loss(&u, &v, params.epsilon)).abs() < 1e-14);
            let g: Vec<f64> = bce.backward().unwrap().get(&ut).unwrap().to_vec1().unwrap();
            for (a, b) in g.iter().zip(bce_grad(&u, &v, params.epsilon)) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
