use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

/// Rescales the gradients of `vars` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for var in vars {
        if let Some(g) = grads.get(var) {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for var in vars {
            if let Some(g) = grads.get(var) {
                let scaled = (g * scale)?;
                grads.insert(var, scaled);
            }
        }
    }
    Ok(norm)
}

/// Adam over a fixed set of parameters, with optional norm clipping.
pub struct Adam {
    inner: AdamW,
    vars: Vec<Var>,
    grad_clip: f64,
}

impl Adam {
    pub fn new(vars: Vec<Var>, cfg: &OptimConfig) -> Result<Self> {
        let params = ParamsAdamW {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: 0.0,
        };
        Ok(Self {
            inner: AdamW::new(vars.clone(), params)?,
            vars,
            grad_clip: cfg.grad_clip,
        })
    }

    /// Backpropagates `loss` and updates only this optimizer's parameters.
    /// Returns the pre-clip gradient norm.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<f64> {
        let mut grads = loss.backward()?;
        self.step(&mut grads)
    }

    pub fn step(&mut self, grads: &mut GradStore) -> Result<f64> {
        let norm = clip_grad_norm(grads, &self.vars, self.grad_clip)?;
        self.inner.step(grads)?;
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn clipping_caps_the_norm() {
        let dev = Device::Cpu;
        let w = Var::new(&[3.0f64, 4.0], &dev).unwrap();
        let loss = (w.as_tensor() * 10.0).unwrap().sum_all().unwrap();
        let mut grads = loss.backward().unwrap();
        let before = clip_grad_norm(&mut grads, &[w.clone()], 1.0).unwrap();
        assert!((before - 200f64.sqrt()).abs() < 1e-9);
        let g: Vec<f64> = grads.get(&w).unwrap().to_vec1().unwrap();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adam_moves_towards_minimum() {
        let dev = Device::Cpu;
        let w = Var::new(&[2.0f64], &dev).unwrap();
        let mut opt = Adam::new(vec![w.clone()], &OptimConfig { lr: 0.1, ..Default::default() }).unwrap();
        for _ in 0..200 {
            let loss = w.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.backward_step(&loss).unwrap();
        }
        let v: Vec<f64> = w.as_tensor().to_vec1().unwrap();
        assert!(v[0].abs() < 0.05);
    }
}
