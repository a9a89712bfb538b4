//! Extreme value machinery behind the extreme value loss: the GEV and GPD
//! distribution functions in the extreme-value-index parameterization,
//! the `H = 1 + ln G` bridge between them, the tail-approximation weights,
//! and the weighted cross-entropy losses built from those weights.
//!
//! Parameterization: with extreme value index `gamma`, the GEV is
//! `G(y) = exp(-(1 - y/gamma)^gamma)`, i.e. location 0, scale 1 and
//! standard shape `xi = -1/gamma`. `gamma = 0` (and `gamma = inf`) select the
//! Gumbel form `exp(-exp(-y))`.

mod distributions;
mod loss;
mod pot;
mod tensor;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use distributions::{
    gev_cdf, gev_cdf_flagged, gpd_cdf, gpd_cdf_flagged, gpd_cdf_scaled, gpd_from_gev, Flagged,
    GevParams, GpdTail,
};
pub use loss::{
    bce_grad, bce_loss, combined_loss, evl_grad, evl_loss, evl_term, tail_weight_corrected,
    tail_weight_prior,
};
pub use pot::{pot_validate, PotReport, MIN_EXCEEDANCES};
pub use tensor::{bce_loss_tensor, evl_loss_tensor};

/// Knobs of the extreme value loss and of its combination with the
/// autoregressive objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvlParams {
    /// Extreme value index.
    pub gamma: f64,
    /// Weight of the non-extreme term (proportion of non-extreme tokens).
    pub beta0: f64,
    /// Weight of the extreme term (proportion of extreme tokens).
    pub beta1: f64,
    /// Weight of the extreme value loss inside the combined objective.
    pub lambda: f64,
    /// Patch-mean rain rate above which a token is extreme, mm/h.
    pub threshold_mm: f64,
    /// Probabilities are clamped to `[epsilon, 1 - epsilon]` before logs.
    pub epsilon: f64,
}

impl Default for EvlParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta0: 0.95,
            beta1: 0.05,
            lambda: 0.5,
            threshold_mm: 5.0,
            epsilon: 1e-7,
        }
    }
}

impl EvlParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        for (name, b) in [("beta0", self.beta0), ("beta1", self.beta1)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(invalid(format!("{name} = {b} outside [0, 1]")));
            }
        }
        if (self.beta0 + self.beta1 - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "beta0 + beta1 must be 1, got {}",
                self.beta0 + self.beta1
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(invalid(format!("epsilon {} outside (0, 0.5)", self.epsilon)));
        }
        Ok(())
    }

    pub fn clamp_probability(&self, u: f64) -> f64 {
        u.clamp(self.epsilon, 1.0 - self.epsilon)
    }
}
