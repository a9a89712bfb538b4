//! Monte-Carlo check of the peaks-over-threshold approximation
//! `1 - F(u + y) ~ (1 - F(u)) (1 - H(y))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::{GevParams, GpdTail};
use crate::error::{NowcastError, Result};

pub const MIN_EXCEEDANCES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotReport {
    /// Sup-norm distance between the empirical conditional exceedance
    /// survival and the GPD survival.
    pub divergence: f64,
    pub exceedances: usize,
    pub tail: GpdTail,
}

/// Draws `n` values from `parent`, keeps the excesses over `threshold`
/// and measures how far their empirical survival `Pr{X > u + y | X > u}`
/// is from the GPD implied by the unit GEV with index `gamma`
/// (shape `-1/gamma`, scale `1 - u/gamma`; `gamma = inf` is the exponential
/// tail). The sup-norm is taken over every excess, on both sides of each
/// jump of the empirical step function.
pub fn pot_validate<D: Distribution<f64>>(
    parent: &D,
    threshold: f64,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<PotReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excesses: Vec<f64> = parent
        .sample_iter(&mut rng)
        .take(n)
        .filter(|&x| x > threshold)
        .map(|x| x - threshold)
        .collect();
    if excesses.len() < MIN_EXCEEDANCES {
        return Err(NowcastError::InsufficientData {
            found: excesses.len(),
            required: MIN_EXCEEDANCES,
        });
    }
    excesses.sort_by(f64::total_cmp);
    let tail = GevParams::from_gamma(gamma).excess_over(threshold);
    let m = excesses.len() as f64;
    let mut divergence = 0.0f64;
    for (i, &y) in excesses.iter().enumerate() {
        let model = tail.survival(y);
        let before = (excesses.len() - i) as f64 / m;
        let after = (excesses.len() - i - 1) as f64 / m;
        divergence = divergence.max((model - before).abs()).max((model - after).abs());
    }
    Ok(PotReport {
        divergence,
        exceedances: excesses.len(),
        tail,
    })
}
