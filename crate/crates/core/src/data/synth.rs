//! Seeded storm generator used in place of an operational radar archive.
//!
//! Each sequence is a handful of Gaussian rain cells carried along by one
//! constant velocity, on top of a weak smooth background. A chosen subset of
//! sequences also carries a burst: an intense cell that switches on during
//! the forecast span.

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{RadarFrame, RadarSequence, CONTEXT_FRAMES, FRAME_SPACING_MIN};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StormConfig {
    pub frames_per_sequence: usize,
    pub min_cells: usize,
    pub max_cells: usize,
    /// Cell width as a fraction of the shorter frame side.
    pub cell_sigma_frac: (f64, f64),
    /// Mean of the exponential part of a cell's peak rate, mm/h.
    pub cell_peak_mean: f64,
    /// Fastest advection, fraction of the frame width per frame.
    pub max_speed_frac: f64,
    /// Amplitude of the smooth background, mm/h.
    pub noise_amplitude: f64,
    /// Burst peak rate range, mm/h.
    pub burst_peak: (f64, f64),
    pub burst_sigma_frac: f64,
}

impl Default for StormConfig {
    fn default() -> Self {
        Self {
            frames_per_sequence: 9,
            min_cells: 1,
            max_cells: 3,
            cell_sigma_frac: (0.1, 0.22),
            cell_peak_mean: 2.5,
            max_speed_frac: 0.06,
            noise_amplitude: 0.3,
            burst_peak: (40.0, 60.0),
            burst_sigma_frac: 0.12,
        }
    }
}

/// Generated sequences plus the generator's own record of which of them
/// carry a burst.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub sequences: Vec<RadarSequence>,
    pub bursts: Vec<bool>,
}

impl SyntheticSet {
    pub fn burst_count(&self) -> usize {
        self.bursts.iter().filter(|&&b| b).count()
    }
}

struct Cell {
    x: f64,
    y: f64,
    sigma: f64,
    peak: f64,
    growth: f64,
    onset: usize,
}

/// Deterministic in `seed`. Exactly `round(extreme_fraction * n_sequences)`
/// sequences receive a burst.
pub fn synth_storms(
    seed: u64,
    n_sequences: usize,
    shape: (usize, usize),
    extreme_fraction: f64,
    config: &StormConfig,
) -> Result<SyntheticSet> {
    if !(0.0..=0.5).contains(&extreme_fraction) {
        return Err(invalid(format!(
            "extreme fraction {extreme_fraction} outside [0, 0.5]"
        )));
    }
    if config.frames_per_sequence == 0 || config.max_cells < config.min_cells {
        return Err(invalid("storm config has no frames or an empty cell range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bursts = (extreme_fraction * n_sequences as f64).round() as usize;
    let mut bursts = vec![false; n_sequences];
    for i in sample_indices(&mut rng, n_sequences, n_bursts.min(n_sequences)) {
        bursts[i] = true;
    }

    let mut sequences = Vec::with_capacity(n_sequences);
    for (index, &burst) in bursts.iter().enumerate() {
        let t0 = (index * config.frames_per_sequence) as i64 * FRAME_SPACING_MIN;
        sequences.push(one_sequence(&mut rng, shape, burst, t0, config)?);
    }
    Ok(SyntheticSet { sequences, bursts })
}

fn one_sequence(
    rng: &mut ChaCha8Rng,
    (height, width): (usize, usize),
    burst: bool,
    t0: i64,
    config: &StormConfig,
) -> Result<RadarSequence> {
    let side = height.min(width) as f64;
    let peak_dist = Exp::new(1.0 / config.cell_peak_mean).map_err(|e| invalid(e.to_string()))?;
    let speed = config.max_speed_frac * width as f64 * rng.random::<f64>();
    let heading = rng.random::<f64>() * std::f64::consts::TAU;
    let (vx, vy) = (speed * heading.cos(), speed * heading.sin());

    let n_cells = rng.random_range(config.min_cells..=config.max_cells);
    let mut cells: Vec<Cell> = (0..n_cells)
        .map(|_| Cell {
            x: rng.random::<f64>() * width as f64,
            y: rng.random::<f64>() * height as f64,
            sigma: side * rng.random_range(config.cell_sigma_frac.0..=config.cell_sigma_frac.1),
            peak: 0.5 + peak_dist.sample(rng),
            growth: rng.random_range(-0.1..0.1),
            onset: 0,
        })
        .collect();
    if burst {
        let horizon = config.frames_per_sequence.saturating_sub(CONTEXT_FRAMES).max(1);
        cells.push(Cell {
            x: (0.25 + 0.5 * rng.random::<f64>()) * width as f64,
            y: (0.25 + 0.5 * rng.random::<f64>()) * height as f64,
            sigma: side * config.burst_sigma_frac,
            peak: rng.random_range(config.burst_peak.0..=config.burst_peak.1),
            growth: 0.0,
            onset: (CONTEXT_FRAMES + rng.random_range(0..horizon.div_ceil(2)))
                .min(config.frames_per_sequence - 1),
        });
    }

    // background: three drifting plane waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..2.0) / width as f64,
                rng.random_range(0.5..2.0) / height as f64,
                rng.random::<f64>() * std::f64::consts::TAU,
                rng.random_range(-0.3..0.3),
            )
        })
        .collect();

    let mut frames = Vec::with_capacity(config.frames_per_sequence);
    for t in 0..config.frames_per_sequence {
        let tf = t as f64;
        let values = Array2::from_shape_fn((height, width), |(r, c)| {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let mut v = 0.0;
            for cell in &cells {
                if t < cell.onset {
                    continue;
                }
                let ramp = if cell.onset > 0 {
                    (0.4 + 0.3 * (t - cell.onset) as f64).min(1.0)
                } else {
                    (1.0 + cell.growth * tf).max(0.0)
                };
                let dx = x - (cell.x + vx * tf);
                let dy = y - (cell.y + vy * tf);
                v += cell.peak * ramp * (-(dx * dx + dy * dy) / (2.0 * cell.sigma * cell.sigma)).exp();
            }
            let mut n = 0.0;
            for &(kx, ky, phase, omega) in &waves {
                n += (std::f64::consts::TAU * (kx * (x - vx * tf) + ky * (y - vy * tf)) + phase + omega * tf)
                    .sin();
            }
            (v + config.noise_amplitude * n / 3.0).max(0.0) as f32
        });
        frames.push(RadarFrame::new(values, t0 + t as i64 * FRAME_SPACING_MIN)?);
    }
    RadarSequence::new(frames, FRAME_SPACING_MIN)
}
