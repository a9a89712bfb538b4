use std::time::Instant;

use crate::data::{window_sequences, RadarFrame, RadarSequence, CONTEXT_FRAMES, HORIZON_FRAMES};
use crate::dynamics::{generate, Dynamics, Sampling, TokenSequence};
use crate::error::{shape_err, NowcastError, Result};
use crate::metrics::{aggregate_by_lead_time, auc, roc_curve, ForecastBundle, MetricsConfig, RocCurve, VerificationReport};
use crate::vqvae::VqVae;

/// Predicted frames with the time it took to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub predicted: Vec<RadarFrame>,
    pub generation_seconds: f64,
}

fn frame_step(context: &[RadarFrame]) -> i64 {
    context
        .windows(2)
        .map(|w| w[1].timestamp() - w[0].timestamp())
        .next()
        .unwrap_or(crate::data::FRAME_SPACING_MIN)
}

/// The last context frame repeated for every lead time.
pub fn persistence_baseline(context: &[RadarFrame]) -> Result<Vec<RadarFrame>> {
    let last = context
        .last()
        .ok_or_else(|| NowcastError::InvalidInput("persistence needs at least one context frame".into()))?;
    let step = frame_step(context);
    Ok((1..=HORIZON_FRAMES as i64)
        .map(|i| last.clone().with_timestamp(last.timestamp() + step * i))
        .collect())
}

/// Tokenizes the context, samples six frames of tokens and decodes them.
pub fn model_forecast(vq: &VqVae, dynamics: &Dynamics, context: &[RadarFrame], sampling: Sampling) -> Result<Forecast> {
    let cfg = dynamics.config();
    if context.len() != cfg.context_frames {
        return Err(shape_err(format!(
            "{} context frames given, model expects {}",
            context.len(),
            cfg.context_frames
        )));
    }
    let start = Instant::now();
    let refs: Vec<&RadarFrame> = context.iter().collect();
    let grids = vq.tokenize(&refs)?;
    let (h, w) = grids[0].dims();
    if h * w != cfg.tokens_per_frame {
        return Err(shape_err(format!(
            "context frames give {} tokens per frame, model expects {}",
            h * w,
            cfg.tokens_per_frame
        )));
    }
    let ctx = TokenSequence::from_grids(&grids, cfg.vocab_size)?;
    let out = generate(dynamics, &ctx, cfg.context_frames, cfg.horizon_frames, sampling)?;
    let step = frame_step(context);
    let last = context[context.len() - 1].timestamp();
    let predicted = vq
        .detokenize(&out.to_grids(h, w)?)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| f.with_timestamp(last + step * (i as i64 + 1)))
        .collect();
    Ok(Forecast {
        predicted,
        generation_seconds: start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
    })
}

/// What produces the six predicted frames of a bundle.
pub enum Forecaster<'a> {
    Model {
        vq: &'a VqVae,
        dynamics: &'a Dynamics,
        sampling: Sampling,
    },
    Persistence,
    /// Ground truth itself; the perfect-forecast reference.
    Oracle,
}

impl Forecaster<'_> {
    fn sampling_for_seed(sampling: Sampling, seed: u64) -> Sampling {
        match sampling {
            Sampling::Categorical { temperature, seed: base } => Sampling::Categorical {
                temperature,
                seed: base.wrapping_add(seed),
            },
            s => s,
        }
    }

    /// One bundle per 3+6 window of every sequence.
    pub fn bundles(&self, sequences: &[RadarSequence], seed: u64) -> Result<Vec<ForecastBundle>> {
        let mut bundles = Vec::new();
        let mut index = 0u64;
        for seq in sequences {
            for sample in window_sequences(seq, CONTEXT_FRAMES, HORIZON_FRAMES, HORIZON_FRAMES + CONTEXT_FRAMES) {
                let start = Instant::now();
                let (predicted, secs) = match self {
                    Forecaster::Model { vq, dynamics, sampling } => {
                        let s = Self::sampling_for_seed(*sampling, seed.wrapping_mul(1_000_003).wrapping_add(index));
                        let f = model_forecast(vq, dynamics, &sample.context, s)?;
                        (f.predicted, f.generation_seconds)
                    }
                    Forecaster::Persistence => (persistence_baseline(&sample.context)?, start.elapsed().as_secs_f64()),
                    Forecaster::Oracle => (sample.target.clone(), start.elapsed().as_secs_f64()),
                };
                bundles.push(ForecastBundle::new(sample.context, predicted, sample.target, secs)?);
                index += 1;
            }
        }
        if bundles.is_empty() {
            return Err(NowcastError::InsufficientData {
                found: 0,
                required: CONTEXT_FRAMES + HORIZON_FRAMES,
            });
        }
        Ok(bundles)
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: VerificationReport,
    pub roc: RocCurve,
    pub auc: f64,
    pub mean_generation_seconds: f64,
    pub n_bundles: usize,
}

/// Runs the forecaster once per seed over every test window and aggregates.
pub fn evaluate(forecaster: &Forecaster<'_>, test: &[RadarSequence], seeds: &[u64], metrics: &MetricsConfig) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(NowcastError::InsufficientData { found: 0, required: 1 });
    }
    let per_seed: Vec<Vec<ForecastBundle>> = seeds
        .iter()
        .map(|&s| forecaster.bundles(test, s))
        .collect::<Result<_>>()?;
    let report = aggregate_by_lead_time(&per_seed, metrics)?;
    let all: Vec<&ForecastBundle> = per_seed.iter().flatten().collect();
    let pred: Vec<_> = all.iter().flat_map(|b| b.predicted.iter().map(|f| f.values())).collect();
    let obs: Vec<_> = all.iter().flat_map(|b| b.truth.iter().map(|f| f.values())).collect();
    let roc = roc_curve(&pred, &obs, &metrics.roc_thresholds_mm)?;
    let mean_generation_seconds = all.iter().map(|b| b.generation_seconds).sum::<f64>() / all.len() as f64;
    Ok(Evaluation {
        auc: auc(&roc),
        report,
        roc,
        mean_generation_seconds,
        n_bundles: all.len(),
    })
}
