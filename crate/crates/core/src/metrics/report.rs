use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{contingency, csi, far, fss, mae, mse, pairwise_sum, pcc, ROC_THRESHOLDS};
use crate::data::{RadarFrame, CONTEXT_FRAMES, HORIZON_FRAMES};
use crate::error::{shape_err, NowcastError, Result};

/// Context, forecast and truth for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastBundle {
    pub context: Vec<RadarFrame>,
    pub predicted: Vec<RadarFrame>,
    pub truth: Vec<RadarFrame>,
    pub generation_seconds: f64,
}

impl ForecastBundle {
    pub fn new(context: Vec<RadarFrame>, predicted: Vec<RadarFrame>, truth: Vec<RadarFrame>, generation_seconds: f64) -> Result<Self> {
        if context.len() != CONTEXT_FRAMES || predicted.len() != HORIZON_FRAMES || truth.len() != HORIZON_FRAMES {
            return Err(shape_err(format!(
                "bundle needs {CONTEXT_FRAMES}/{HORIZON_FRAMES}/{HORIZON_FRAMES} frames, got {}/{}/{}",
                context.len(),
                predicted.len(),
                truth.len()
            )));
        }
        let shape = truth[0].shape();
        if context.iter().chain(&predicted).chain(&truth).any(|f| f.shape() != shape) {
            return Err(shape_err("bundle frames differ in shape"));
        }
        Ok(Self {
            context,
            predicted,
            truth,
            generation_seconds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Pcc,
    Mse,
    Mae,
    Csi(f64),
    Far(f64),
    Fss(f64),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Pcc => write!(f, "PCC"),
            Metric::Mse => write!(f, "MSE"),
            Metric::Mae => write!(f, "MAE"),
            Metric::Csi(t) => write!(f, "CSI@{t}mm"),
            Metric::Far(t) => write!(f, "FAR@{t}mm"),
            Metric::Fss(s) => write!(f, "FSS@{s}km"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub csi_thresholds_mm: Vec<f64>,
    pub fss_scales_km: Vec<f64>,
    pub fss_threshold_mm: f64,
    pub km_per_pixel: f64,
    pub roc_thresholds_mm: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            csi_thresholds_mm: vec![1.0, 2.0, 8.0],
            fss_scales_km: vec![1.0, 10.0, 20.0, 30.0],
            fss_threshold_mm: 1.0,
            km_per_pixel: 1.0,
            roc_thresholds_mm: ROC_THRESHOLDS.to_vec(),
        }
    }
}

impl MetricsConfig {
    /// Report rows in table order.
    pub fn metrics(&self) -> Vec<Metric> {
        let mut m = vec![Metric::Pcc, Metric::Mse, Metric::Mae];
        m.extend(self.csi_thresholds_mm.iter().map(|&t| Metric::Csi(t)));
        m.extend(self.csi_thresholds_mm.iter().map(|&t| Metric::Far(t)));
        m.extend(self.fss_scales_km.iter().map(|&s| Metric::Fss(s)));
        m
    }
}

/// Every configured score for one frame pair; `None` marks undefined.
pub fn frame_scores(pred: &RadarFrame, obs: &RadarFrame, cfg: &MetricsConfig) -> Result<Vec<Option<f64>>> {
    let (p, o) = (pred.values(), obs.values());
    cfg.metrics()
        .into_iter()
        .map(|m| {
            Ok(match m {
                Metric::Pcc => pcc(p, o)?,
                Metric::Mse => Some(mse(p, o)?),
                Metric::Mae => Some(mae(p, o)?),
                Metric::Csi(t) => csi(&contingency(p, o, t)?),
                Metric::Far(t) => far(&contingency(p, o, t)?),
                Metric::Fss(s) => fss(p, o, s, cfg.fss_threshold_mm, cfg.km_per_pixel)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub metric: String,
    pub lead_time: usize,
    /// Mean over seeds of the per-seed mean; `None` if never defined.
    pub mean: Option<f64>,
    /// Population standard deviation over seeds.
    pub std: Option<f64>,
    /// Defined (bundle, seed) scores behind this row.
    pub n_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub rows: Vec<ReportRow>,
    pub n_seeds: usize,
}

impl VerificationReport {
    pub fn get(&self, metric: &str, lead_time: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.metric == metric && r.lead_time == lead_time)
    }

    pub fn lead_times(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.rows.iter().map(|r| r.lead_time).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.metric) {
                names.push(r.metric.clone());
            }
        }
        names
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "metric,lead_time,mean,std,n_defined")?;
        let num = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| format!("{x}"));
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.metric, r.lead_time, num(r.mean), num(r.std), r.n_defined)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    Some((mean, (pairwise_sum(&dev) / n).sqrt()))
}

/// Per lead time and metric: average over bundles within each seed, then
/// mean and population std across seeds. Undefined scores are dropped and
/// counted.
pub fn aggregate_by_lead_time(per_seed: &[Vec<ForecastBundle>], cfg: &MetricsConfig) -> Result<VerificationReport> {
    if per_seed.is_empty() || per_seed.iter().any(|b| b.is_empty()) {
        return Err(NowcastError::InsufficientData { found: 0, required: 1 });
    }
    let metrics = cfg.metrics();
    // scores[seed][bundle][lead][metric]
    let scores: Vec<Vec<Vec<Vec<Option<f64>>>>> = per_seed
        .iter()
        .map(|bundles| {
            bundles
                .par_iter()
                .map(|b| {
                    if b.predicted.len() != HORIZON_FRAMES || b.truth.len() != HORIZON_FRAMES {
                        return Err(shape_err("bundle without six target frames"));
                    }
                    b.predicted
                        .iter()
                        .zip(&b.truth)
                        .map(|(p, o)| frame_scores(p, o, cfg))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(metrics.len() * HORIZON_FRAMES);
    for lead in 0..HORIZON_FRAMES {
        for (mi, metric) in metrics.iter().enumerate() {
            let mut seed_means = Vec::new();
            let mut n_defined = 0;
            for seed in &scores {
                let defined: Vec<f64> = seed.iter().filter_map(|b| b[lead][mi]).collect();
                n_defined += defined.len();
                if let Some((m, _)) = mean_std(&defined) {
                    seed_means.push(m);
                }
            }
            let stats = mean_std(&seed_means);
            rows.push(ReportRow {
                metric: metric.to_string(),
                lead_time: lead + 1,
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
                n_defined,
            });
        }
    }
    Ok(VerificationReport {
        rows,
        n_seeds: per_seed.len(),
    })
}
