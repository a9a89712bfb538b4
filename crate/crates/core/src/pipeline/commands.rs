use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::Serialize;

use super::forecast::{evaluate, model_forecast, Evaluation, Forecast, Forecaster};
use super::manifest::RunManifest;
use super::plot::{plot_report, plot_roc};
use super::train::{fit_dynamics, fit_vqvae, token_dataset, write_log_csv};
use super::RunConfig;
use crate::classifier::TokenClassifier;
use crate::data::{read_dataset, read_sequence, synth_storms, write_dataset, write_sequence, RadarFrame, RadarSequence};
use crate::dynamics::{Dynamics, Sampling};
use crate::error::{NowcastError, Result};
use crate::nn::Checkpoint;
use crate::vqvae::VqVae;

pub const TOKENIZER_FILE: &str = "tokenizer.ckpt";

/// Checkpoint name for a dynamics run with or without the extreme value loss.
pub fn dynamics_file(evl: bool) -> &'static str {
    if evl {
        "dynamics_evl.ckpt"
    } else {
        "dynamics.ckpt"
    }
}

/// Training and test sequences: the last `test_fraction` of the dataset
/// (at least one sequence when the fraction is positive) is held out.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<RadarSequence>, Vec<RadarSequence>)> {
    let all = read_dataset(&cfg.data.dataset_dir)?;
    if all.is_empty() {
        return Err(NowcastError::InsufficientData { found: 0, required: 1 });
    }
    if cfg.data.test_fraction == 0.0 {
        return Ok((all.clone(), all));
    }
    let n_test = ((all.len() as f64 * cfg.data.test_fraction).ceil() as usize).clamp(1, all.len());
    if n_test == all.len() {
        return Err(NowcastError::InsufficientData {
            found: all.len(),
            required: n_test + 1,
        });
    }
    let mut train = all;
    let test = train.split_off(train.len() - n_test);
    Ok((train, test))
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub dataset_dir: PathBuf,
    pub sequences: usize,
    pub bursts: usize,
}

pub fn synth_data(cfg: &RunConfig, args: Vec<String>) -> Result<SynthSummary> {
    let d = &cfg.data;
    let set = synth_storms(cfg.primary_seed(), d.n_sequences, (d.height, d.width), d.extreme_fraction, &d.storm)?;
    write_dataset(&set.sequences, &d.dataset_dir)?;
    let mut manifest = RunManifest::new("synth-data", args, cfg, &[])?;
    manifest.outputs.push(d.dataset_dir.display().to_string());
    manifest.write(&cfg.output_dir)?;
    Ok(SynthSummary {
        dataset_dir: d.dataset_dir.clone(),
        sequences: set.sequences.len(),
        bursts: set.burst_count(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VqSummary {
    pub checkpoint: PathBuf,
    pub first_reconstruction: f64,
    pub final_reconstruction: f64,
    pub final_total: f64,
    pub codes_used: usize,
}

pub fn train_vqvae(cfg: &RunConfig, args: Vec<String>) -> Result<VqSummary> {
    let (train, _) = load_split(cfg)?;
    let frames: Vec<&RadarFrame> = train.iter().flat_map(|s| s.frames()).collect();
    let (model, log) = fit_vqvae(cfg, &frames, cfg.primary_seed())?;
    fs::create_dir_all(&cfg.output_dir)?;
    let ckpt_path = cfg.output_dir.join(TOKENIZER_FILE);
    let mut ckpt = model.to_checkpoint()?;
    ckpt.meta["steps"] = cfg.train.vqvae_steps.into();
    ckpt.meta["seed"] = cfg.primary_seed().into();
    ckpt.save(&ckpt_path)?;
    let csv = cfg.output_dir.join("vqvae_loss.csv");
    write_log_csv(&log, &csv)?;

    let mut manifest = RunManifest::new("train-vqvae", args, cfg, &[cfg.data.dataset_dir.clone()])?;
    manifest.outputs = vec![ckpt_path.display().to_string(), csv.display().to_string()];
    manifest.write(&cfg.output_dir)?;
    let first = log.first().ok_or_else(|| NowcastError::Config("train.vqvae_steps must be positive".into()))?;
    let last = log.last().expect("non-empty");
    Ok(VqSummary {
        checkpoint: ckpt_path,
        first_reconstruction: first.reconstruction,
        final_reconstruction: last.reconstruction,
        final_total: last.total,
        codes_used: last.codes_used,
    })
}

pub fn load_tokenizer(path: &Path) -> Result<VqVae> {
    VqVae::load(path, &Device::Cpu)
}

#[derive(Debug, Clone, Serialize)]
pub struct DynSummary {
    pub checkpoint: PathBuf,
    pub evl_enabled: bool,
    pub lambda: f64,
    pub final_ar_loss: f64,
    pub final_total: f64,
    pub extreme_token_share: f64,
}

pub fn train_dynamics(cfg: &RunConfig, evl: bool, lambda: Option<f64>, args: Vec<String>) -> Result<DynSummary> {
    let tok_path = cfg.output_dir.join(TOKENIZER_FILE);
    let vq = load_tokenizer(&tok_path)?;
    if vq.config().codebook_size != cfg.dynamics.vocab_size {
        return Err(NowcastError::Config(format!(
            "tokenizer checkpoint has {} codes but dynamics.vocab_size is {}",
            vq.config().codebook_size,
            cfg.dynamics.vocab_size
        )));
    }
    cfg.check_token_shapes()?;
    let lambda = lambda.unwrap_or(cfg.evl.lambda);
    let (train, _) = load_split(cfg)?;
    let data = token_dataset(&vq, &train, cfg.evl.threshold_mm)?;
    let trained = fit_dynamics(cfg, &data, cfg.primary_seed(), evl, lambda)?;

    let mut ckpt = trained.dynamics.to_checkpoint()?;
    ckpt.meta["evl_enabled"] = evl.into();
    ckpt.meta["lambda"] = lambda.into();
    ckpt.meta["evl"] = serde_json::to_value(cfg.evl)?;
    ckpt.meta["vqvae_config"] = serde_json::to_value(vq.config())?;
    ckpt.meta["seed"] = cfg.primary_seed().into();
    if let Some(clf) = &trained.classifier {
        clf.export_into(&mut ckpt)?;
    }
    let ckpt_path = cfg.output_dir.join(dynamics_file(evl));
    ckpt.save(&ckpt_path)?;
    let csv = cfg.output_dir.join(if evl { "dynamics_evl_loss.csv" } else { "dynamics_loss.csv" });
    write_log_csv(&trained.log, &csv)?;

    let mut manifest = RunManifest::new(
        if evl { "train-dynamics-evl" } else { "train-dynamics" },
        args,
        cfg,
        &[cfg.data.dataset_dir.clone(), tok_path],
    )?;
    manifest.outputs = vec![ckpt_path.display().to_string(), csv.display().to_string()];
    manifest.write(&cfg.output_dir)?;
    let last = trained
        .log
        .last()
        .ok_or_else(|| NowcastError::Config("train.dynamics_steps must be positive".into()))?;
    Ok(DynSummary {
        checkpoint: ckpt_path,
        evl_enabled: evl,
        lambda,
        final_ar_loss: last.ar_loss,
        final_total: last.total,
        extreme_token_share: data.extreme_share(),
    })
}

/// Dynamics model and, when stored, its classifier.
pub fn load_dynamics(path: &Path) -> Result<(Dynamics, Option<TokenClassifier>)> {
    let ckpt = Checkpoint::load(path, &Device::Cpu)?;
    let dynamics = Dynamics::from_checkpoint(&ckpt, DType::F32, &Device::Cpu)?;
    let classifier = if ckpt.has_prefix("classifier.") {
        Some(TokenClassifier::from_checkpoint(&ckpt, DType::F32, &Device::Cpu)?)
    } else {
        None
    };
    Ok((dynamics, classifier))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub report_csv: PathBuf,
    pub auc: f64,
    pub bundles: usize,
    pub mean_generation_seconds: f64,
    pub plots: Vec<PathBuf>,
}

/// Report CSV, ROC points, summary JSON and plots for one evaluation.
pub fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<EvalSummary> {
    fs::create_dir_all(dir)?;
    let report_csv = dir.join("report.csv");
    eval.report.save_csv(&report_csv)?;
    write_log_csv(&eval.roc.points, &dir.join("roc.csv"))?;
    let plot_dir = dir.join("plots");
    fs::create_dir_all(&plot_dir)?;
    let mut plots = plot_report(&eval.report, &plot_dir)?;
    let roc_png = plot_dir.join("roc.png");
    plot_roc(&eval.roc, &roc_png)?;
    plots.push(roc_png);
    let summary = EvalSummary {
        report_csv,
        auc: eval.auc,
        bundles: eval.n_bundles,
        mean_generation_seconds: eval.mean_generation_seconds,
        plots,
    };
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

pub fn evaluate_cmd(cfg: &RunConfig, dynamics_path: &Path, sampling: Sampling, args: Vec<String>) -> Result<EvalSummary> {
    let tok_path = cfg.output_dir.join(TOKENIZER_FILE);
    let vq = load_tokenizer(&tok_path)?;
    let (dynamics, _) = load_dynamics(dynamics_path)?;
    let (_, test) = load_split(cfg)?;
    let forecaster = Forecaster::Model {
        vq: &vq,
        dynamics: &dynamics,
        sampling,
    };
    let eval = evaluate(&forecaster, &test, &cfg.seeds, &cfg.metrics)?;
    let stem = dynamics_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let dir = cfg.output_dir.join(format!("eval_{stem}"));
    let summary = write_evaluation(&eval, &dir)?;
    let mut manifest = RunManifest::new(
        "evaluate",
        args,
        cfg,
        &[cfg.data.dataset_dir.clone(), tok_path, dynamics_path.to_path_buf()],
    )?;
    manifest.outputs = vec![dir.display().to_string()];
    manifest.write(&dir)?;
    Ok(summary)
}

pub fn baseline_cmd(cfg: &RunConfig, args: Vec<String>) -> Result<EvalSummary> {
    let (_, test) = load_split(cfg)?;
    let eval = evaluate(&Forecaster::Persistence, &test, &cfg.seeds, &cfg.metrics)?;
    let dir = cfg.output_dir.join("eval_persistence");
    let summary = write_evaluation(&eval, &dir)?;
    let mut manifest = RunManifest::new("baseline", args, cfg, &[cfg.data.dataset_dir.clone()])?;
    manifest.outputs = vec![dir.display().to_string()];
    manifest.write(&dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateSummary {
    pub output: PathBuf,
    pub frames: usize,
    pub generation_seconds: f64,
}

/// Forecasts from the first context frames of the sequence at `input`
/// (a dataset header file) and writes the six frames as a sequence.
pub fn generate_cmd(cfg: &RunConfig, dynamics_path: &Path, input: &Path, sampling: Sampling, args: Vec<String>) -> Result<GenerateSummary> {
    let tok_path = cfg.output_dir.join(TOKENIZER_FILE);
    let vq = load_tokenizer(&tok_path)?;
    let (dynamics, _) = load_dynamics(dynamics_path)?;
    let seq = read_sequence(input)?;
    let n_ctx = dynamics.config().context_frames;
    if seq.len() < n_ctx {
        return Err(NowcastError::InsufficientData {
            found: seq.len(),
            required: n_ctx,
        });
    }
    let Forecast {
        predicted,
        generation_seconds,
    } = model_forecast(&vq, &dynamics, &seq.frames()[..n_ctx], sampling)?;
    let n = predicted.len();
    let out_dir = cfg.output_dir.join("generated");
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("sequence");
    let out = write_sequence(&RadarSequence::new(predicted, seq.spacing_min())?, &out_dir, stem)?;
    fs::write(
        out_dir.join(format!("{stem}_timing.json")),
        serde_json::to_vec_pretty(&serde_json::json!({ "generation_seconds": generation_seconds, "sampling": sampling }))?,
    )?;
    let mut manifest = RunManifest::new("generate", args, cfg, &[input.to_path_buf(), tok_path, dynamics_path.to_path_buf()])?;
    manifest.outputs = vec![out.display().to_string()];
    manifest.write(&out_dir)?;
    Ok(GenerateSummary {
        output: out,
        frames: n,
        generation_seconds,
    })
}
