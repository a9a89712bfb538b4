use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::ClassifierConfig;
use crate::data::StormConfig;
use crate::dynamics::DynamicsConfig;
use crate::error::{NowcastError, Result};
use crate::evl::EvlParams;
use crate::metrics::MetricsConfig;
use crate::nn::OptimConfig;
use crate::vqvae::VqVaeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `<stem>.json` + `<stem>.bin` sequence pairs.
    pub dataset_dir: PathBuf,
    /// Sequences produced by `synth-data`.
    pub n_sequences: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of synthetic sequences carrying a burst.
    pub extreme_fraction: f64,
    /// Trailing share of the dataset held out for evaluation; 0 evaluates
    /// on the training sequences.
    pub test_fraction: f64,
    pub storm: StormConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("data"),
            n_sequences: 32,
            height: 16,
            width: 16,
            extreme_fraction: 0.05,
            test_fraction: 0.25,
            storm: StormConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub vqvae_steps: usize,
    /// Frames per tokenizer step.
    pub vqvae_batch: usize,
    pub vqvae_optim: OptimConfig,
    /// Steps between dead-code reseeding passes when enabled.
    pub reseed_interval: usize,
    pub dynamics_steps: usize,
    /// Sequences per dynamics step.
    pub dynamics_batch: usize,
    pub dynamics_optim: OptimConfig,
    pub classifier_optim: OptimConfig,
    /// Loss rows are written every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            vqvae_steps: 3000,
            vqvae_batch: 8,
            vqvae_optim: OptimConfig {
                lr: 1e-3,
                ..OptimConfig::default()
            },
            reseed_interval: 100,
            dynamics_steps: 3000,
            dynamics_batch: 8,
            dynamics_optim: OptimConfig::default(),
            classifier_optim: OptimConfig::default(),
            log_every: 10,
        }
    }
}

/// Every knob of a run. Unknown keys are rejected at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub vqvae: VqVaeConfig,
    pub dynamics: DynamicsConfig,
    pub classifier: ClassifierConfig,
    pub evl: EvlParams,
    pub metrics: MetricsConfig,
    pub train: TrainConfig,
    /// One evaluation (and sampling stream) per seed; the first also seeds
    /// training.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Advisory only; everything runs on the CPU.
    pub device: String,
    /// Advisory only; training uses f32.
    pub precision: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            vqvae: VqVaeConfig::default(),
            dynamics: DynamicsConfig::default(),
            classifier: ClassifierConfig::default(),
            evl: EvlParams::default(),
            metrics: MetricsConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs/default"),
            device: "cpu".into(),
            precision: "f32".into(),
        }
    }
}

impl RunConfig {
    /// Parses a JSON document, or `key = value` lines with dotted keys
    /// (`vqvae.codebook_size = 64`). Values are read as JSON when they parse
    /// as JSON and as strings otherwise. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let cfg: Self = if trimmed.starts_with('{') {
            serde_json::from_str(text).map_err(|e| NowcastError::Config(e.to_string()))?
        } else {
            let mut doc = serde_json::to_value(Self::default())?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    NowcastError::Config(format!("line {}: expected key = value", lineno + 1))
                })?;
                set_path(&mut doc, key.trim(), parse_value(value.trim()))
                    .map_err(|m| NowcastError::Config(format!("line {}: {m}", lineno + 1)))?;
            }
            serde_json::from_value(doc).map_err(|e| NowcastError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key=value` override on top of this config.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| NowcastError::Config(format!("override {assignment:?} is not key=value")))?;
        let mut doc = serde_json::to_value(self)?;
        set_path(&mut doc, key.trim(), parse_value(value.trim())).map_err(NowcastError::Config)?;
        let cfg: Self = serde_json::from_value(doc).map_err(|e| NowcastError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.vqvae.validate()?;
        self.dynamics.validate()?;
        self.classifier.validate()?;
        self.evl.validate()?;
        if self.seeds.is_empty() {
            return Err(NowcastError::Config("at least one seed is required".into()));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(NowcastError::Config(format!(
                "data.test_fraction must lie in [0, 1), got {}",
                self.data.test_fraction
            )));
        }
        if self.train.vqvae_batch == 0 || self.train.dynamics_batch == 0 || self.train.log_every == 0 {
            return Err(NowcastError::Config("batch sizes and log_every must be positive".into()));
        }
        Ok(())
    }

    /// Dynamics and classifier shapes implied by the tokenizer and frame size.
    pub fn check_token_shapes(&self) -> Result<()> {
        let f = self.vqvae.downsample;
        let per_frame = (self.data.height / f) * (self.data.width / f);
        if self.dynamics.vocab_size != self.vqvae.codebook_size {
            return Err(NowcastError::Config(format!(
                "dynamics.vocab_size {} differs from vqvae.codebook_size {}",
                self.dynamics.vocab_size, self.vqvae.codebook_size
            )));
        }
        if self.classifier.vocab_size != self.vqvae.codebook_size {
            return Err(NowcastError::Config(format!(
                "classifier.vocab_size {} differs from vqvae.codebook_size {}",
                self.classifier.vocab_size, self.vqvae.codebook_size
            )));
        }
        if self.dynamics.tokens_per_frame != per_frame {
            return Err(NowcastError::Config(format!(
                "dynamics.tokens_per_frame {} but {}x{} frames at downsampling {f} give {per_frame}",
                self.dynamics.tokens_per_frame, self.data.height, self.data.width
            )));
        }
        Ok(())
    }

    pub fn primary_seed(&self) -> u64 {
        self.seeds[0]
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.trim_matches('"').to_string()))
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("{} is not a section", parts[..i].join(".")))?;
        if !obj.contains_key(*part) {
            return Err(format!("unknown key {key:?}"));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    Err(format!("empty key {key:?}"))
}
