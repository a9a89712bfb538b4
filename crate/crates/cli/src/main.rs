use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nowcast_core::dynamics::Sampling;
use nowcast_core::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(name = "nowcast", version, about = "Tokenized radar nowcasting with an extreme value loss")]
struct Cli {
    /// Config file (key=value lines or a JSON document).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.vqvae_steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic storm dataset into `data.dataset_dir`.
    SynthData,
    /// Train the tokenizer on the training split.
    TrainVqvae,
    /// Train the autoregressive model on tokens from the trained tokenizer.
    TrainDynamics {
        /// Add the extreme value loss and train the token classifier.
        #[arg(long)]
        evl: bool,
        /// Loss weight; defaults to `evl.lambda` from the config.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score forecasts on the test split and write reports and plots.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Forecast six frames from the first context frames of one sequence.
    Generate {
        /// Dataset header file of the input sequence.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Score the persistence forecast on the test split.
    Baseline,
}

#[derive(Args)]
struct ModelArgs {
    /// Dynamics checkpoint; defaults to the one in `output_dir`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use the checkpoint trained with the extreme value loss.
    #[arg(long, conflicts_with = "checkpoint")]
    evl: bool,
}

impl ModelArgs {
    fn path(&self, cfg: &RunConfig) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| cfg.output_dir.join(pipeline::dynamics_file(self.evl)))
    }
}

#[derive(Args)]
struct SamplingArgs {
    /// Pick the most likely token at every step.
    #[arg(long, conflicts_with_all = ["temp", "seed"])]
    greedy: bool,
    #[arg(long, default_value_t = 1.0)]
    temp: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplingArgs {
    fn sampling(&self) -> Result<Sampling> {
        if self.greedy {
            return Ok(Sampling::Greedy);
        }
        if !(self.temp > 0.0 && self.temp.is_finite()) {
            bail!("--temp must be positive, got {}", self.temp);
        }
        Ok(Sampling::Categorical {
            temperature: self.temp,
            seed: self.seed,
        })
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    for assignment in &cli.overrides {
        cfg = cfg
            .with_override(assignment)
            .with_context(|| format!("applying --set {assignment}"))?;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    match &cli.command {
        Command::SynthData => print_json(&pipeline::synth_data(&cfg, args)?),
        Command::TrainVqvae => print_json(&pipeline::train_vqvae(&cfg, args)?),
        Command::TrainDynamics { evl, lambda } => print_json(&pipeline::train_dynamics(&cfg, *evl, *lambda, args)?),
        Command::Evaluate { model, sampling } => {
            let path = model.path(&cfg);
            print_json(&pipeline::evaluate_cmd(&cfg, &path, sampling.sampling()?, args)?)
        }
        Command::Generate { input, model, sampling } => {
            let path = model.path(&cfg);
            print_json(&pipeline::generate_cmd(&cfg, &path, input, sampling.sampling()?, args)?)
        }
        Command::Baseline => print_json(&pipeline::baseline_cmd(&cfg, args)?),
    }
}
