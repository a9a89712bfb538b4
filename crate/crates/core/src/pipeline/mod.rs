//! Orchestration: configuration, staged training, forecasting, evaluation
//! reports and plots, run manifests, and the command entry points used by
//! the binary.

mod commands;
mod config;
mod extreme_stream;
mod forecast;
mod manifest;
mod plot;
mod train;

pub use commands::{
    baseline_cmd, dynamics_file, evaluate_cmd, generate_cmd, load_dynamics, load_split, load_tokenizer, synth_data,
    train_dynamics, train_vqvae, write_evaluation, DynSummary, EvalSummary, GenerateSummary, SynthSummary, VqSummary,
    TOKENIZER_FILE,
};
pub use config::{DataConfig, RunConfig, TrainConfig};
pub use extreme_stream::{extreme_recall_experiment, teacher_forced_recall, ExtremeStream, ExtremeStreamConfig, RecallOutcome};
pub use forecast::{evaluate, model_forecast, persistence_baseline, Evaluation, Forecast, Forecaster};
pub use manifest::{hash_bytes, hash_inputs, InputDigest, RunManifest};
pub use plot::{line_plot, plot_report, plot_roc, Series};
pub use train::{fit_dynamics, fit_vqvae, token_dataset, write_log_csv, DynLogRow, TokenDataset, TrainedDynamics, VqLogRow};
