//! Experiment presets, training, lead-time evaluation and run artifacts.

mod batch;
mod config;
mod eval;
mod optim;
mod run;
mod train;

pub use batch::{all_samples, build_batch, part_task, record_parts, task_losses, Batch, Needs, Sample};
pub use config::{ExperimentConfig, GroupHyper, OptimizerKind, Preset, Surgery, Weighting};
pub use eval::{evaluate_by_leadtime, identity_probe, infer, latent_oracle, report_from_scores, WindowOutputs};
pub use optim::{Group, Optimizer};
pub use run::{
    conflict_report, evaluate_checkpoint, run_preset, run_seed, run_sweep, train_and_evaluate, write_loss_csv,
    ConflictSummary, PresetSummary, SeedRun, SeedSummary, CHECKPOINT_FILE, CONFIG_FILE, CONFLICT_FILE, LOSS_FILE,
    METRICS_FILE, SUMMARY_FILE,
};
pub use train::{train, train_from, LossRow, TrainOutput};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no patients to train on")]
    EmptyCohort,
    #[error("non-finite {loss} loss ({value}) at step {step}")]
    NonFiniteLoss { step: u64, loss: String, value: f64 },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tape(#[from] crate::autodiff::TapeError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Surgery(#[from] crate::surgery::SurgeryError),
    #[error(transparent)]
    Data(#[from] crate::datagen::DatagenError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
}
