//! Orchestration: run configuration, the three-stage training schedule,
//! checkpointing, evaluation and ablation sweeps.

mod ablate;
mod checkpoint;
mod config;
mod eval;
mod train;

pub use ablate::{ablate, read_rows as read_ablation_rows, AblateRow};
pub use checkpoint::{file_sha256, Checkpoint, Stage};
pub use config::{RunConfig, StageEpochs, SEED_ENV_VAR};
pub use eval::{evaluate, export_pr, predict_frame, EvalOutcome};
pub use train::{snap_size, train, train_resume, TrainOutcome};
