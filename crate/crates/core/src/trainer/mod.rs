//! Two-stage training schedule, checkpoints and inference.

mod checkpoint;
mod config;
mod models;
mod run;

pub use checkpoint::{
    log_path, meta_path, weights_path, Checkpoint, CheckpointMeta, EpochLosses, RngState, Stage,
    StreamState, CHECKPOINT_SCHEMA_VERSION,
};
pub use config::{
    config_digest, Ablation, AblationFlags, ModelConfig, TrainConfig, DETERMINISTIC_ENV,
};
pub use models::{
    derive_seed, infer, CoarseModel, FineModel, Pipeline, COARSE_DISC_PREFIX, COARSE_PREFIX,
    DISC_PREFIX, FINE_PREFIX,
};
pub use run::{train_coarse, train_fine, Phase, StageRun, StepRecord};
