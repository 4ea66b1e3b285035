//! Training orchestration, checkpoints and synthetic-pair datasets.

pub mod config;
pub mod dataset;
pub mod model;
pub mod trainer;

pub use config::{apply_overrides, lr_schedule, Strategy, TrainConfig};
pub use dataset::{make_denoiser_dataset, ConditionPolicy};
pub use model::{NoiseModel, RngStates, TrainState, MODEL_KIND};
pub use trainer::{
    epoch_checkpoint_name, load_training_pairs, split_scenes, train, Batch, EpochSummary, StepRecord, TrainOutcome,
    Trainer, BEST_NAME, LOG_NAME,
};
