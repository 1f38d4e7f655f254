//! Progressive training: level labels, losses, optimizer and the two stages.

pub mod data;
pub mod levels;
pub mod losses;
pub mod optim;
pub mod trainer;

pub use data::{load_samples, prepare_samples, KceCache, Sample, TrainItem, CACHE_ENV};
pub use levels::{assign_levels, level_for, tertile_bounds, QualityLevel};
pub use losses::{cross_entropy, plcc_loss, PlccLoss};
pub use optim::{Adam, StepLr};
pub use trainer::{
    derive_seed, epoch_batches, evaluate_split, expected_level_score, initial_prediction_model, log_to_csv,
    train_classification, train_prediction, LogRow, SplitScores, TrainConfig, TrainOutcome, LOG_HEADER,
};
