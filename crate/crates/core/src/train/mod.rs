//! Adam, the training loop, cross-validation and ablation.

mod adam;
mod config;
mod experiment;
mod trainer;

pub use adam::AdamState;
pub use config::TrainConfig;
pub use experiment::{
    ablate, ablation_grid, cross_validate, mean_sd, AblationReport, AblationRow, AblationTable, Aggregate,
    ExperimentReport, FoldSummary, ImageRow, MeanSd, PreparedData, Progress, STREAM_AUGMENT, STREAM_PHANTOMS,
};
pub use trainer::{predict, segment, train, EpochStats, TrainOutcome, TrainSeeds, Trainer};
