//! Objective, optimizer, learning-rate schedule and the training loop.

pub mod adam;
pub mod fit;
pub mod loss;
pub mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use fit::{
    feature_statistics, fit, fit_dataset, score_bags, summarize, write_history, BagScore,
    EpochRecord, FitOutcome, TrainConfig, TrainState, HISTORY_HEADER,
};
pub use loss::{l2_penalty, loss_value, objective, InstanceScope, LossParts};
pub use schedule::cosine_lr;
