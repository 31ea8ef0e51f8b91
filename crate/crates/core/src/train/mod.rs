//! Optimization loop: Rectified Adam, cross-entropy, epochs, checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod radam;
pub mod trainer;

pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use gradcheck::{model_gradcheck, GradcheckReport, GradcheckSpec};
pub use radam::{radam_step, OptimizerState, RadamConfig, StepInfo};
pub use trainer::{
    append_metrics, build_model, evaluate, evaluate_with, fit, forward_batch, rpe_encoder, train_epoch, train_step,
    EpochMetrics, EpochReport, EvalMetrics, TrainState,
};
