//! Dead-reckoning metrics, the failure-injection protocol and the
//! end-to-end pipeline with its preset scenarios.

mod experiment;
mod metrics;
pub mod pipeline;
pub mod presets;

pub use experiment::{
    quantile, run_experiment, run_experiment_with, score_segment, Aggregate, ExperimentInputs, ExperimentResult,
    ExperimentSpec, ModeAggregate, RunRecord, Summary,
};
pub use metrics::{
    compute_metrics, drift, path_length, rmse, rte, rte_2s, rte_window_samples, yaw_rmse, Metrics, GIMBAL_MARGIN,
    RTE_WINDOW_S,
};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineOutput};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty trajectory")]
    Empty,
    #[error("estimate has {est} samples but ground truth has {gt}")]
    LengthMismatch { est: usize, gt: usize },
    #[error("sequence of {len} samples is shorter than the {needed} required")]
    TooShort { len: usize, needed: usize },
    #[error("ground-truth path length is zero, drift is undefined")]
    ZeroPathLength,
    #[error("every sample is at gimbal lock, yaw is undefined")]
    GimbalLock,
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
}
