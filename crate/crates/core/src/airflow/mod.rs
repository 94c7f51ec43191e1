//! Relative airflow estimation from whisker deflections, IMU and throttle
//! with a small recurrent network.

mod estimator;
mod model;
mod network;
mod train;

pub use estimator::{estimate_airflow, AirflowEstimator, AirflowMeasurement, EMIT_EVERY};
pub use model::{feature, features, FeatureMask, LstmRegressor, FEATURES, MODEL_FORMAT};
pub use network::{backward, forward, Architecture, Layout, Workspace};
pub use train::{
    build_datasets, evaluate_mse, identify_measurement_cov, log_samples, loss_and_gradient,
    lstm_train, train_windows, EpochStats, TrainedModel, TrainingConfig, WindowDataset,
};

#[derive(Debug, thiserror::Error)]
pub enum AirflowError {
    #[error("window has shape {got:?}, expected {expected:?}")]
    WindowShape { expected: (usize, usize), got: (usize, usize) },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, checkpoint: Box<LstmRegressor>, history: Vec<EpochStats> },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
