//! Error-state EKF over position, velocity, attitude, IMU biases and a wind
//! error, fusing IMU prediction with relative-airflow and odometry updates.
//!
//! Error-state ordering is `(p, v, φ, b_a, b_g, e_w)`, three components
//! each. The attitude error composes on the left, `R = exp(φ) · R_ref`, and
//! is folded into `R_ref` after every update.

mod filter;
mod run;

pub use filter::{
    airflow_jacobian, airflow_prediction, idx, modeled_wind, odometry_model, predict, process_noise,
    propagate_nominal, transition_jacobian, update_airflow, update_odometry, FilterState, OdomMeasurement,
    ProcessNoiseSpec, StateMatrix, StateVector, UpdateInfo, UpdateKind, UpdateOutcome, MAX_DT, STATE_DIM,
};
pub use run::{
    run_filter, EstimateRow, FilterConfig, FilterDiagnostics, FilterInputs, FilterMode, FilterOutput, InitPolicy,
    OdomPolicy, UpdateCounts, STATE_LABELS,
};

#[derive(Debug, thiserror::Error)]
pub enum EkfError {
    #[error("time step {0} s is outside (0, {MAX_DT}]")]
    InvalidTimestep(f64),
    #[error("non-finite IMU sample at t = {t} s")]
    NonFiniteImu { t: f64 },
    #[error("invalid process noise: {0}")]
    InvalidNoise(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("mode {mode} needs {artifact}")]
    MissingArtifact { mode: FilterMode, artifact: &'static str },
    #[error("unknown filter mode {0:?} (expected imu-only, aio-no-map or aio-with-map)")]
    UnknownMode(String),
    #[error("sensor log has no rows")]
    EmptyLog,
    #[error("first log row has no odometry to initialize from")]
    NoInitialOdometry,
    #[error("at log row {row}: {source}")]
    AtRow { row: usize, source: Box<EkfError> },
}
