//! Synthetic flights: kinematic trajectories, a stationary jet wind field with
//! turbulence, and the sensor streams an airflow-inertial estimator consumes.

pub(crate) mod log;
mod sensors;
mod trajectory;
mod wind;

pub use log::{LogMeta, LogRow, Odometry, SensorLog, TruthRow, SENSOR_LOG_FORMAT};
pub use sensors::{
    synthesize_sensors, SensorNoiseSpec, WhiskerModel, WhiskerMount, THROTTLE_CHANNELS,
    WHISKER_COUNT,
};
pub use trajectory::{
    generate_trajectory, thrust_aligned_attitude, Shape, TrajectorySpec, TruthSample, Waypoint,
    YawProfile, MAX_PEAK_SPEED,
};
pub use wind::{wind_at, wind_jacobian, Jet, Turbulence, WindFieldSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The airflow sensors sample at a quarter of the IMU rate (50 Hz at 200 Hz).
pub const AIRFLOW_DECIMATION: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible trajectory: {0}")]
    Infeasible(String),
    #[error("malformed sensor log: {0}")]
    MalformedLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Independent, reproducible random stream `stream` of the root `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates one flight end to end.
pub fn simulate_flight(
    trajectory: &TrajectorySpec,
    wind: &WindFieldSpec,
    noise: &SensorNoiseSpec,
    whiskers: &WhiskerModel,
    failure_time: Option<f64>,
    seed: u64,
) -> Result<SensorLog, SimError> {
    let truth = generate_trajectory(trajectory)?;
    synthesize_sensors(&truth, wind, noise, whiskers, failure_time, seed)
}
