//! Airflow-inertial odometry.
//!
//! Dead reckoning for multirotors that fuses an IMU with learned relative
//! airflow measurements and, in windy environments, a Gaussian-process map of
//! a stationary wind field:
//!
//! - [`geom`]: SO(3) helpers.
//! - [`sim`]: synthetic flights, wind fields and sensor logs.
//! - [`airflow`]: the LSTM relative-airflow regressor.
//! - [`windmap`]: exact and sparse variational GP wind maps.
//! - [`ekf`]: the 18-state error-state EKF.
//! - [`eval`]: trajectory metrics and failure-injection experiments.

pub mod airflow;
pub mod ekf;
pub mod eval;
pub mod geom;
pub mod optim;
pub mod sim;
pub mod windmap;
