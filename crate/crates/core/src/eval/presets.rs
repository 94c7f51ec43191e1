//! Ready-made scenarios.
//!
//! `zero-wind` flies in still air. `jet-field` adds a horizontal jet; its map
//! is built from a separate mapping flight over the same volume, and the
//! evaluation flight loses odometry away from the jet and then crosses it.

use super::experiment::ExperimentSpec;
use super::pipeline::{MapStageConfig, PipelineConfig};
use crate::airflow::TrainingConfig;
use crate::ekf::{FilterConfig, FilterMode};
use crate::sim::{Jet, SensorNoiseSpec, Shape, TrajectorySpec, WhiskerModel, WindFieldSpec, YawProfile};

const WIND_WALK: f64 = 0.05;

pub const PRESETS: [&str; 2] = ["zero-wind", "jet-field"];

/// A low-cost MEMS IMU with noticeable bias instability, and a motion
/// capture style odometry source.
pub fn consumer_imu() -> SensorNoiseSpec {
    SensorNoiseSpec {
        accel_noise_density: 0.03,
        gyro_noise_density: 0.003,
        accel_bias_walk: 0.02,
        gyro_bias_walk: 1e-3,
        accel_bias_init: 0.1,
        gyro_bias_init: 0.01,
        whisker_noise_std: 0.002,
        throttle_noise_std: 0.01,
        battery_factor_std: 0.03,
        odom_position_std: 0.01,
        odom_velocity_std: 0.02,
        odom_attitude_std: 0.005,
    }
}

fn lissajous(duration: f64, amplitude: [f64; 3], frequency_hz: [f64; 3], phase: [f64; 3], peak: f64) -> TrajectorySpec {
    TrajectorySpec {
        duration,
        rate_hz: 200.0,
        shape: Shape::Lissajous { center: [0.0, 0.0, 1.5], amplitude, frequency_hz, phase },
        peak_speed: peak,
        yaw: YawProfile::Sinusoid { mean: 0.0, amplitude: 0.8, period: 11.0 },
    }
}

/// Still-air flights covering the speed and attitude envelope.
fn training_flights() -> Vec<TrajectorySpec> {
    let mut flights = vec![
        lissajous(60.0, [2.5, 2.0, 0.6], [0.11, 0.13, 0.17], [0.0, 0.4, 1.1], 3.0),
        lissajous(60.0, [2.5, 2.0, 0.6], [0.11, 0.13, 0.17], [0.7, 1.1, 1.1], 3.0),
        lissajous(60.0, [3.0, 2.5, 0.5], [0.07, 0.09, 0.13], [1.4, 1.8, 0.3], 2.5),
        lissajous(60.0, [2.0, 3.0, 0.7], [0.13, 0.08, 0.19], [2.1, 0.2, 0.9], 2.8),
        lissajous(60.0, [3.0, 3.0, 0.4], [0.06, 0.11, 0.15], [0.5, 2.6, 1.7], 2.8),
    ];
    flights.push(TrajectorySpec {
        duration: 60.0,
        rate_hz: 200.0,
        shape: Shape::Circle { center: [0.0, 0.0, 1.5], radius: 2.0, period: 9.0 },
        peak_speed: 2.5,
        yaw: YawProfile::Tracking,
    });
    flights
}

/// Evaluation flights, distinct from the training set. Repetitions cycle
/// through them.
fn evaluation_flights() -> Vec<TrajectorySpec> {
    (0..5)
        .map(|i| {
            let k = i as f64;
            lissajous(30.0, [2.0, 2.5, 0.4], [0.09, 0.12, 0.2], [0.3 + 1.2 * k, 0.9 * k, 0.5], 2.5)
        })
        .collect()
}

fn training() -> TrainingConfig {
    TrainingConfig { epochs: 40, ..Default::default() }
}

fn experiment(modes: Vec<FilterMode>) -> ExperimentSpec {
    ExperimentSpec {
        modes,
        repetitions: 10,
        failure_window_start: 20.0,
        failure_window_width: 2.0,
        horizon: Some(30.0),
        ..Default::default()
    }
}

pub fn zero_wind() -> PipelineConfig {
    let noise = consumer_imu();
    PipelineConfig {
        name: "zero-wind".into(),
        seed: 7,
        training_flights: training_flights(),
        mapping_flight: None,
        evaluation_flights: evaluation_flights(),
        wind: WindFieldSpec::calm(),
        filter: FilterConfig::matched_to(&noise, WIND_WALK),
        noise,
        whiskers: WhiskerModel::default(),
        training: training(),
        windmap: MapStageConfig::default(),
        experiment: experiment(vec![FilterMode::ImuOnly, FilterMode::AioNoMap]),
    }
}

/// The jet blows along +x through the middle of the flight volume.
pub fn jet() -> WindFieldSpec {
    WindFieldSpec {
        jets: vec![Jet {
            origin: [-4.0, 0.0, 1.5],
            direction: [1.0, 0.0, 0.0],
            core_speed: 2.0,
            radial_decay: 1.0,
            axial_decay: 8.0,
        }],
        turbulence_intensity: 0.05,
        turbulence_correlation_time: 0.5,
    }
}

/// Circles that sit at their farthest from the jet axis during the failure
/// window and cross the jet twice afterwards.
fn jet_evaluation_flights() -> Vec<TrajectorySpec> {
    (0..5)
        .map(|i| {
            let k = i as f64;
            TrajectorySpec {
                duration: 30.0,
                rate_hz: 200.0,
                shape: Shape::Circle { center: [-0.5 + 0.25 * k, 0.0, 1.5], radius: 2.0 + 0.25 * k, period: 12.0 },
                peak_speed: 2.5,
                yaw: YawProfile::Sinusoid { mean: 0.0, amplitude: 0.8, period: 11.0 },
            }
        })
        .collect()
}

pub fn jet_field() -> PipelineConfig {
    let noise = consumer_imu();
    PipelineConfig {
        name: "jet-field".into(),
        seed: 11,
        training_flights: training_flights(),
        mapping_flight: Some(lissajous(150.0, [3.0, 3.0, 0.6], [0.05, 0.07, 0.11], [0.2, 0.9, 0.0], 2.0)),
        evaluation_flights: jet_evaluation_flights(),
        wind: jet(),
        filter: FilterConfig::matched_to(&noise, 0.3),
        noise,
        whiskers: WhiskerModel::default(),
        training: training(),
        windmap: MapStageConfig::default(),
        experiment: experiment(FilterMode::ALL.to_vec()),
    }
}

pub fn preset(name: &str) -> Option<PipelineConfig> {
    match name {
        "zero-wind" => Some(zero_wind()),
        "jet-field" => Some(jet_field()),
        _ => None,
    }
}
