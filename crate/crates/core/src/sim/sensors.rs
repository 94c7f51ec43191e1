//! Synthetic IMU, whisker, throttle and odometry streams.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::log::{LogMeta, LogRow, Odometry, SensorLog, TruthRow};
use super::trajectory::TruthSample;
use super::wind::{wind_at, Turbulence, WindFieldSpec};
use super::{rng_stream, SimError};
use crate::geom::{exp_so3, from_ypr, Mat3, Rotation, Vec3, GRAVITY};

pub const WHISKER_COUNT: usize = 4;
pub const THROTTLE_CHANNELS: usize = 6;

/// Noise densities follow the usual continuous-time convention: a white noise
/// density `d` gives a per-sample standard deviation `d * sqrt(rate)`, a
/// random-walk density gives increments with standard deviation `d * sqrt(dt)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorNoiseSpec {
    pub accel_noise_density: f64,
    pub gyro_noise_density: f64,
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
    /// Per-axis standard deviation of the initial biases.
    pub accel_bias_init: f64,
    pub gyro_bias_init: f64,
    pub whisker_noise_std: f64,
    pub throttle_noise_std: f64,
    /// Spread of the per-flight throttle-to-thrust factor (battery state).
    pub battery_factor_std: f64,
    pub odom_position_std: f64,
    pub odom_velocity_std: f64,
    pub odom_attitude_std: f64,
}

impl SensorNoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            accel_noise_density: 0.0,
            gyro_noise_density: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_init: 0.0,
            gyro_bias_init: 0.0,
            whisker_noise_std: 0.0,
            throttle_noise_std: 0.0,
            battery_factor_std: 0.0,
            odom_position_std: 0.0,
            odom_velocity_std: 0.0,
            odom_attitude_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.accel_noise_density,
            self.gyro_noise_density,
            self.accel_bias_walk,
            self.gyro_bias_walk,
            self.accel_bias_init,
            self.gyro_bias_init,
            self.whisker_noise_std,
            self.throttle_noise_std,
            self.battery_factor_std,
            self.odom_position_std,
            self.odom_velocity_std,
            self.odom_attitude_std,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(SimError::InvalidSpec("noise densities must be finite and >= 0".into()))
        }
    }
}

/// Orientation of one whisker; the rod points along the sensor z axis and
/// bends about the sensor x/y axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiskerMount {
    /// Yaw, pitch, roll (ZYX, rad) of the sensor frame in the body frame.
    pub ypr: [f64; 3],
}

impl WhiskerMount {
    pub fn rotation(&self) -> Mat3 {
        from_ypr(self.ypr[0], self.ypr[1], self.ypr[2])
    }
}

/// Static forward model of the whisker deflections.
///
/// The local airflow at every sensor is the relative airflow plus propeller
/// downwash `-propwash_gain * effort * e_z`. Each rod deflects along the
/// projection of the local flow direction on its bending plane, with a
/// magnitude `max_deflection * q^2 / (q^2 + half_speed^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiskerModel {
    pub mounts: [WhiskerMount; WHISKER_COUNT],
    pub max_deflection: f64,
    pub half_speed: f64,
    pub propwash_gain: f64,
    pub hover_throttle: f64,
}

impl Default for WhiskerModel {
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        Self {
            mounts: [
                WhiskerMount { ypr: [0.0, 0.0, 0.0] },
                WhiskerMount { ypr: [0.0, FRAC_PI_2, 0.0] },
                WhiskerMount { ypr: [0.0, 0.0, -FRAC_PI_2] },
                WhiskerMount { ypr: [0.8, 2.3, 0.4] },
            ],
            max_deflection: 0.6,
            half_speed: 2.0,
            propwash_gain: 3.0,
            hover_throttle: 0.5,
        }
    }
}

impl WhiskerModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_deflection > 0.0
            && self.half_speed > 0.0
            && self.propwash_gain >= 0.0
            && self.hover_throttle > 0.0
            && self.hover_throttle < 1.0
        {
            Ok(())
        } else {
            Err(SimError::InvalidSpec("whisker model parameters out of range".into()))
        }
    }

    /// Throttle that produces the specific thrust `thrust_z` (m/s²).
    pub fn effort(&self, thrust_z: f64) -> f64 {
        (self.hover_throttle * thrust_z / -GRAVITY.z).clamp(0.0, 1.0)
    }

    pub fn deflections(&self, relative_airflow: &Vec3, effort: f64) -> [f64; 2 * WHISKER_COUNT] {
        let q = relative_airflow - Vec3::z() * (self.propwash_gain * effort);
        let speed = q.norm();
        let mut out = [0.0; 2 * WHISKER_COUNT];
        if speed == 0.0 {
            return out;
        }
        let s2 = speed * speed;
        let magnitude =
            self.max_deflection * s2 / (s2 + self.half_speed * self.half_speed) / speed;
        for (i, m) in self.mounts.iter().enumerate() {
            let local = m.rotation().transpose() * q;
            out[2 * i] = magnitude * local.x;
            out[2 * i + 1] = magnitude * local.y;
        }
        out
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(gauss(rng), gauss(rng), gauss(rng))
}

// Independent noise streams so that e.g. enabling turbulence does not change
// the IMU noise realization.
const STREAM_IMU: u64 = 1;
const STREAM_BIAS: u64 = 2;
const STREAM_WIND: u64 = 3;
const STREAM_WHISKER: u64 = 4;
const STREAM_THROTTLE: u64 = 5;
const STREAM_ODOM: u64 = 6;

/// Produces the sensor log for a ground-truth trajectory.
///
/// `failure_time` marks when odometry stops; a time beyond the log keeps every
/// row available and is flagged in the metadata.
pub fn synthesize_sensors(
    truth: &[TruthSample],
    wind: &WindFieldSpec,
    noise: &SensorNoiseSpec,
    whiskers: &WhiskerModel,
    failure_time: Option<f64>,
    seed: u64,
) -> Result<SensorLog, SimError> {
    wind.validate()?;
    noise.validate()?;
    whiskers.validate()?;
    if truth.len() < 2 {
        return Err(SimError::InvalidSpec("trajectory needs at least two samples".into()));
    }
    let dt = truth[1].t - truth[0].t;
    if !(dt > 0.0) {
        return Err(SimError::InvalidSpec("trajectory timestamps must increase".into()));
    }
    let rate = 1.0 / dt;

    let mut imu_rng = rng_stream(seed, STREAM_IMU);
    let mut bias_rng = rng_stream(seed, STREAM_BIAS);
    let mut wind_rng = rng_stream(seed, STREAM_WIND);
    let mut whisker_rng = rng_stream(seed, STREAM_WHISKER);
    let mut throttle_rng = rng_stream(seed, STREAM_THROTTLE);
    let mut odom_rng = rng_stream(seed, STREAM_ODOM);

    let mut accel_bias = gauss3(&mut bias_rng) * noise.accel_bias_init;
    let mut gyro_bias = gauss3(&mut bias_rng) * noise.gyro_bias_init;
    let battery = 1.0 + noise.battery_factor_std * gauss(&mut throttle_rng);
    let mut turbulence = Turbulence::new(
        wind.turbulence_intensity,
        wind.turbulence_correlation_time,
        dt,
        &mut wind_rng,
    );

    let accel_std = noise.accel_noise_density * rate.sqrt();
    let gyro_std = noise.gyro_noise_density * rate.sqrt();
    let accel_walk = noise.accel_bias_walk * dt.sqrt();
    let gyro_walk = noise.gyro_bias_walk * dt.sqrt();

    let mut rows = Vec::with_capacity(truth.len());
    for (k, s) in truth.iter().enumerate() {
        if k > 0 {
            accel_bias += gauss3(&mut bias_rng) * accel_walk;
            gyro_bias += gauss3(&mut bias_rng) * gyro_walk;
            turbulence.step(&mut wind_rng);
        }
        let r = s.attitude.matrix();
        let specific_force = r.transpose() * (s.acceleration - GRAVITY);
        let accel = specific_force + accel_bias + gauss3(&mut imu_rng) * accel_std;
        let gyro = s.angular_rate + gyro_bias + gauss3(&mut imu_rng) * gyro_std;

        let total_wind = wind_at(wind, &s.position) + turbulence.current();
        let relative_airflow = r.transpose() * (total_wind - s.velocity);
        let effort = whiskers.effort(specific_force.z);
        let mut whisker = whiskers.deflections(&relative_airflow, effort);
        for w in whisker.iter_mut() {
            *w += noise.whisker_noise_std * gauss(&mut whisker_rng);
        }

        let commanded = effort * battery;
        let mut throttle = [0.0; THROTTLE_CHANNELS];
        for u in throttle.iter_mut() {
            *u = (commanded + noise.throttle_noise_std * gauss(&mut throttle_rng)).clamp(0.0, 1.0);
        }

        let odom = Odometry {
            position: s.position + gauss3(&mut odom_rng) * noise.odom_position_std,
            velocity: s.velocity + gauss3(&mut odom_rng) * noise.odom_velocity_std,
            attitude: Rotation::from_matrix_projected(
                &(exp_so3(&(gauss3(&mut odom_rng) * noise.odom_attitude_std)) * r),
            ),
        };

        rows.push(LogRow {
            t: s.t,
            accel,
            gyro,
            whisker,
            throttle,
            odom: Some(odom),
            truth: TruthRow {
                position: s.position,
                velocity: s.velocity,
                attitude: s.attitude,
                wind: total_wind,
                accel_bias,
                gyro_bias,
            },
        });
    }

    let mut log = SensorLog {
        meta: LogMeta {
            rate_hz: rate,
            airflow_decimation: super::AIRFLOW_DECIMATION,
            failure_time: None,
            failure_beyond_duration: false,
        },
        rows,
    };
    if let Some(tf) = failure_time {
        log.apply_failure(tf);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trajectory::{generate_trajectory, Shape, TrajectorySpec, YawProfile};

    fn hover(duration: f64) -> Vec<TruthSample> {
        generate_trajectory(&TrajectorySpec {
            duration,
            rate_hz: 200.0,
            shape: Shape::Hover { position: [0.0, 0.0, 1.0] },
            peak_speed: 2.5,
            yaw: YawProfile::Fixed { yaw: 0.7 },
        })
        .unwrap()
    }

    fn noisy() -> SensorNoiseSpec {
        SensorNoiseSpec {
            accel_noise_density: 0.02,
            gyro_noise_density: 0.002,
            accel_bias_walk: 0.002,
            gyro_bias_walk: 2e-4,
            accel_bias_init: 0.05,
            gyro_bias_init: 0.005,
            whisker_noise_std: 0.003,
            throttle_noise_std: 0.01,
            battery_factor_std: 0.03,
            odom_position_std: 0.01,
            odom_velocity_std: 0.02,
            odom_attitude_std: 0.005,
        }
    }

    #[test]
    fn noiseless_hover() {
        let truth = hover(2.0);
        let model = WhiskerModel::default();
        let log = synthesize_sensors(
            &truth,
            &WindFieldSpec::calm(),
            &SensorNoiseSpec::noiseless(),
            &model,
            None,
            1,
        )
        .unwrap();
        let r = truth[0].attitude.matrix();
        let expected = model.deflections(&Vec3::zeros(), model.hover_throttle);
        for row in &log.rows {
            assert_eq!(row.accel, r.transpose() * -GRAVITY);
            assert!(row.gyro.norm() < 1e-12);
            assert_eq!(row.whisker, expected);
            assert!(row.throttle.iter().all(|u| (u - model.hover_throttle).abs() < 1e-12));
        }
        // Only the propwash term: the flow is straight down the body z axis,
        // which the top whisker cannot see.
        assert!(expected[0].abs() < 1e-15 && expected[1].abs() < 1e-15);
        assert!(expected[2..].iter().any(|v| v.abs() > 0.05));
    }

    #[test]
    fn same_seed_same_log() {
        let truth = hover(1.0);
        let a = synthesize_sensors(&truth, &WindFieldSpec::calm(), &noisy(), &Default::default(), Some(0.5), 9)
            .unwrap();
        let b = synthesize_sensors(&truth, &WindFieldSpec::calm(), &noisy(), &Default::default(), Some(0.5), 9)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accel_noise_matches_density() {
        let truth = hover(60.0);
        let mut spec = SensorNoiseSpec::noiseless();
        spec.accel_noise_density = 0.02;
        let log = synthesize_sensors(&truth, &WindFieldSpec::calm(), &spec, &Default::default(), None, 4)
            .unwrap();
        let r = truth[0].attitude.matrix();
        let clean = r.transpose() * -GRAVITY;
        let n = log.rows.len() as f64 * 3.0;
        let var: f64 = log.rows.iter().map(|row| (row.accel - clean).norm_squared()).sum::<f64>() / n;
        let expected = 0.02 * 200f64.sqrt();
        assert!((var.sqrt() - expected).abs() < 0.1 * expected);
    }

    #[test]
    fn bias_random_walk_statistics() {
        let truth = hover(2.0);
        let mut spec = SensorNoiseSpec::noiseless();
        spec.accel_bias_walk = 0.01;
        let dt = 1.0 / 200.0;
        let mut increments = Vec::new();
        for seed in 0..40 {
            let log = synthesize_sensors(&truth, &WindFieldSpec::calm(), &spec, &Default::default(), None, seed)
                .unwrap();
            for w in log.rows.windows(2) {
                increments.push(w[1].truth.accel_bias.x - w[0].truth.accel_bias.x);
            }
        }
        let n = increments.len() as f64;
        let mean = increments.iter().sum::<f64>() / n;
        let var = increments.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let expected = 0.01 * 0.01 * dt;
        assert!(mean.abs() < 4.0 * (expected / n).sqrt());
        assert!((var - expected).abs() < 0.15 * expected);
    }

    #[test]
    fn failure_beyond_duration_is_flagged() {
        let truth = hover(1.0);
        let log = synthesize_sensors(&truth, &WindFieldSpec::calm(), &noisy(), &Default::default(), Some(5.0), 2)
            .unwrap();
        assert!(log.meta.failure_beyond_duration);
        assert!(log.rows.iter().all(|r| r.odom.is_some()));

        let log = synthesize_sensors(&truth, &WindFieldSpec::calm(), &noisy(), &Default::default(), Some(0.5), 2)
            .unwrap();
        let avail: Vec<bool> = log.rows.iter().map(|r| r.odom.is_some()).collect();
        assert!(avail.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(avail.iter().filter(|a| **a).count(), 100);
    }
}
