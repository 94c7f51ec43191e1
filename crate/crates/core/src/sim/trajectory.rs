//! Kinematic reference trajectories.
//!
//! A trajectory is a pure function of time giving position, velocity and
//! acceleration. Attitude follows the multirotor constraint: body z is aligned
//! with the specific thrust `a - g`, heading comes from the yaw profile, and the
//! angular rate is the derivative of that attitude.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geom::{log_so3, Mat3, Rotation, Vec3, GRAVITY};

/// Highest peak speed a trajectory may request (m/s).
pub const MAX_PEAK_SPEED: f64 = 3.0;

/// Step used to differentiate the attitude for the angular rate.
const ATTITUDE_DIFF_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Hover {
        position: [f64; 3],
    },
    /// Constant velocity from `start`.
    Line {
        start: [f64; 3],
        velocity: [f64; 3],
    },
    /// Horizontal circle, counter-clockwise.
    Circle {
        center: [f64; 3],
        radius: f64,
        period: f64,
    },
    /// `center + amplitude * sin(2π f t + phase)` per axis.
    Lissajous {
        center: [f64; 3],
        amplitude: [f64; 3],
        frequency_hz: [f64; 3],
        phase: [f64; 3],
    },
    /// Rest-to-rest minimum-jerk segments through timed waypoints. The vehicle
    /// holds the last waypoint after its time.
    Waypoints { points: Vec<Waypoint> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YawProfile {
    Fixed { yaw: f64 },
    /// Heading follows the horizontal velocity.
    Tracking,
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    pub shape: Shape,
    #[serde(default = "default_peak_speed")]
    pub peak_speed: f64,
    pub yaw: YawProfile,
}

fn default_rate() -> f64 {
    200.0
}

fn default_peak_speed() -> f64 {
    2.5
}

/// One ground-truth sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub attitude: Rotation,
    /// Body-frame angular rate.
    pub angular_rate: Vec3,
}

impl TrajectorySpec {
    pub fn samples(&self) -> usize {
        (self.duration * self.rate_hz).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidSpec(msg));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad(format!("rate must be positive, got {}", self.rate_hz));
        }
        if !(self.peak_speed > 0.0 && self.peak_speed <= MAX_PEAK_SPEED) {
            return bad(format!(
                "peak speed must lie in (0, {MAX_PEAK_SPEED}] m/s, got {}",
                self.peak_speed
            ));
        }
        match &self.shape {
            Shape::Circle { radius, period, .. } if *radius < 0.0 || *period <= 0.0 => {
                return bad("circle needs radius >= 0 and period > 0".into())
            }
            Shape::Waypoints { points } => validate_waypoints(points, self.peak_speed)?,
            _ => {}
        }
        if let YawProfile::Sinusoid { period, .. } = self.yaw {
            if period <= 0.0 {
                return bad("yaw sinusoid period must be positive".into());
            }
        }
        Ok(())
    }
}

fn validate_waypoints(points: &[Waypoint], peak_speed: f64) -> Result<(), SimError> {
    if points.is_empty() {
        return Err(SimError::Infeasible("waypoint list is empty".into()));
    }
    for (i, w) in points.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            return Err(SimError::Infeasible(format!(
                "waypoint {} at t={} is not after waypoint {} at t={}",
                i + 1,
                w[1].t,
                i,
                w[0].t
            )));
        }
        let dist = (Vec3::from(w[1].position) - Vec3::from(w[0].position)).norm();
        // Peak speed of a rest-to-rest quintic is 15/8 of the mean speed.
        let peak = 1.875 * dist / dt;
        if peak > peak_speed {
            return Err(SimError::Infeasible(format!(
                "segment {i}->{} needs {peak:.2} m/s, above the {peak_speed} m/s limit",
                i + 1
            )));
        }
    }
    Ok(())
}

fn translational(shape: &Shape, t: f64) -> (Vec3, Vec3, Vec3) {
    match shape {
        Shape::Hover { position } => (Vec3::from(*position), Vec3::zeros(), Vec3::zeros()),
        Shape::Line { start, velocity } => {
            let v = Vec3::from(*velocity);
            (Vec3::from(*start) + v * t, v, Vec3::zeros())
        }
        Shape::Circle { center, radius, period } => {
            let w = 2.0 * PI / period;
            let (s, c) = (w * t).sin_cos();
            let p = Vec3::from(*center) + Vec3::new(radius * c, radius * s, 0.0);
            let v = Vec3::new(-radius * w * s, radius * w * c, 0.0);
            let a = Vec3::new(-radius * w * w * c, -radius * w * w * s, 0.0);
            (p, v, a)
        }
        Shape::Lissajous { center, amplitude, frequency_hz, phase } => {
            let mut p = Vec3::from(*center);
            let mut v = Vec3::zeros();
            let mut a = Vec3::zeros();
            for i in 0..3 {
                let w = 2.0 * PI * frequency_hz[i];
                let (s, c) = (w * t + phase[i]).sin_cos();
                p[i] += amplitude[i] * s;
                v[i] = amplitude[i] * w * c;
                a[i] = -amplitude[i] * w * w * s;
            }
            (p, v, a)
        }
        Shape::Waypoints { points } => waypoint_state(points, t),
    }
}

fn waypoint_state(points: &[Waypoint], t: f64) -> (Vec3, Vec3, Vec3) {
    let first = &points[0];
    if t <= first.t || points.len() == 1 {
        return (Vec3::from(first.position), Vec3::zeros(), Vec3::zeros());
    }
    let last = points.last().unwrap();
    if t >= last.t {
        return (Vec3::from(last.position), Vec3::zeros(), Vec3::zeros());
    }
    let seg = points.windows(2).find(|w| t < w[1].t).unwrap();
    let (p0, p1) = (Vec3::from(seg[0].position), Vec3::from(seg[1].position));
    let span = seg[1].t - seg[0].t;
    let s = (t - seg[0].t) / span;
    // Minimum-jerk blend 10s^3 - 15s^4 + 6s^5 and its derivatives.
    let blend = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s) / span;
    let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (span * span);
    let d = p1 - p0;
    (p0 + d * blend, d * d1, d * d2)
}

fn yaw_at(profile: &YawProfile, velocity: &Vec3) -> f64 {
    match *profile {
        YawProfile::Fixed { yaw } => yaw,
        YawProfile::Tracking => velocity.y.atan2(velocity.x),
        YawProfile::Sinusoid { .. } => unreachable!("handled with time"),
    }
}

/// Attitude whose body z axis points along the specific thrust.
pub fn thrust_aligned_attitude(acceleration: &Vec3, yaw: f64) -> Mat3 {
    let f = acceleration - GRAVITY;
    let zb = f.normalize();
    let heading = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let yb = zb.cross(&heading).normalize();
    let xb = yb.cross(&zb);
    Mat3::from_columns(&[xb, yb, zb])
}

impl TrajectorySpec {
    fn attitude_at(&self, t: f64) -> Mat3 {
        let (_, v, a) = translational(&self.shape, t);
        let yaw = match self.yaw {
            YawProfile::Sinusoid { mean, amplitude, period } => {
                mean + amplitude * (2.0 * PI * t / period).sin()
            }
            ref other => yaw_at(other, &v),
        };
        thrust_aligned_attitude(&a, yaw)
    }

    /// Ground truth at an arbitrary time.
    pub fn state_at(&self, t: f64) -> TruthSample {
        let (p, v, a) = translational(&self.shape, t);
        let r = self.attitude_at(t);
        let h = ATTITUDE_DIFF_STEP;
        let r_minus = self.attitude_at(t - h);
        let r_plus = self.attitude_at(t + h);
        let omega = log_so3(&(r_minus.transpose() * r_plus)) / (2.0 * h);
        TruthSample {
            t,
            position: p,
            velocity: v,
            acceleration: a,
            attitude: Rotation::from_matrix_projected(&r),
            angular_rate: omega,
        }
    }
}

/// Samples the trajectory at `rate_hz`.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<TruthSample>, SimError> {
    spec.validate()?;
    let n = spec.samples();
    let dt = spec.dt();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let s = spec.state_at(k as f64 * dt);
        let speed = s.velocity.norm();
        if speed > spec.peak_speed + 1e-9 {
            return Err(SimError::Infeasible(format!(
                "speed {speed:.3} m/s at t={:.3} s exceeds peak speed {}",
                s.t, spec.peak_speed
            )));
        }
        if matches!(spec.yaw, YawProfile::Tracking) && s.velocity.xy().norm() < 0.05 {
            return Err(SimError::Infeasible(format!(
                "yaw tracking needs horizontal motion, speed drops to {:.3} m/s at t={:.3} s",
                s.velocity.xy().norm(),
                s.t
            )));
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::hat;

    fn spec(shape: Shape, yaw: YawProfile) -> TrajectorySpec {
        TrajectorySpec { duration: 10.0, rate_hz: 200.0, shape, peak_speed: 2.5, yaw }
    }

    #[test]
    fn hover_is_static() {
        let traj = generate_trajectory(&spec(
            Shape::Hover { position: [1.0, 2.0, 3.0] },
            YawProfile::Fixed { yaw: 0.3 },
        ))
        .unwrap();
        for s in &traj {
            assert_eq!(s.position, Vec3::new(1.0, 2.0, 3.0));
            assert_eq!(s.velocity, Vec3::zeros());
            assert_eq!(s.acceleration, Vec3::zeros());
            assert_eq!(s.attitude, traj[0].attitude);
            assert!(s.angular_rate.norm() < 1e-12);
        }
    }

    #[test]
    fn unit_circle_has_unit_speed_and_acceleration() {
        let traj = generate_trajectory(&spec(
            Shape::Circle { center: [0.0, 0.0, 1.0], radius: 1.0, period: 2.0 * PI },
            YawProfile::Tracking,
        ))
        .unwrap();
        for s in &traj {
            assert!((s.velocity.norm() - 1.0).abs() < 1e-12);
            assert!((s.acceleration.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_are_consistent() {
        let sp = spec(
            Shape::Lissajous {
                center: [0.0, 0.0, 1.5],
                amplitude: [2.0, 1.5, 0.3],
                frequency_hz: [0.1, 0.15, 0.2],
                phase: [0.0, 0.5, 1.0],
            },
            YawProfile::Sinusoid { mean: 0.0, amplitude: 0.8, period: 7.0 },
        );
        let traj = generate_trajectory(&sp).unwrap();
        let dt = sp.dt();
        let mut max_v = 0.0f64;
        let mut max_a = 0.0f64;
        let mut max_r = 0.0f64;
        for k in 1..traj.len() - 1 {
            let fd_v = (traj[k + 1].position - traj[k - 1].position) / (2.0 * dt);
            let fd_a = (traj[k + 1].velocity - traj[k - 1].velocity) / (2.0 * dt);
            max_v = max_v.max((fd_v - traj[k].velocity).norm());
            max_a = max_a.max((fd_a - traj[k].acceleration).norm());
            let r = traj[k].attitude.matrix();
            let fd_rdot = (traj[k + 1].attitude.matrix() - traj[k - 1].attitude.matrix()) / (2.0 * dt);
            max_r = max_r.max((fd_rdot - r * hat(&traj[k].angular_rate)).norm());
        }
        assert!(max_v < 1e-3, "velocity fd error {max_v}");
        assert!(max_a < 1e-3, "acceleration fd error {max_a}");
        assert!(max_r < 1e-3, "attitude fd error {max_r}");
    }

    #[test]
    fn waypoints_rest_to_rest() {
        let sp = spec(
            Shape::Waypoints {
                points: vec![
                    Waypoint { t: 0.0, position: [0.0, 0.0, 1.0] },
                    Waypoint { t: 4.0, position: [3.0, 0.0, 1.0] },
                    Waypoint { t: 8.0, position: [3.0, 3.0, 1.0] },
                ],
            },
            YawProfile::Fixed { yaw: 0.0 },
        );
        let traj = generate_trajectory(&sp).unwrap();
        let at4 = sp.state_at(4.0);
        assert!((at4.position - Vec3::new(3.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(at4.velocity.norm() < 1e-12);
        assert_eq!(traj.last().unwrap().position, Vec3::new(3.0, 3.0, 1.0));
    }

    #[test]
    fn infeasible_waypoints_rejected() {
        let too_fast = spec(
            Shape::Waypoints {
                points: vec![
                    Waypoint { t: 0.0, position: [0.0, 0.0, 1.0] },
                    Waypoint { t: 1.0, position: [5.0, 0.0, 1.0] },
                ],
            },
            YawProfile::Fixed { yaw: 0.0 },
        );
        assert!(matches!(generate_trajectory(&too_fast), Err(SimError::Infeasible(_))));
        let unordered = spec(
            Shape::Waypoints {
                points: vec![
                    Waypoint { t: 2.0, position: [0.0, 0.0, 1.0] },
                    Waypoint { t: 1.0, position: [0.5, 0.0, 1.0] },
                ],
            },
            YawProfile::Fixed { yaw: 0.0 },
        );
        assert!(matches!(generate_trajectory(&unordered), Err(SimError::Infeasible(_))));
    }

    #[test]
    fn peak_speed_cap_enforced() {
        let mut sp = spec(Shape::Hover { position: [0.0; 3] }, YawProfile::Fixed { yaw: 0.0 });
        sp.peak_speed = 3.5;
        assert!(matches!(sp.validate(), Err(SimError::InvalidSpec(_))));
    }
}
