//! Stationary wind field made of decaying jets, plus temporally correlated
//! turbulence.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geom::{Mat3, Vec3};

/// A jet blowing along `direction` from `origin`.
///
/// The speed profile is Gaussian across the jet axis (width `radial_decay`)
/// and Gaussian along it, with `axial_decay` downstream and a short
/// `axial_decay / 5` behind the source. Both halves have zero slope at the
/// source so the field stays continuously differentiable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub core_speed: f64,
    pub radial_decay: f64,
    pub axial_decay: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindFieldSpec {
    #[serde(default)]
    pub jets: Vec<Jet>,
    /// Stationary standard deviation of the turbulence, per axis (m/s).
    #[serde(default)]
    pub turbulence_intensity: f64,
    #[serde(default = "default_correlation_time")]
    pub turbulence_correlation_time: f64,
}

fn default_correlation_time() -> f64 {
    0.5
}

const BEHIND_SOURCE_RATIO: f64 = 0.2;

impl Jet {
    fn unit_direction(&self) -> Vec3 {
        Vec3::from(self.direction).normalize()
    }

    /// Scalar profile and its gradient with respect to position.
    fn profile(&self, p: &Vec3) -> (f64, Vec3) {
        let d = self.unit_direction();
        let q = p - Vec3::from(self.origin);
        let s = q.dot(&d);
        let across = q - d * s;
        let axial_len = if s >= 0.0 {
            self.axial_decay
        } else {
            self.axial_decay * BEHIND_SOURCE_RATIO
        };
        let r2 = self.radial_decay * self.radial_decay;
        let l2 = axial_len * axial_len;
        let value = (-0.5 * s * s / l2 - 0.5 * across.norm_squared() / r2).exp();
        let grad = (d * (-s / l2) - across / r2) * value;
        (value, grad)
    }
}

impl WindFieldSpec {
    pub fn calm() -> Self {
        Self { jets: Vec::new(), turbulence_intensity: 0.0, turbulence_correlation_time: 0.5 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, j) in self.jets.iter().enumerate() {
            if !(j.radial_decay > 0.0 && j.axial_decay > 0.0) {
                return Err(SimError::InvalidSpec(format!("jet {i}: decay lengths must be positive")));
            }
            if !(j.core_speed >= 0.0) {
                return Err(SimError::InvalidSpec(format!("jet {i}: core speed must be >= 0")));
            }
            if Vec3::from(j.direction).norm() < 1e-9 {
                return Err(SimError::InvalidSpec(format!("jet {i}: direction is zero")));
            }
        }
        if self.turbulence_intensity < 0.0 || self.turbulence_correlation_time <= 0.0 {
            return Err(SimError::InvalidSpec(
                "turbulence intensity must be >= 0 and correlation time > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Mean wind at `p` (world frame).
pub fn wind_at(spec: &WindFieldSpec, p: &Vec3) -> Vec3 {
    spec.jets
        .iter()
        .map(|j| j.unit_direction() * (j.core_speed * j.profile(p).0))
        .sum()
}

/// Jacobian `∂w/∂p` of [`wind_at`].
pub fn wind_jacobian(spec: &WindFieldSpec, p: &Vec3) -> Mat3 {
    spec.jets
        .iter()
        .map(|j| j.unit_direction() * j.profile(p).1.transpose() * j.core_speed)
        .sum()
}

/// Ornstein-Uhlenbeck turbulence, one independent process per axis, started
/// from its stationary distribution.
#[derive(Clone, Debug)]
pub struct Turbulence {
    state: Vec3,
    decay: f64,
    drive: f64,
}

impl Turbulence {
    pub fn new<R: Rng>(intensity: f64, correlation_time: f64, dt: f64, rng: &mut R) -> Self {
        let decay = (-dt / correlation_time).exp();
        let drive = intensity * (1.0 - decay * decay).sqrt();
        let state = Vec3::from_fn(|_, _| intensity * rng.sample::<f64, _>(StandardNormal));
        Self { state, decay, drive }
    }

    pub fn current(&self) -> Vec3 {
        self.state
    }

    pub fn step<R: Rng>(&mut self, rng: &mut R) -> Vec3 {
        let noise = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        self.state = self.state * self.decay + noise * self.drive;
        self.state
    }
}
