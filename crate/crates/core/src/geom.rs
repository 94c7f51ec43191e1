//! SO(3) utilities shared by the simulator and the estimator.
//!
//! Rotations are stored as full 3x3 matrices mapping body-frame vectors into
//! the world frame. The world frame is z-up with gravity `[0, 0, -9.81]`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Gravity in the world frame (z up).
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

/// Below this angle the exp/log/Jacobian maps switch to Taylor expansions.
const TAYLOR_THRESHOLD: f64 = 1e-6;

/// Skew-symmetric matrix such that `hat(r) * x == r.cross(&x)`.
#[rustfmt::skip]
pub fn hat(r: &Vec3) -> Mat3 {
    Mat3::new(
         0.0, -r.z,  r.y,
         r.z,  0.0, -r.x,
        -r.y,  r.x,  0.0,
    )
}

/// Inverse of [`hat`]. Does not check skew-symmetry.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m.m32, m.m13, m.m21)
}

/// Rodrigues' formula.
pub fn exp_so3(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < TAYLOR_THRESHOLD {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Principal logarithm, `‖result‖ ≤ π`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = vee(&(r - r.transpose())) * 0.5; // = sin(theta) * axis
    let theta = skew.norm().atan2(cos_theta);
    if theta < TAYLOR_THRESHOLD {
        // sin(theta)/theta ~ 1 - theta^2/6
        return skew * (1.0 + theta * theta / 6.0);
    }
    if PI - theta < 1e-3 {
        // sin(theta) is tiny; recover the axis from the symmetric part
        // R + R^T = 2 cos(theta) I + 2 (1 - cos(theta)) a a^T.
        let sym = (r + r.transpose()) * 0.5;
        let one_minus_cos = 1.0 - cos_theta;
        let diag = Vec3::new(sym.m11, sym.m22, sym.m33);
        let aa = (diag - Vec3::repeat(cos_theta)) / one_minus_cos;
        let i = aa.imax();
        let mut axis = Vec3::zeros();
        axis[i] = aa[i].max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                axis[j] = sym[(i, j)] / (one_minus_cos * axis[i]);
            }
        }
        axis.normalize_mut();
        // Align the axis sign with the (small but informative) skew part.
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    skew * (theta / theta.sin())
}

/// Left Jacobian of SO(3): `exp(phi + d) ≈ exp(J_l(phi) d) exp(phi)`.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < TAYLOR_THRESHOLD {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() + k * a + k * k * b
}

/// Right Jacobian of SO(3): `exp(phi + d) ≈ exp(phi) exp(J_r(phi) d)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    left_jacobian(&-phi)
}

/// Yaw-pitch-roll (ZYX) angles of a body-to-world rotation.
pub fn ypr(r: &Mat3) -> Vec3 {
    let yaw = r.m21.atan2(r.m11);
    let pitch = (-r.m31).clamp(-1.0, 1.0).asin();
    let roll = r.m32.atan2(r.m33);
    Vec3::new(yaw, pitch, roll)
}

/// Rotation about world z.
pub fn rot_z(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// ZYX composition `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn from_ypr(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let ry = Mat3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    rot_z(yaw) * ry * rx
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// A validated body-to-world rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat3", into = "Mat3")]
pub struct Rotation(Mat3);

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("matrix is not a rotation: orthogonality error {ortho_err:.3e}, det {det}")]
pub struct NotARotation {
    pub ortho_err: f64,
    pub det: f64,
}

impl Rotation {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn new(m: Mat3) -> Result<Self, NotARotation> {
        let ortho_err = (m * m.transpose() - Mat3::identity()).norm();
        let det = m.determinant();
        if ortho_err <= Self::TOLERANCE && (det - 1.0).abs() <= Self::TOLERANCE {
            Ok(Self(m))
        } else {
            Err(NotARotation { ortho_err, det })
        }
    }

    /// Projects an almost-orthonormal matrix back onto SO(3) via SVD.
    pub fn from_matrix_projected(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut d = Mat3::identity();
            d.m33 = -1.0;
            r = u * d * vt;
        }
        Self(r)
    }

    pub fn exp(phi: &Vec3) -> Self {
        Self(exp_so3(phi))
    }

    pub fn log(&self) -> Vec3 {
        log_so3(&self.0)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn ypr(&self) -> Vec3 {
        ypr(&self.0)
    }

    pub fn yaw(&self) -> f64 {
        self.ypr().x
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl TryFrom<Mat3> for Rotation {
    type Error = NotARotation;
    fn try_from(m: Mat3) -> Result<Self, Self::Error> {
        // Deserialized matrices went through text; accept small rounding.
        let ortho_err = (m * m.transpose() - Mat3::identity()).norm();
        if ortho_err <= Self::TOLERANCE && m.determinant() > 0.0 {
            Ok(Self(m))
        } else if ortho_err < 1e-6 && m.determinant() > 0.0 {
            Ok(Self::from_matrix_projected(&m))
        } else {
            Err(NotARotation { ortho_err, det: m.determinant() })
        }
    }
}

impl From<Rotation> for Mat3 {
    fn from(r: Rotation) -> Mat3 {
        r.0
    }
}
