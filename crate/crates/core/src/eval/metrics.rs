//! Trajectory error metrics.
//!
//! All functions take time-aligned sample sequences (estimate first, ground
//! truth second). Windows are given in samples, so the metrics only depend on
//! the sample order and never on time labels.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geom::{rot_z, wrap_angle, Rotation, Vec3};

/// Samples whose pitch is this close to ±π/2 have no well-defined yaw.
pub const GIMBAL_MARGIN: f64 = 1e-6;

/// Length of the relative translation error window (s).
pub const RTE_WINDOW_S: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Position RMSE (m).
    pub rmse: f64,
    /// Yaw RMSE (rad).
    pub rmse_yaw: f64,
    /// Final position error per metre of ground-truth path.
    pub dr: f64,
    /// Yaw-compensated relative translation error over 2 s windows (m).
    pub rte_2s: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["rmse", "rmse_yaw", "dr", "rte_2s"];

    pub fn values(&self) -> [f64; 4] {
        [self.rmse, self.rmse_yaw, self.dr, self.rte_2s]
    }
}

fn aligned<T>(est: &[T], gt: &[T]) -> Result<(), EvalError> {
    if est.is_empty() {
        return Err(EvalError::Empty);
    }
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch { est: est.len(), gt: gt.len() });
    }
    Ok(())
}

/// Root mean square of the position errors.
pub fn rmse(est: &[Vec3], gt: &[Vec3]) -> Result<f64, EvalError> {
    aligned(est, gt)?;
    let se: f64 = est.iter().zip(gt).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((se / est.len() as f64).sqrt())
}

/// Root mean square of the wrapped ZYX yaw differences. Samples near gimbal
/// lock in either sequence are skipped with a warning.
pub fn yaw_rmse(est: &[Rotation], gt: &[Rotation]) -> Result<f64, EvalError> {
    aligned(est, gt)?;
    let limit = std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN;
    let mut se = 0.0;
    let mut used = 0usize;
    for (a, b) in est.iter().zip(gt) {
        let (ya, yb) = (a.ypr(), b.ypr());
        if ya.y.abs() > limit || yb.y.abs() > limit {
            continue;
        }
        let d = wrap_angle(ya.x - yb.x);
        se += d * d;
        used += 1;
    }
    if used == 0 {
        return Err(EvalError::GimbalLock);
    }
    if used < est.len() {
        log::warn!("yaw RMSE: excluded {} gimbal-lock samples", est.len() - used);
    }
    Ok((se / used as f64).sqrt())
}

/// Cumulative length of a polyline.
pub fn path_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Final position error divided by the ground-truth path length.
pub fn drift(est: &[Vec3], gt: &[Vec3]) -> Result<f64, EvalError> {
    aligned(est, gt)?;
    if est.len() < 2 {
        return Err(EvalError::TooShort { len: est.len(), needed: 2 });
    }
    let length = path_length(gt);
    if !(length > 0.0) {
        return Err(EvalError::ZeroPathLength);
    }
    let n = est.len() - 1;
    Ok((est[n] - gt[n]).norm() / length)
}

/// Relative translation error over windows of `window` samples. Each
/// estimated displacement is rotated by the yaw offset between ground truth
/// and estimate at the start of its window before comparison.
pub fn rte(
    est: &[Vec3],
    est_att: &[Rotation],
    gt: &[Vec3],
    gt_att: &[Rotation],
    window: usize,
) -> Result<f64, EvalError> {
    aligned(est, gt)?;
    aligned(est_att, gt_att)?;
    if est_att.len() != est.len() {
        return Err(EvalError::LengthMismatch { est: est_att.len(), gt: est.len() });
    }
    if window == 0 || est.len() <= window {
        return Err(EvalError::TooShort { len: est.len(), needed: window + 1 });
    }
    let n = est.len() - window;
    let mut se = 0.0;
    for i in 0..n {
        // R_yaw R̂_yawᵀ is the rotation by the yaw difference; building it
        // from the difference keeps identical inputs exactly at zero.
        let align = rot_z(gt_att[i].yaw() - est_att[i].yaw());
        let r = (gt[i + window] - gt[i]) - align * (est[i + window] - est[i]);
        se += r.norm_squared();
    }
    Ok((se / n as f64).sqrt())
}

/// Number of samples in a 2 s window at `rate_hz`, rounded down.
pub fn rte_window_samples(rate_hz: f64) -> usize {
    (RTE_WINDOW_S * rate_hz + 1e-9).floor() as usize
}

/// [`rte`] over 2 s windows.
pub fn rte_2s(
    est: &[Vec3],
    est_att: &[Rotation],
    gt: &[Vec3],
    gt_att: &[Rotation],
    rate_hz: f64,
) -> Result<f64, EvalError> {
    rte(est, est_att, gt, gt_att, rte_window_samples(rate_hz))
}

/// All four metrics for one trajectory segment.
pub fn compute_metrics(
    est: &[Vec3],
    est_att: &[Rotation],
    gt: &[Vec3],
    gt_att: &[Rotation],
    rate_hz: f64,
) -> Result<Metrics, EvalError> {
    Ok(Metrics {
        rmse: rmse(est, gt)?,
        rmse_yaw: yaw_rmse(est_att, gt_att)?,
        dr: drift(est, gt)?,
        rte_2s: rte_2s(est, est_att, gt, gt_att, rate_hz)?,
    })
}
