use nalgebra::{DMatrix, DVector};

use super::kernel::{cholesky_with_jitter, dist2_component, KernelParams};
use super::{AxisModel, WindMapError, JITTER};
use crate::geom::Vec3;

/// Log marginal likelihood of one axis and its gradient with respect to
/// the log-space hyperparameters.
pub(crate) fn log_marginal(
    params: &KernelParams,
    isotropic: bool,
    x: &[Vec3],
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>), WindMapError> {
    let n = x.len();
    let k0 = params.cross(x, x);
    let mut ky = k0.clone();
    for i in 0..n {
        ky[(i, i)] += params.noise_variance;
    }
    let (chol, jitter) = cholesky_with_jitter(&ky, JITTER * params.signal_variance)?;
    let alpha = chol.solve(y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let value = -0.5 * y.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut grad = Vec::with_capacity(KernelParams::log_len(isotropic));
    let mut d_sf = w.component_mul(&k0).sum();
    d_sf += jitter * w.trace();
    grad.push(0.5 * d_sf);
    let d_ell: Vec<f64> =
        (0..3).map(|d| 0.5 * w.component_mul(&k0.component_mul(&dist2_component(params, x, x, d))).sum()).collect();
    if isotropic {
        grad.push(d_ell.iter().sum());
    } else {
        grad.extend(d_ell);
    }
    grad.push(0.5 * params.noise_variance * w.trace());
    Ok((value, grad))
}

pub(crate) fn fit_axis(params: &KernelParams, x: &[Vec3], y: &DVector<f64>) -> Result<(AxisModel, f64), WindMapError> {
    let n = x.len();
    let k0 = params.cross(x, x);
    let mut ky = k0.clone();
    for i in 0..n {
        ky[(i, i)] += params.noise_variance;
    }
    let (chol, jitter) = cholesky_with_jitter(&ky, JITTER * params.signal_variance)?;
    let alpha = chol.solve(y);
    let ky_inv = chol.inverse();
    let q_mean = &k0 * &alpha;
    let mut q_cov = &k0 - &k0 * &ky_inv * &k0;
    q_cov = (&q_cov + q_cov.transpose()) * 0.5;
    Ok((
        AxisModel {
            params: *params,
            inducing: x.to_vec(),
            q_mean,
            q_cov,
            weights: alpha,
            precision: symmetrize(ky_inv),
        },
        jitter,
    ))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
