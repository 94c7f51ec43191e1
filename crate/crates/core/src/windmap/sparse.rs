//! Collapsed variational bound for sparse GP regression with inducing
//! inputs, with analytic gradients for the log-space hyperparameters and
//! the inducing locations.
//!
//! Notation: `Kmm` is the inducing Gram matrix (with jitter), `P = Kmn`,
//! `s = σ_n²` and `C = Kmm + P Pᵀ / s`. The bound is
//! `log N(y | 0, Pᵀ Kmm⁻¹ P + s I) - tr(Knn - Pᵀ Kmm⁻¹ P) / (2s)`.

use nalgebra::{DMatrix, DVector};

use super::exact::symmetrize;
use super::kernel::{cholesky_with_jitter, dist2_component, KernelParams};
use super::{AxisModel, WindMapError, JITTER};
use crate::geom::Vec3;

pub(crate) struct ElboGrad {
    /// Log-space hyperparameter gradient, same layout as `KernelParams::to_log`.
    pub hyper: Vec<f64>,
    pub inducing: Vec<Vec3>,
}

struct Factors {
    kmm: DMatrix<f64>,
    kmm0: DMatrix<f64>,
    p: DMatrix<f64>,
    kinv: DMatrix<f64>,
    cinv: DMatrix<f64>,
    u: DVector<f64>,
    value: f64,
    jitter: f64,
}

fn factor(params: &KernelParams, z: &[Vec3], x: &[Vec3], y: &DVector<f64>) -> Result<Factors, WindMapError> {
    let n = x.len() as f64;
    let m = z.len();
    let s = params.noise_variance;
    let kmm0 = params.cross(z, z);
    let p = params.cross(z, x);
    let (lk, jitter) = cholesky_with_jitter(&kmm0, JITTER * params.signal_variance)?;
    let mut kmm = kmm0.clone();
    for i in 0..m {
        kmm[(i, i)] += jitter;
    }
    let l = lk.l();
    let a = l.solve_lower_triangular(&p).ok_or(WindMapError::Conditioning(jitter))? / s.sqrt();
    let mut b = &a * a.transpose();
    for i in 0..m {
        b[(i, i)] += 1.0;
    }
    let lb = b.cholesky().ok_or(WindMapError::Conditioning(jitter))?;
    let logdet_b: f64 = lb.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let c = lb.l().solve_lower_triangular(&(&a * y)).ok_or(WindMapError::Conditioning(jitter))? / s.sqrt();
    let value = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet_b - 0.5 * n * s.ln() - 0.5 * y.dot(y) / s
        + 0.5 * c.norm_squared()
        - 0.5 * n * params.signal_variance / s
        + 0.5 * a.norm_squared();

    let kinv = lk.inverse();
    let linv = l.solve_lower_triangular(&DMatrix::identity(m, m)).ok_or(WindMapError::Conditioning(jitter))?;
    let cinv = linv.transpose() * lb.inverse() * &linv;
    let u = &cinv * (&p * y);
    Ok(Factors { kmm, kmm0, p, kinv: symmetrize(kinv), cinv: symmetrize(cinv), u, value, jitter })
}

/// Bound value, plus its gradient when `with_grad` is set.
pub(crate) fn elbo(
    params: &KernelParams,
    isotropic: bool,
    z: &[Vec3],
    x: &[Vec3],
    y: &DVector<f64>,
    with_grad: bool,
) -> Result<(f64, Option<ElboGrad>), WindMapError> {
    let f = factor(params, z, x, y)?;
    if !with_grad {
        return Ok((f.value, None));
    }
    let n = x.len() as f64;
    let s = params.noise_variance;
    let sf = params.signal_variance;
    let p = &f.p;
    let kinv_p = &f.kinv * p;
    let cinv_p = &f.cinv * p;
    let ptu = p.transpose() * &f.u;
    let b = p * y;

    let g_k = (&f.kinv - &f.cinv) * 0.5 - &f.u * f.u.transpose() / (2.0 * s * s) - &kinv_p * kinv_p.transpose() / (2.0 * s);
    let resid = y - &ptu / s;
    let g_p = -&cinv_p / s + &f.u * resid.transpose() / (s * s) + &kinv_p / s;

    let tr_c_ppt = cinv_p.component_mul(p).sum();
    let tr_k_ppt = kinv_p.component_mul(p).sum();
    let d_s = tr_c_ppt / (2.0 * s * s) - n / (2.0 * s) + y.dot(y) / (2.0 * s * s) + ptu.norm_squared() / (2.0 * s.powi(4))
        - b.dot(&f.u) / s.powi(3)
        + n * sf / (2.0 * s * s)
        - tr_k_ppt / (2.0 * s * s);

    let mut hyper = Vec::with_capacity(KernelParams::log_len(isotropic));
    hyper.push(g_k.component_mul(&f.kmm).sum() + g_p.component_mul(p).sum() - n * sf / (2.0 * s));
    let d_ell: Vec<f64> = (0..3)
        .map(|d| {
            g_k.component_mul(&f.kmm0.component_mul(&dist2_component(params, z, z, d))).sum()
                + g_p.component_mul(&p.component_mul(&dist2_component(params, z, x, d))).sum()
        })
        .collect();
    if isotropic {
        hyper.push(d_ell.iter().sum());
    } else {
        hyper.extend(d_ell);
    }
    hyper.push(s * d_s);

    let m = z.len();
    let mut gz = vec![Vec3::zeros(); m];
    for (i, gzi) in gz.iter_mut().enumerate() {
        for d in 0..3 {
            let l2 = params.lengthscales[d] * params.lengthscales[d];
            let mut acc = 0.0;
            for (nn, xn) in x.iter().enumerate() {
                acc += g_p[(i, nn)] * p[(i, nn)] * (xn[d] - z[i][d]);
            }
            for j in 0..m {
                if j != i {
                    acc += (g_k[(i, j)] + g_k[(j, i)]) * f.kmm0[(i, j)] * (z[j][d] - z[i][d]);
                }
            }
            gzi[d] = acc / l2;
        }
    }
    Ok((f.value, Some(ElboGrad { hyper, inducing: gz })))
}

/// Optimal variational posterior for fixed hyperparameters and inducing inputs.
pub(crate) fn posterior(
    params: &KernelParams,
    z: &[Vec3],
    x: &[Vec3],
    y: &DVector<f64>,
) -> Result<(AxisModel, f64), WindMapError> {
    let f = factor(params, z, x, y)?;
    let s = params.noise_variance;
    let q_mean = &f.kmm * &f.u / s;
    let q_cov = symmetrize(&f.kmm * &f.cinv * &f.kmm);
    let precision = symmetrize(&f.kinv - &f.cinv);
    Ok((
        AxisModel { params: *params, inducing: z.to_vec(), q_mean, q_cov, weights: &f.u / s, precision },
        f.jitter,
    ))
}
