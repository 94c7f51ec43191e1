use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::WindMapError;
use crate::geom::Vec3;

/// Squared-exponential kernel hyperparameters for one wind component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// σ_f², (m/s)².
    pub signal_variance: f64,
    /// Per-axis length scales (m); equal entries give the isotropic kernel.
    pub lengthscales: [f64; 3],
    /// σ_n², (m/s)².
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn isotropic(signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Self {
        Self { signal_variance, lengthscales: [lengthscale; 3], noise_variance }
    }

    pub fn validate(&self) -> Result<(), WindMapError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.signal_variance) && ok(self.noise_variance) && self.lengthscales.iter().all(|l| ok(*l)) {
            Ok(())
        } else {
            Err(WindMapError::InvalidParams(format!("{self:?}")))
        }
    }

    /// Scaled squared distance `Σ_d (Δ_d / ℓ_d)²`.
    pub(crate) fn scaled_dist2(&self, a: &Vec3, b: &Vec3) -> f64 {
        (0..3)
            .map(|d| {
                let r = (a[d] - b[d]) / self.lengthscales[d];
                r * r
            })
            .sum()
    }

    /// `σ_f² exp(-‖p - q‖² / (2ℓ²))` (per-axis ℓ).
    pub fn eval(&self, a: &Vec3, b: &Vec3) -> f64 {
        self.signal_variance * (-0.5 * self.scaled_dist2(a, b)).exp()
    }

    /// Gradient of `k(p, q)` with respect to `p`.
    pub fn grad_first(&self, a: &Vec3, b: &Vec3) -> Vec3 {
        let k = self.eval(a, b);
        Vec3::from_fn(|d, _| -k * (a[d] - b[d]) / (self.lengthscales[d] * self.lengthscales[d]))
    }

    pub fn cross(&self, a: &[Vec3], b: &[Vec3]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(&a[i], &b[j]))
    }

    /// Log-space parameter vector `[log σ_f², log ℓ (1 or 3), log σ_n²]`.
    pub(crate) fn to_log(&self, isotropic: bool) -> Vec<f64> {
        let mut v = vec![self.signal_variance.ln()];
        if isotropic {
            v.push(self.lengthscales[0].ln());
        } else {
            v.extend(self.lengthscales.iter().map(|l| l.ln()));
        }
        v.push(self.noise_variance.ln());
        v
    }

    pub(crate) fn from_log(v: &[f64], isotropic: bool) -> Self {
        let lengthscales = if isotropic {
            [v[1].exp(); 3]
        } else {
            [v[1].exp(), v[2].exp(), v[3].exp()]
        };
        Self { signal_variance: v[0].exp(), lengthscales, noise_variance: v[v.len() - 1].exp() }
    }

    pub(crate) fn log_len(isotropic: bool) -> usize {
        if isotropic {
            3
        } else {
            5
        }
    }
}

/// Matrix of `Δ_d² / ℓ_d²` for every pair, i.e. `∂ log k / ∂ log ℓ_d`
/// up to the factor `k`.
pub(crate) fn dist2_component(p: &KernelParams, a: &[Vec3], b: &[Vec3], d: usize) -> DMatrix<f64> {
    let l2 = p.lengthscales[d] * p.lengthscales[d];
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let r = a[i][d] - b[j][d];
        r * r / l2
    })
}

/// Cholesky factor of `m + jitter·I`, raising the jitter tenfold until the
/// factorization succeeds. Returns the factor and the jitter actually used.
pub(crate) fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    base_jitter: f64,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64), WindMapError> {
    let scale = m.diagonal().amax().max(1e-300);
    let mut jitter = base_jitter;
    for _ in 0..10 {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(c) = a.cholesky() {
            if jitter > base_jitter {
                log::warn!("Gram matrix needed jitter {jitter:.3e} (base {base_jitter:.3e}) to factor");
            }
            return Ok((c, jitter));
        }
        jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-10 * scale };
    }
    Err(WindMapError::Conditioning(jitter))
}
