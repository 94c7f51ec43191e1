use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::EkfError;
use crate::airflow::AirflowMeasurement;
use crate::geom::{exp_so3, hat, left_jacobian, log_so3, Mat3, Rotation, Vec3, GRAVITY};
use crate::windmap::WindMap;

pub const STATE_DIM: usize = 18;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type StateVector = SVector<f64, STATE_DIM>;

/// Offsets of the error-state blocks.
pub mod idx {
    pub const P: usize = 0;
    pub const V: usize = 3;
    pub const PHI: usize = 6;
    pub const BA: usize = 9;
    pub const BG: usize = 12;
    pub const EW: usize = 15;
}

/// Error-state EKF state. The composed attitude is `exp(φ) · R_ref`; φ is
/// zero between steps because every update injects it into `R_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    pub r_ref: Rotation,
    pub phi: Vec3,
    pub ba: Vec3,
    pub bg: Vec3,
    pub ew: Vec3,
    pub cov: StateMatrix,
}

impl FilterState {
    pub fn attitude(&self) -> Mat3 {
        exp_so3(&self.phi) * self.r_ref.matrix()
    }

    /// Folds φ into the reference attitude and zeroes it. The covariance is
    /// left untouched.
    pub fn inject_attitude(&mut self) {
        if self.phi != Vec3::zeros() {
            self.r_ref = Rotation::from_matrix_projected(&self.attitude());
            self.phi = Vec3::zeros();
        }
    }

    /// State displaced by an error vector; the attitude error composes on
    /// the left of the current attitude.
    pub fn boxplus(&self, d: &StateVector) -> Self {
        let b = |i: usize| Vec3::new(d[i], d[i + 1], d[i + 2]);
        let mut s = self.clone();
        s.p += b(idx::P);
        s.v += b(idx::V);
        s.r_ref = Rotation::from_matrix_projected(&(exp_so3(&b(idx::PHI)) * self.attitude()));
        s.phi = Vec3::zeros();
        s.ba += b(idx::BA);
        s.bg += b(idx::BG);
        s.ew += b(idx::EW);
        s
    }

    /// Error vector `self ⊖ other` matching [`Self::boxplus`].
    pub fn boxminus(&self, other: &Self) -> StateVector {
        let mut d = StateVector::zeros();
        let mut put = |i: usize, v: Vec3| d.fixed_rows_mut::<3>(i).copy_from(&v);
        put(idx::P, self.p - other.p);
        put(idx::V, self.v - other.v);
        put(idx::PHI, log_so3(&(self.attitude() * other.attitude().transpose())));
        put(idx::BA, self.ba - other.ba);
        put(idx::BG, self.bg - other.bg);
        put(idx::EW, self.ew - other.ew);
        d
    }

    pub fn block(&self, i: usize) -> Mat3 {
        self.cov.fixed_view::<3, 3>(i, i).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        [self.p, self.v, self.phi, self.ba, self.bg, self.ew].iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.cov.iter().all(|x| x.is_finite())
    }

    /// Smallest eigenvalue of the covariance relative to its trace.
    pub fn covariance_min_relative_eigenvalue(&self) -> f64 {
        let tr = self.cov.trace().max(f64::MIN_POSITIVE);
        self.cov.symmetric_eigenvalues().min() / tr
    }

    pub fn covariance_asymmetry(&self) -> f64 {
        (self.cov - self.cov.transpose()).norm() / self.cov.norm().max(f64::MIN_POSITIVE)
    }
}

/// Continuous-time noise densities (covariances per second).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoiseSpec {
    pub accel: Mat3,
    pub gyro: Mat3,
    pub accel_bias: Mat3,
    pub gyro_bias: Mat3,
    /// Random walk of the wind error. Zero whenever a wind map is attached.
    pub wind: Mat3,
}

impl ProcessNoiseSpec {
    /// Isotropic densities given as standard deviations.
    pub fn isotropic(accel: f64, gyro: f64, accel_bias: f64, gyro_bias: f64, wind: f64) -> Self {
        let d = |s: f64| Mat3::identity() * (s * s);
        Self { accel: d(accel), gyro: d(gyro), accel_bias: d(accel_bias), gyro_bias: d(gyro_bias), wind: d(wind) }
    }

    pub fn validate(&self) -> Result<(), EkfError> {
        for (name, m) in [
            ("accel", &self.accel),
            ("gyro", &self.gyro),
            ("accel_bias", &self.accel_bias),
            ("gyro_bias", &self.gyro_bias),
            ("wind", &self.wind),
        ] {
            let sym = (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
            if !m.iter().all(|x| x.is_finite()) || !sym || m.symmetric_eigenvalues().min() < -1e-12 {
                return Err(EkfError::InvalidNoise(format!("{name} covariance is not symmetric PSD")));
            }
        }
        Ok(())
    }
}

/// Nominal forward-Euler propagation; the covariance is copied unchanged.
pub fn propagate_nominal(state: &FilterState, accel: &Vec3, gyro: &Vec3, dt: f64) -> FilterState {
    let r = state.attitude();
    let mut s = state.clone();
    s.p = state.p + state.v * dt;
    s.v = state.v + (GRAVITY + r * (accel - state.ba)) * dt;
    s.r_ref = Rotation::from_matrix_projected(&(r * exp_so3(&((gyro - state.bg) * dt))));
    s.phi = Vec3::zeros();
    s.t = state.t + dt;
    s
}

/// Jacobian of the error-state transition of [`propagate_nominal`].
pub fn transition_jacobian(state: &FilterState, accel: &Vec3, gyro: &Vec3, dt: f64) -> StateMatrix {
    let r = state.attitude();
    let mut f = StateMatrix::identity();
    let eye = Mat3::identity();
    f.fixed_view_mut::<3, 3>(idx::P, idx::V).copy_from(&(eye * dt));
    f.fixed_view_mut::<3, 3>(idx::V, idx::PHI).copy_from(&(-hat(&(r * (accel - state.ba))) * dt));
    f.fixed_view_mut::<3, 3>(idx::V, idx::BA).copy_from(&(-r * dt));
    f.fixed_view_mut::<3, 3>(idx::PHI, idx::BG).copy_from(&(-r * left_jacobian(&((gyro - state.bg) * dt)) * dt));
    f
}

/// Discrete process noise `G Q_c Gᵀ Δt`.
pub fn process_noise(state: &FilterState, noise: &ProcessNoiseSpec, dt: f64) -> StateMatrix {
    let r = state.attitude();
    let mut q = StateMatrix::zeros();
    q.fixed_view_mut::<3, 3>(idx::V, idx::V).copy_from(&(r * noise.accel * r.transpose() * dt));
    q.fixed_view_mut::<3, 3>(idx::PHI, idx::PHI).copy_from(&(r * noise.gyro * r.transpose() * dt));
    q.fixed_view_mut::<3, 3>(idx::BA, idx::BA).copy_from(&(noise.accel_bias * dt));
    q.fixed_view_mut::<3, 3>(idx::BG, idx::BG).copy_from(&(noise.gyro_bias * dt));
    q.fixed_view_mut::<3, 3>(idx::EW, idx::EW).copy_from(&(noise.wind * dt));
    q
}

pub const MAX_DT: f64 = 0.1;

/// One IMU prediction step.
pub fn predict(
    state: &FilterState,
    accel: &Vec3,
    gyro: &Vec3,
    dt: f64,
    noise: &ProcessNoiseSpec,
) -> Result<FilterState, EkfError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(EkfError::InvalidTimestep(dt));
    }
    if !accel.iter().chain(gyro.iter()).all(|x| x.is_finite()) {
        return Err(EkfError::NonFiniteImu { t: state.t });
    }
    let mut base = state.clone();
    base.inject_attitude();
    let f = transition_jacobian(&base, accel, gyro, dt);
    let q = process_noise(&base, noise, dt);
    let mut next = propagate_nominal(&base, accel, gyro, dt);
    let p = f * base.cov * f.transpose() + q;
    next.cov = (p + p.transpose()) * 0.5;
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Airflow,
    Odometry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOutcome {
    Applied,
    /// Rejected by the chi-square gate.
    Gated,
    /// Innovation covariance could not be inverted.
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateInfo {
    pub t: f64,
    pub kind: UpdateKind,
    pub dim: usize,
    /// Normalized innovation squared, when the innovation covariance was invertible.
    pub nis: Option<f64>,
    pub outcome: UpdateOutcome,
}

/// 99.7 % quantiles of the chi-square distribution for 1 to 9 degrees of freedom.
const CHI2_997: [f64; 9] = [8.8075, 11.6183, 13.9314, 16.0143, 17.9576, 19.8047, 21.5801, 23.2997, 24.9741];

fn kalman_update(
    state: &FilterState,
    kind: UpdateKind,
    residual: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gate: bool,
) -> (FilterState, UpdateInfo) {
    let m = residual.len();
    let mut info = UpdateInfo { t: state.t, kind, dim: m, nis: None, outcome: UpdateOutcome::Singular };
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, state.cov.as_slice());
    let pht = &p * h.transpose();
    let s = h * &pht + r;
    let s = (&s + s.transpose()) * 0.5;
    let Some(chol) = s.clone().cholesky() else {
        return (state.clone(), info);
    };
    let s_inv_r = chol.solve(residual);
    let nis = residual.dot(&s_inv_r);
    info.nis = Some(nis);
    if !nis.is_finite() {
        return (state.clone(), info);
    }
    if gate && m <= CHI2_997.len() && nis > CHI2_997[m - 1] {
        info.outcome = UpdateOutcome::Gated;
        return (state.clone(), info);
    }
    let k = chol.solve(&pht.transpose()).transpose();
    let dx = &k * residual;
    let ikh = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM) - &k * h;
    let p_new = &ikh * &p * ikh.transpose() + &k * r * k.transpose();
    let p_new = (&p_new + p_new.transpose()) * 0.5;

    let mut next = state.clone();
    let b = |i: usize| Vec3::new(dx[i], dx[i + 1], dx[i + 2]);
    next.p += b(idx::P);
    next.v += b(idx::V);
    next.phi += b(idx::PHI);
    next.ba += b(idx::BA);
    next.bg += b(idx::BG);
    next.ew += b(idx::EW);
    next.inject_attitude();
    next.cov = StateMatrix::from_column_slice(p_new.as_slice());
    info.outcome = UpdateOutcome::Applied;
    (next, info)
}

/// Total wind the airflow model expects at the current state: map mean
/// (if any) plus the wind error.
pub fn modeled_wind(state: &FilterState, map: Option<&WindMap>) -> Vec3 {
    map.map_or(Vec3::zeros(), |m| m.query(&state.p).mean) + state.ew
}

/// Predicted body-frame relative airflow `Rᵀ (w - v)`.
pub fn airflow_prediction(state: &FilterState, map: Option<&WindMap>) -> Vec3 {
    state.attitude().transpose() * (modeled_wind(state, map) - state.v)
}

/// Jacobian of [`airflow_prediction`] with respect to the error state, at
/// the current (possibly nonzero) φ.
pub fn airflow_jacobian(state: &FilterState, map: Option<&WindMap>) -> SMatrix<f64, 3, STATE_DIM> {
    let rt = state.attitude().transpose();
    let c = modeled_wind(state, map) - state.v;
    let mut h = SMatrix::<f64, 3, STATE_DIM>::zeros();
    if let Some(m) = map {
        h.fixed_view_mut::<3, 3>(0, idx::P).copy_from(&(rt * m.mean_jacobian(&state.p)));
    }
    h.fixed_view_mut::<3, 3>(0, idx::V).copy_from(&(-rt));
    h.fixed_view_mut::<3, 3>(0, idx::PHI).copy_from(&(rt * hat(&c) * left_jacobian(&state.phi)));
    h.fixed_view_mut::<3, 3>(0, idx::EW).copy_from(&rt);
    h
}

/// Airflow update with the map uncertainty mapped into the measurement
/// space: `S = H P Hᵀ + Σ_LSTM + Rᵀ Σ_M(p) R`, where `Σ_M` is the map's
/// predictive covariance at the estimated position.
pub fn update_airflow(
    state: &FilterState,
    meas: &AirflowMeasurement,
    map: Option<&WindMap>,
    gate: bool,
) -> (FilterState, UpdateInfo) {
    let h = airflow_jacobian(state, map);
    let rt = state.attitude().transpose();
    let mut r = meas.covariance;
    if let Some(m) = map {
        r += rt * m.predictive_covariance(&state.p) * rt.transpose();
    }
    let residual = meas.airflow - airflow_prediction(state, map);
    kalman_update(
        state,
        UpdateKind::Airflow,
        &DVector::from_column_slice(residual.as_slice()),
        &DMatrix::from_column_slice(3, STATE_DIM, h.as_slice()),
        &DMatrix::from_column_slice(3, 3, r.as_slice()),
        gate,
    )
}

/// Odometry measurement. A block whose covariance has a non-finite entry
/// carries no information and is left out of the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdomMeasurement {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Rotation,
    pub position_cov: Mat3,
    pub velocity_cov: Mat3,
    pub attitude_cov: Mat3,
}

impl OdomMeasurement {
    fn blocks(&self) -> [(usize, &Mat3); 3] {
        [(idx::P, &self.position_cov), (idx::V, &self.velocity_cov), (idx::PHI, &self.attitude_cov)]
    }
}

fn used(cov: &Mat3) -> bool {
    cov.iter().all(|x| x.is_finite())
}

/// Stacked odometry residual, measurement matrix and noise for the blocks
/// in use. The attitude block measures `log(R_m R_refᵀ)`, which the error
/// state predicts as φ.
pub fn odometry_model(
    state: &FilterState,
    meas: &OdomMeasurement,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), EkfError> {
    let active: Vec<(usize, &Mat3)> = meas.blocks().into_iter().filter(|(_, c)| used(c)).collect();
    let m = 3 * active.len();
    let mut residual = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, STATE_DIM);
    let mut r = DMatrix::zeros(m, m);
    for (row, (block, cov)) in active.iter().enumerate() {
        if cov.cholesky().is_none() {
            return Err(EkfError::InvalidMeasurement(format!("odometry covariance block {block} is not PD")));
        }
        let res = match *block {
            idx::P => meas.position - state.p,
            idx::V => meas.velocity - state.v,
            _ => log_so3(&(meas.attitude.matrix() * state.r_ref.matrix().transpose())) - state.phi,
        };
        residual.fixed_rows_mut::<3>(3 * row).copy_from(&res);
        h.fixed_view_mut::<3, 3>(3 * row, *block).copy_from(&Mat3::identity());
        r.fixed_view_mut::<3, 3>(3 * row, 3 * row).copy_from(*cov);
    }
    Ok((residual, h, r))
}

pub fn update_odometry(
    state: &FilterState,
    meas: &OdomMeasurement,
    gate: bool,
) -> Result<(FilterState, UpdateInfo), EkfError> {
    let (residual, h, r) = odometry_model(state, meas)?;
    if residual.is_empty() {
        let info = UpdateInfo { t: state.t, kind: UpdateKind::Odometry, dim: 0, nis: None, outcome: UpdateOutcome::Applied };
        return Ok((state.clone(), info));
    }
    Ok(kalman_update(state, UpdateKind::Odometry, &residual, &h, &r, gate))
}
