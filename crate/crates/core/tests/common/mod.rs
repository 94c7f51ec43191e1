//! Oracles shared by the integration tests and the acceptance gate.
#![allow(dead_code)]

use aio_core::airflow::{loss_and_gradient, Architecture, FeatureMask, LstmRegressor, WindowDataset, FEATURES};
use aio_core::geom::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Relative error with an absolute floor below which both values count as
/// numerically zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random windows and targets for gradient checks.
pub fn random_windows(n: usize, seq_len: usize, rng: &mut ChaCha8Rng) -> WindowDataset {
    let mut ds = WindowDataset::new(seq_len);
    let len = n + seq_len - 1;
    let samples: Vec<[f64; FEATURES]> =
        (0..len).map(|_| std::array::from_fn(|_| normal(rng))).collect();
    let targets: Vec<Vec3> = (0..len).map(|_| Vec3::from_fn(|_, _| normal(rng))).collect();
    ds.push_segment(&samples, &targets);
    ds
}

/// Compares backpropagated gradients of the batch MSE with central
/// differences at `count` randomly chosen parameters. Returns the largest
/// relative error.
pub fn lstm_gradient_check(seed: u64, count: usize, eps: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::default();
    let mut model = LstmRegressor::initialized(arch, FeatureMask::FULL, seed);
    for p in model.params_mut() {
        *p += 0.2 * normal(&mut rng);
    }
    let data = random_windows(6, arch.seq_len, &mut rng);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params().len()];
    loss_and_gradient(&model, &data, &idx, &mut grad);
    let mut scratch = vec![0.0; grad.len()];
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let k = rng.random_range(0..grad.len());
        let orig = model.params()[k];
        model.params_mut()[k] = orig + eps;
        let lp = loss_and_gradient(&model, &data, &idx, &mut scratch);
        model.params_mut()[k] = orig - eps;
        let lm = loss_and_gradient(&model, &data, &idx, &mut scratch);
        model.params_mut()[k] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        worst = worst.max(rel_err(fd, grad[k], 1e-7));
    }
    worst
}

use aio_core::ekf::{
    airflow_jacobian, airflow_prediction, odometry_model, propagate_nominal, transition_jacobian, FilterState,
    OdomMeasurement, StateMatrix, StateVector, STATE_DIM,
};
use aio_core::geom::{exp_so3, Mat3, Rotation};
use aio_core::ekf::{run_filter, FilterConfig, FilterInputs, FilterMode};
use aio_core::sim::{simulate_flight, SensorNoiseSpec, Shape, TrajectorySpec, WhiskerModel, WindFieldSpec, YawProfile};
use aio_core::windmap::{
    fit_exact, fit_sparse, fit_sparse_at, KernelParams, SparseConfig, WindDataset, WindMap, JITTER,
};
use rand_distr::Normal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Largest entry-wise relative error between two Jacobians. Entries whose
/// magnitude is below `1e-4` in both are compared against that floor.
pub fn jacobian_rel_err<const R: usize, const C: usize>(
    a: &nalgebra::SMatrix<f64, R, C>,
    b: &nalgebra::SMatrix<f64, R, C>,
) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| rel_err(*x, *y, 1e-4)).fold(0.0, f64::max)
}

fn uniform3(rng: &mut ChaCha8Rng, half: f64) -> Vec3 {
    if half == 0.0 {
        return Vec3::zeros();
    }
    Vec3::from_fn(|_, _| rng.random_range(-half..half))
}

/// A filter state with moderate random entries and the given attitude error scale.
pub fn random_state(rng: &mut ChaCha8Rng, phi_scale: f64) -> FilterState {
    FilterState {
        t: 0.0,
        p: uniform3(rng, 5.0),
        v: uniform3(rng, 3.0),
        r_ref: Rotation::from_matrix_projected(&exp_so3(&uniform3(rng, 2.0))),
        phi: uniform3(rng, phi_scale),
        ba: uniform3(rng, 0.2),
        bg: uniform3(rng, 0.05),
        ew: uniform3(rng, 2.0),
        cov: StateMatrix::identity() * 0.01,
    }
}

/// Wind map of a smooth synthetic field over a 10 m cube.
pub fn small_map(seed: u64) -> WindMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<Vec3> = (0..80).map(|_| uniform3(&mut rng, 5.0)).collect();
    let winds: Vec<Vec3> = pos
        .iter()
        .map(|p| Vec3::new(2.0 * (-0.1 * (p.y * p.y + p.z * p.z)).exp(), 0.3 * (0.4 * p.x).sin(), 0.1 * p.y))
        .collect();
    let ds = WindDataset::new(pos, winds).unwrap();
    let cfg = SparseConfig { inducing: 15, optimize_hyperparams: false, seed, ..Default::default() };
    fit_sparse(&ds, &KernelParams::isotropic(1.0, 2.0, 0.05), &cfg).unwrap()
}

fn unit(j: usize, eps: f64) -> StateVector {
    let mut d = StateVector::zeros();
    d[j] = eps;
    d
}

/// Additive displacement of the raw error-state fields, φ included.
fn shift(s: &FilterState, j: usize, eps: f64) -> FilterState {
    let mut t = s.clone();
    let block = match j / 3 {
        0 => &mut t.p,
        1 => &mut t.v,
        2 => &mut t.phi,
        3 => &mut t.ba,
        4 => &mut t.bg,
        _ => &mut t.ew,
    };
    block[j % 3] += eps;
    t
}

pub const FD_EPS: f64 = 1e-6;

/// Worst relative error of the transition Jacobian against central
/// differences of the nominal propagation.
pub fn transition_jacobian_error(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_state(rng, 0.0);
    let accel = Vec3::new(0.0, 0.0, 9.81) + uniform3(rng, 3.0);
    let gyro = uniform3(rng, 1.0);
    let dt = rng.random_range(0.002..0.05);
    let f = transition_jacobian(&s, &accel, &gyro, dt);
    let base = propagate_nominal(&s, &accel, &gyro, dt);
    let mut fd = StateMatrix::zeros();
    for j in 0..STATE_DIM {
        let plus = propagate_nominal(&s.boxplus(&unit(j, FD_EPS)), &accel, &gyro, dt).boxminus(&base);
        let minus = propagate_nominal(&s.boxplus(&unit(j, -FD_EPS)), &accel, &gyro, dt).boxminus(&base);
        fd.set_column(j, &((plus - minus) / (2.0 * FD_EPS)));
    }
    jacobian_rel_err(&f, &fd)
}

/// Worst relative error of the airflow measurement Jacobian at a random
/// state with nonzero attitude error.
pub fn airflow_jacobian_error(rng: &mut ChaCha8Rng, map: Option<&WindMap>) -> f64 {
    let s = random_state(rng, 0.3);
    let h = airflow_jacobian(&s, map);
    let mut fd = nalgebra::SMatrix::<f64, 3, STATE_DIM>::zeros();
    for j in 0..STATE_DIM {
        let d = (airflow_prediction(&shift(&s, j, FD_EPS), map) - airflow_prediction(&shift(&s, j, -FD_EPS), map))
            / (2.0 * FD_EPS);
        fd.set_column(j, &d);
    }
    jacobian_rel_err(&h, &fd)
}

/// Worst relative error of the odometry measurement matrix against central
/// differences of the negated residual.
pub fn odometry_jacobian_error(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_state(rng, 0.3);
    let truth = random_state(rng, 0.0);
    let meas = OdomMeasurement {
        t: 0.0,
        position: truth.p,
        velocity: truth.v,
        attitude: Rotation::from_matrix_projected(&(exp_so3(&(s.phi * 0.5)) * s.r_ref.matrix())),
        position_cov: Mat3::identity() * 1e-4,
        velocity_cov: Mat3::identity() * 1e-4,
        attitude_cov: Mat3::identity() * 1e-5,
    };
    let (_, h, _) = odometry_model(&s, &meas).unwrap();
    let h = nalgebra::SMatrix::<f64, 9, STATE_DIM>::from_column_slice(h.as_slice());
    let mut fd = nalgebra::SMatrix::<f64, 9, STATE_DIM>::zeros();
    for j in 0..STATE_DIM {
        let rp = odometry_model(&shift(&s, j, FD_EPS), &meas).unwrap().0;
        let rm = odometry_model(&shift(&s, j, -FD_EPS), &meas).unwrap().0;
        let d = -(rp - rm) / (2.0 * FD_EPS);
        fd.set_column(j, &nalgebra::SVector::<f64, 9>::from_column_slice(d.as_slice()));
    }
    jacobian_rel_err(&h, &fd)
}

// Gaussian-process oracles.

pub fn random_points(n: usize, half: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-half..half))).collect()
}

pub fn smooth_field(p: &Vec3) -> Vec3 {
    Vec3::new(
        1.5 * (0.6 * p.x).sin() * (0.4 * p.y).cos() + 0.5,
        (0.5 * p.y + 0.3 * p.z).cos() - 0.3 * p.x,
        0.4 * (0.7 * p.x + 0.2 * p.y).sin(),
    )
}

pub fn noisy_dataset(n: usize, noise: f64, seed: u64) -> WindDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = random_points(n, 2.5, &mut rng);
    let nd = Normal::new(0.0, noise).unwrap();
    let winds = pos.iter().map(|p| smooth_field(p) + Vec3::from_fn(|_, _| nd.sample(&mut rng))).collect();
    WindDataset::new(pos, winds).unwrap()
}

/// Gaussian elimination with partial pivoting on an augmented copy.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, v)| r.iter().copied().chain([*v]).collect()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        m.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

pub fn rbf(p: &KernelParams, a: &Vec3, b: &Vec3) -> f64 {
    p.signal_variance * (-(a - b).norm_squared() / (2.0 * p.lengthscales[0] * p.lengthscales[0])).exp()
}

/// Largest deviation of the exact GP mean from a dense Gaussian-elimination
/// solve at 10 queries on every axis.
pub fn exact_vs_dense_error() -> f64 {
    let ds = noisy_dataset(60, 0.1, 1);
    let params = KernelParams::isotropic(1.2, 1.1, 0.02);
    let map = fit_exact(&ds, &params).unwrap();
    let n = ds.len();
    let diag = params.noise_variance + JITTER * params.signal_variance;
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n).map(|j| rbf(&params, &ds.positions[i], &ds.positions[j]) + if i == j { diag } else { 0.0 }).collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let queries = random_points(10, 3.0, &mut rng);
    let mut worst: f64 = 0.0;
    for axis in 0..3 {
        let y: Vec<f64> = ds.winds.iter().map(|w| w[axis]).collect();
        let alpha = dense_solve(&a, &y);
        for q in &queries {
            let expect: f64 = ds.positions.iter().zip(&alpha).map(|(p, al)| rbf(&params, q, p) * al).sum();
            worst = worst.max((map.query(q).mean[axis] - expect).abs());
        }
    }
    worst
}

/// Sparse GP with the inducing set equal to the training inputs against the
/// exact GP at 20 queries: largest mean and covariance deviations.
pub fn sparse_vs_exact_error() -> (f64, f64) {
    let ds = noisy_dataset(30, 0.1, 6);
    let params = KernelParams::isotropic(1.0, 1.3, 0.05);
    let exact = fit_exact(&ds, &params).unwrap();
    let cfg = SparseConfig { optimize_hyperparams: false, optimize_inducing: false, ..Default::default() };
    let sparse = fit_sparse_at(&ds, &params, &ds.positions, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut mean, mut cov): (f64, f64) = (0.0, 0.0);
    for q in random_points(20, 3.0, &mut rng) {
        let (a, b) = (exact.query(&q), sparse.query(&q));
        mean = mean.max((a.mean - b.mean).amax());
        cov = cov.max((a.covariance - b.covariance).amax());
    }
    (mean, cov)
}

// Filter consistency.

pub fn noisy_spec() -> SensorNoiseSpec {
    SensorNoiseSpec {
        accel_noise_density: 0.02,
        gyro_noise_density: 0.002,
        accel_bias_walk: 1e-3,
        gyro_bias_walk: 1e-4,
        accel_bias_init: 0.05,
        gyro_bias_init: 0.005,
        whisker_noise_std: 0.01,
        throttle_noise_std: 0.01,
        battery_factor_std: 0.0,
        odom_position_std: 0.01,
        odom_velocity_std: 0.02,
        odom_attitude_std: 0.005,
    }
}

pub fn circle(duration: f64) -> TrajectorySpec {
    TrajectorySpec {
        duration,
        rate_hz: 200.0,
        shape: Shape::Circle { center: [0.0, 0.0, 1.5], radius: 1.0, period: 10.0 },
        peak_speed: 2.5,
        yaw: YawProfile::Fixed { yaw: 0.3 },
    }
}

/// Number of Monte Carlo runs whose final position/velocity NEES
/// lies inside the two-sided 95% chi-square(6) band, with the band edges.
pub fn nees_inside_band(runs: u64) -> (usize, f64, f64) {
    let spec = noisy_spec();
    let cfg = FilterConfig::matched_to(&spec, 0.0);
    let chi = ChiSquared::new(6.0).unwrap();
    let (lo, hi) = (chi.inverse_cdf(0.025), chi.inverse_cdf(0.975));
    let mut inside = 0;
    for run in 0..runs {
        let log = simulate_flight(&circle(5.0), &WindFieldSpec::calm(), &spec, &WhiskerModel::default(), None, 1000 + run)
            .unwrap();
        let out = run_filter(&log, &cfg, FilterMode::ImuOnly, FilterInputs::default()).unwrap();
        let s = &out.final_state;
        let t = &log.rows.last().unwrap().truth;
        let mut e = nalgebra::SVector::<f64, 6>::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&(s.p - t.position));
        e.fixed_rows_mut::<3>(3).copy_from(&(s.v - t.velocity));
        let p = s.cov.fixed_view::<6, 6>(0, 0).into_owned();
        let nees = e.dot(&(p.try_inverse().unwrap() * e));
        if (lo..=hi).contains(&nees) {
            inside += 1;
        }
    }
    (inside, lo, hi)
}
