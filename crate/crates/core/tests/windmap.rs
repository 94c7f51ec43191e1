mod common;

use aio_core::geom::Vec3;
use aio_core::optim::LbfgsConfig;
use aio_core::sim::{generate_trajectory, wind_at, Jet, Shape, TrajectorySpec, WindFieldSpec, YawProfile};
use aio_core::windmap::{
    exact_log_marginal, fit_exact, fit_exact_optimized, fit_sparse, initial_params, sparse_elbo,
    KernelParams, SparseConfig, WindDataset, WindMap, WindMapError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use common::{exact_vs_dense_error, noisy_dataset, random_points, smooth_field, sparse_vs_exact_error};
use rand_distr::{Distribution, Normal};

#[test]
fn exact_mean_matches_dense_oracle() {
    let worst = exact_vs_dense_error();
    assert!(worst < 1e-8, "worst {worst:.3e}");
}

#[test]
fn exact_interpolates_with_tiny_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pos: Vec<Vec3> = (0..12).map(|i| Vec3::new(i as f64 * 0.9, rng.random_range(-0.2..0.2), 0.0)).collect();
    let winds: Vec<Vec3> = pos.iter().map(smooth_field).collect();
    let ds = WindDataset::new(pos.clone(), winds.clone()).unwrap();
    let map = fit_exact(&ds, &KernelParams::isotropic(1.0, 0.5, 1e-12)).unwrap();
    for (p, w) in pos.iter().zip(&winds) {
        assert!((map.query(p).mean - w).amax() < 1e-6);
    }
}

#[test]
fn far_query_reverts_to_prior() {
    let ds = noisy_dataset(40, 0.1, 5);
    let params = KernelParams::isotropic(0.8, 1.0, 0.05);
    for map in [
        fit_exact(&ds, &params).unwrap(),
        fit_sparse(&ds, &params, &SparseConfig { inducing: 10, optimize_hyperparams: false, ..Default::default() })
            .unwrap(),
    ] {
        let q = map.query(&Vec3::new(100.0, -80.0, 50.0));
        assert!(q.mean.amax() < 1e-3);
        for a in 0..3 {
            assert!((q.covariance[(a, a)] - 0.8).abs() < 1e-9);
        }
        assert!(q.covariance.off_diagonal_is_zero());
        let p = Vec3::new(0.3, 0.2, -0.1);
        assert_eq!(map.query(&p), map.query(&p));
    }
}

trait OffDiag {
    fn off_diagonal_is_zero(&self) -> bool;
}
impl OffDiag for aio_core::geom::Mat3 {
    fn off_diagonal_is_zero(&self) -> bool {
        (0..3).all(|i| (0..3).all(|j| i == j || self[(i, j)] == 0.0))
    }
}

#[test]
fn sparse_with_all_inputs_matches_exact() {
    let (mean, cov) = sparse_vs_exact_error();
    assert!(mean < 1e-6 && cov < 1e-6, "mean {mean:.3e}, covariance {cov:.3e}");
}

fn heldout_rmse(map: &WindMap, pts: &[Vec3]) -> f64 {
    let se: f64 = pts.iter().map(|p| (map.query(p).mean - smooth_field(p)).norm_squared()).sum();
    (se / (3.0 * pts.len() as f64)).sqrt()
}

#[test]
fn sparse_is_close_to_exact_on_held_out_points() {
    let ds = noisy_dataset(500, 0.2, 8);
    let init = initial_params(&ds);
    let exact = fit_exact_optimized(&ds, &init, true, &LbfgsConfig { max_iters: 60, ..Default::default() }).unwrap();
    let sparse = fit_sparse(&ds, &init, &SparseConfig { inducing: 20, seed: 3, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let test = random_points(200, 2.3, &mut rng);
    let (re, rs) = (heldout_rmse(&exact, &test), heldout_rmse(&sparse, &test));
    assert!(rs <= 2.0 * re, "sparse {rs} vs exact {re}");
    for r in &sparse.reports {
        assert!(r.objective_history.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.objective_history.len() > 2);
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let ds = noisy_dataset(80, 0.15, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = random_points(8, 2.0, &mut rng);
    let y: Vec<f64> = ds.winds.iter().map(|w| w.x).collect();
    for iso in [true, false] {
        let base = if iso {
            KernelParams::isotropic(0.9, 1.2, 0.07)
        } else {
            KernelParams { signal_variance: 0.9, lengthscales: [1.0, 1.4, 0.8], noise_variance: 0.07 }
        };
        let (_, g, gz) = sparse_elbo(&base, iso, &z, &ds.positions, &y).unwrap();
        let v = base_to_log(&base, iso);
        let eps = 1e-5;
        for i in 0..v.len() {
            let mut vp = v.clone();
            vp[i] += eps;
            let mut vm = v.clone();
            vm[i] -= eps;
            let fp = sparse_elbo(&log_to_base(&vp, iso), iso, &z, &ds.positions, &y).unwrap().0;
            let fm = sparse_elbo(&log_to_base(&vm, iso), iso, &z, &ds.positions, &y).unwrap().0;
            let fd = (fp - fm) / (2.0 * eps);
            assert!(rel_err(fd, g[i]) < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
        for m in 0..z.len() {
            for d in 0..3 {
                let mut zp = z.clone();
                zp[m][d] += eps;
                let mut zm = z.clone();
                zm[m][d] -= eps;
                let fp = sparse_elbo(&base, iso, &zp, &ds.positions, &y).unwrap().0;
                let fm = sparse_elbo(&base, iso, &zm, &ds.positions, &y).unwrap().0;
                let fd = (fp - fm) / (2.0 * eps);
                assert!(rel_err(fd, gz[m][d]) < 1e-4, "z[{m}][{d}]: fd {fd} analytic {}", gz[m][d]);
            }
        }
    }
}

#[test]
fn log_marginal_gradient_matches_finite_differences() {
    let ds = noisy_dataset(50, 0.15, 12);
    let y: Vec<f64> = ds.winds.iter().map(|w| w.y).collect();
    for iso in [true, false] {
        let base = if iso {
            KernelParams::isotropic(1.1, 0.9, 0.04)
        } else {
            KernelParams { signal_variance: 1.1, lengthscales: [0.9, 1.3, 1.0], noise_variance: 0.04 }
        };
        let (_, g) = exact_log_marginal(&base, iso, &ds.positions, &y).unwrap();
        let v = base_to_log(&base, iso);
        for i in 0..v.len() {
            let mut vp = v.clone();
            vp[i] += 1e-5;
            let mut vm = v.clone();
            vm[i] -= 1e-5;
            let fd = (exact_log_marginal(&log_to_base(&vp, iso), iso, &ds.positions, &y).unwrap().0
                - exact_log_marginal(&log_to_base(&vm, iso), iso, &ds.positions, &y).unwrap().0)
                / 2e-5;
            assert!(rel_err(fd, g[i]) < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }
}

fn base_to_log(p: &KernelParams, iso: bool) -> Vec<f64> {
    let mut v = vec![p.signal_variance.ln()];
    if iso {
        v.push(p.lengthscales[0].ln());
    } else {
        v.extend(p.lengthscales.iter().map(|l| l.ln()));
    }
    v.push(p.noise_variance.ln());
    v
}

fn log_to_base(v: &[f64], iso: bool) -> KernelParams {
    let ls = if iso { [v[1].exp(); 3] } else { [v[1].exp(), v[2].exp(), v[3].exp()] };
    KernelParams { signal_variance: v[0].exp(), lengthscales: ls, noise_variance: v[v.len() - 1].exp() }
}

#[test]
fn variance_is_non_negative_on_a_grid() {
    let ds = noisy_dataset(120, 0.1, 13);
    let params = KernelParams::isotropic(1.0, 0.7, 1e-4);
    let exact = fit_exact(&ds, &params).unwrap();
    let sparse = fit_sparse(&ds, &initial_params(&ds), &SparseConfig::default()).unwrap();
    for map in [exact, sparse] {
        let grid = map.query_grid(Vec3::repeat(-3.0), Vec3::repeat(3.0), [10, 10, 10]);
        assert_eq!(grid.len(), 1000);
        for (_, q) in grid {
            assert!((0..3).all(|a| q.covariance[(a, a)] >= 0.0));
        }
    }
}

#[test]
fn exact_mode_is_permutation_invariant() {
    let ds = noisy_dataset(80, 0.1, 14);
    let params = KernelParams::isotropic(1.0, 1.0, 0.05);
    let a = fit_exact(&ds, &params).unwrap();
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for i in (1..idx.len()).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let shuffled =
        WindDataset::new(idx.iter().map(|&i| ds.positions[i]).collect(), idx.iter().map(|&i| ds.winds[i]).collect())
            .unwrap();
    let b = fit_exact(&shuffled, &params).unwrap();
    for q in random_points(30, 3.0, &mut rng) {
        let (qa, qb) = (a.query(&q), b.query(&q));
        assert!((qa.mean - qb.mean).amax() < 1e-9);
        assert!((qa.covariance - qb.covariance).amax() < 1e-9);
    }
}

#[test]
fn mean_jacobian_matches_finite_differences() {
    let ds = noisy_dataset(60, 0.1, 16);
    let map = fit_sparse(&ds, &initial_params(&ds), &SparseConfig { inducing: 12, ..Default::default() }).unwrap();
    let p = Vec3::new(0.4, -0.7, 0.2);
    let j = map.mean_jacobian(&p);
    for d in 0..3 {
        let mut e = Vec3::zeros();
        e[d] = 1e-6;
        let fd = (map.query(&(p + e)).mean - map.query(&(p - e)).mean) / 2e-6;
        assert!((fd - j.column(d)).amax() < 1e-6);
    }
}

#[test]
fn json_roundtrip_is_exact() {
    let ds = noisy_dataset(40, 0.1, 17);
    let map = fit_sparse(&ds, &initial_params(&ds), &SparseConfig { inducing: 8, ..Default::default() }).unwrap();
    let back = WindMap::from_json(&map.to_json().unwrap()).unwrap();
    assert_eq!(back, map);
    assert!(WindMap::from_json("{\"format\":\"other\"}").is_err());
}

#[test]
fn invalid_requests_are_rejected() {
    let ds = noisy_dataset(10, 0.1, 18);
    let p = KernelParams::isotropic(1.0, 1.0, 0.1);
    let cfg = SparseConfig { inducing: 11, ..Default::default() };
    assert!(matches!(fit_sparse(&ds, &p, &cfg), Err(WindMapError::TooManyInducing { .. })));
    assert!(matches!(WindDataset::new(vec![], vec![]), Err(WindMapError::EmptyDataset)));
    assert!(WindDataset::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], vec![Vec3::zeros()]).is_err());
    assert!(fit_exact(&ds, &KernelParams::isotropic(1.0, 0.0, 0.1)).is_err());
    let big = WindDataset::new(vec![Vec3::zeros(); 5001], vec![Vec3::zeros(); 5001]).unwrap();
    assert!(matches!(fit_exact(&big, &p), Err(WindMapError::TooLarge(5001))));
}

#[test]
fn subsampling_keeps_one_sample_per_interval() {
    let t: Vec<f64> = (0..1000).map(|i| i as f64 * 0.02).collect();
    let p: Vec<Vec3> = t.iter().map(|t| Vec3::new(*t, 0.0, 0.0)).collect();
    let ds = WindDataset::from_estimates(&t, &p, &p, Some(1.0)).unwrap();
    assert_eq!(ds.len(), 20);
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let back = WindDataset::read_csv(buf.as_slice(), None).unwrap();
    assert_eq!(back.positions, ds.positions);
}

#[test]
fn jet_field_map_recovers_the_mean_field() {
    let core = 3.0;
    let field = WindFieldSpec {
        jets: vec![Jet { origin: [-2.0, 0.0, 1.0], direction: [1.0, 0.0, 0.0], core_speed: core, radial_decay: 1.5, axial_decay: 6.0 }],
        turbulence_intensity: 0.0,
        turbulence_correlation_time: 0.5,
    };
    let center = [1.0, 0.0, 1.0];
    let amp = [3.0, 2.0, 0.5];
    let spec = TrajectorySpec {
        duration: 120.0,
        rate_hz: 1.0,
        shape: Shape::Lissajous { center, amplitude: amp, frequency_hz: [0.05, 0.07, 0.11], phase: [0.0, 0.5, 1.0] },
        peak_speed: 2.5,
        yaw: YawProfile::Fixed { yaw: 0.0 },
    };
    let truth = generate_trajectory(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let nd = Normal::new(0.0, 0.3).unwrap();
    let t: Vec<f64> = truth.iter().map(|s| s.t).collect();
    let pos: Vec<Vec3> = truth.iter().map(|s| s.position).collect();
    let w: Vec<Vec3> = pos.iter().map(|p| wind_at(&field, p) + Vec3::from_fn(|_, _| nd.sample(&mut rng))).collect();
    let ds = WindDataset::from_estimates(&t, &pos, &w, Some(1.0)).unwrap();
    let map = fit_sparse(&ds, &initial_params(&ds), &SparseConfig::default()).unwrap();
    let lo = Vec3::new(center[0] - 0.8 * amp[0], center[1] - 0.8 * amp[1], center[2] - 0.8 * amp[2]);
    let hi = Vec3::new(center[0] + 0.8 * amp[0], center[1] + 0.8 * amp[1], center[2] + 0.8 * amp[2]);
    let grid = map.query_grid(lo, hi, [8, 8, 3]);
    let se: f64 = grid.iter().map(|(p, q)| (q.mean - wind_at(&field, p)).norm_squared()).sum();
    let rmse = (se / grid.len() as f64).sqrt();
    assert!(rmse < 0.5 * core, "map rmse {rmse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn query_variance_bounded_by_prior(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
        let ds = noisy_dataset(25, 0.1, 20);
        let params = KernelParams::isotropic(0.7, 0.8, 0.01);
        let map = fit_exact(&ds, &params).unwrap();
        let q = map.query(&Vec3::new(x, y, z));
        for a in 0..3 {
            prop_assert!(q.covariance[(a, a)] >= 0.0);
            prop_assert!(q.covariance[(a, a)] <= 0.7 + 1e-12);
        }
    }
}
