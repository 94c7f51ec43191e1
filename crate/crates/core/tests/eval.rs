use std::f64::consts::PI;

use aio_core::ekf::FilterMode;
use aio_core::eval::{
    drift, rmse, rte, rte_2s, run_experiment_with, yaw_rmse, EvalError, ExperimentInputs, ExperimentSpec, Summary,
};
use aio_core::geom::{from_ypr, rot_z, Rotation, Vec3};
use aio_core::sim::{simulate_flight, SensorNoiseSpec, Shape, TrajectorySpec, WhiskerModel, WindFieldSpec, YawProfile};
use proptest::prelude::*;

fn yaw(a: f64) -> Rotation {
    Rotation::from_matrix_projected(&rot_z(a))
}

#[test]
fn rmse_cases() {
    let gt = vec![Vec3::new(1.0, 2.0, 3.0); 4];
    assert_eq!(rmse(&gt, &gt).unwrap(), 0.0);
    let est: Vec<Vec3> = gt.iter().map(|p| p + Vec3::x()).collect();
    assert!((rmse(&est, &gt).unwrap() - 1.0).abs() < 1e-12);
    let est = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
    let gt = [Vec3::zeros(); 3];
    assert!((rmse(&est, &gt).unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!(matches!(rmse(&[], &[]), Err(EvalError::Empty)));
    assert!(matches!(rmse(&est[..2], &gt), Err(EvalError::LengthMismatch { .. })));
}

#[test]
fn yaw_rmse_cases() {
    let gt: Vec<Rotation> = (0..5).map(|i| Rotation::from_matrix_projected(&from_ypr(0.3 * i as f64, 0.1, -0.2))).collect();
    assert_eq!(yaw_rmse(&gt, &gt).unwrap(), 0.0);
    let ten = 10f64.to_radians();
    let est: Vec<Rotation> = (0..5).map(|i| Rotation::from_matrix_projected(&from_ypr(0.3 * i as f64 + ten, 0.1, -0.2))).collect();
    assert!((yaw_rmse(&est, &gt).unwrap() - 10.0 * PI / 180.0).abs() < 1e-12);
    let est = [yaw(179f64.to_radians()), yaw(-179f64.to_radians())];
    let zero = [yaw(0.0), yaw(0.0)];
    assert!((yaw_rmse(&est, &zero).unwrap() - 179.0 * PI / 180.0).abs() < 1e-12);
}

#[test]
fn drift_cases() {
    let line: Vec<Vec3> = (0..=10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
    assert_eq!(drift(&line, &line).unwrap(), 0.0);
    let mut est = line.clone();
    est[10] += Vec3::new(0.0, 1.0, 0.0);
    assert!((drift(&est, &line).unwrap() - 0.1).abs() < 1e-12);

    let square = [
        Vec3::zeros(),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::zeros(),
    ];
    let mut est = square;
    est[4] = Vec3::new(0.3, 0.4, 0.0);
    assert!((drift(&est, &square).unwrap() - 0.125).abs() < 1e-12);

    let still = [Vec3::zeros(); 3];
    assert!(matches!(drift(&still, &still), Err(EvalError::ZeroPathLength)));
    assert!(matches!(drift(&still[..1], &still[..1]), Err(EvalError::TooShort { .. })));
}

fn helix(n: usize) -> (Vec<Vec3>, Vec<Rotation>) {
    let p = (0..n).map(|i| {
        let t = i as f64 * 0.05;
        Vec3::new(2.0 * t.cos(), 2.0 * t.sin(), 0.1 * t)
    });
    let r = (0..n).map(|i| Rotation::from_matrix_projected(&from_ypr(0.05 * i as f64 + 0.3, 0.05, 0.02)));
    (p.collect(), r.collect())
}

#[test]
fn rte_cases() {
    let (gp, ga) = helix(60);
    assert_eq!(rte_2s(&gp, &ga, &gp, &ga, 10.0).unwrap(), 0.0);

    // Estimate rotated by a constant yaw about the origin, with matching yaw.
    let psi = 0.7;
    let rz = rot_z(psi);
    let ep: Vec<Vec3> = gp.iter().map(|p| rz * p).collect();
    let ea: Vec<Rotation> = ga.iter().map(|r| Rotation::from_matrix_projected(&(rz * r.matrix()))).collect();
    assert!(rte_2s(&ep, &ea, &gp, &ga, 10.0).unwrap() < 1e-12);

    // One window: gt moves along x with yaw 0, the estimate along y with yaw 90°.
    let gp = [Vec3::zeros(), Vec3::x()];
    let ep = [Vec3::zeros(), Vec3::y()];
    let ga = [yaw(0.0), yaw(0.0)];
    let ea = [yaw(PI / 2.0), yaw(PI / 2.0)];
    assert!(rte(&ep, &ea, &gp, &ga, 1).unwrap() < 1e-12);

    let (gp, ga) = helix(10);
    assert!(matches!(rte_2s(&gp, &ga, &gp, &ga, 10.0), Err(EvalError::TooShort { .. })));
}

fn perturbed(n: usize, seed: u64, c: f64) -> (Vec<Vec3>, Vec<Rotation>, Vec<Vec3>, Vec<Rotation>) {
    let (gp, ga) = helix(n);
    let ep = gp
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let k = (i as f64 + seed as f64) * 0.37;
            p + c * Vec3::new(k.sin(), (1.3 * k).cos(), 0.2 * (0.7 * k).sin())
        })
        .collect();
    (ep, ga.clone(), gp, ga)
}

proptest! {
    #[test]
    fn identical_trajectories_score_zero(n in 45usize..120) {
        let (p, r) = helix(n);
        prop_assert_eq!(rmse(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(drift(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(rte_2s(&p, &r, &p, &r, 20.0).unwrap(), 0.0);
        prop_assert_eq!(yaw_rmse(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn error_scaling_scales_rmse_and_rte(seed in 0u64..1000, c in 1.0f64..20.0) {
        let (ep1, ea, gp, ga) = perturbed(80, seed, 0.1);
        let ep_c: Vec<Vec3> = ep1.iter().zip(&gp).map(|(e, g)| g + (e - g) * c).collect();
        let r1 = rmse(&ep1, &gp).unwrap();
        prop_assert!((rmse(&ep_c, &gp).unwrap() - c * r1).abs() <= 1e-12 * c * r1.max(1.0));
        let t1 = rte(&ep1, &ea, &gp, &ga, 20).unwrap();
        prop_assert!((rte(&ep_c, &ea, &gp, &ga, 20).unwrap() - c * t1).abs() <= 1e-11 * c * t1.max(1.0));
    }

    #[test]
    fn metrics_ignore_time_labels(seed in 0u64..1000, rate in 5.0f64..50.0) {
        // Only the window in samples matters; the same sample sequence gives
        // identical metrics whatever rate it is labelled with.
        let (ep, ea, gp, ga) = perturbed(200, seed, 0.2);
        let w = aio_core::eval::rte_window_samples(rate);
        prop_assume!(w < 200);
        let a = rte(&ep, &ea, &gp, &ga, w).unwrap();
        let b = rte_2s(&ep, &ea, &gp, &ga, rate).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn summaries_are_ordered(values in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
        let s = Summary::of(&values).unwrap();
        prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
    }
}

fn short_log() -> aio_core::sim::SensorLog {
    let traj = TrajectorySpec {
        duration: 8.0,
        rate_hz: 50.0,
        shape: Shape::Circle { center: [0.0, 0.0, 1.0], radius: 1.0, period: 6.0 },
        peak_speed: 2.5,
        yaw: YawProfile::Tracking,
    };
    simulate_flight(&traj, &WindFieldSpec::calm(), &SensorNoiseSpec::noiseless(), &WhiskerModel::default(), None, 3)
        .unwrap()
}

fn short_spec(reps: usize) -> ExperimentSpec {
    ExperimentSpec {
        repetitions: reps,
        failure_window_start: 3.0,
        failure_window_width: 2.0,
        horizon: Some(8.0),
        modes: vec![FilterMode::ImuOnly],
        ..Default::default()
    }
}

#[test]
fn truth_injected_as_estimate_scores_zero() {
    let log = short_log();
    let inputs = [ExperimentInputs { log: &log, airflow: None, map: None }];
    let res = run_experiment_with(&short_spec(1), &inputs, |l, _, _| {
        Ok(l.rows.iter().map(|r| (r.truth.position, r.truth.attitude)).collect())
    })
    .unwrap();
    assert_eq!(res.records.len(), 1);
    let m = res.records[0].outcome.clone().unwrap();
    assert_eq!(m.values(), [0.0; 4]);
}

#[test]
fn experiments_are_reproducible_and_record_failures() {
    let log = short_log();
    let inputs = [ExperimentInputs { log: &log, airflow: None, map: None }];
    let mut spec = short_spec(4);
    spec.modes = vec![FilterMode::ImuOnly, FilterMode::AioNoMap];
    let cfg = aio_core::ekf::FilterConfig::default();
    let a = aio_core::eval::run_experiment(&spec, &inputs, &cfg).unwrap();
    let b = aio_core::eval::run_experiment(&spec, &inputs, &cfg).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert_eq!(text.lines().next().unwrap(), "run,mode,failure_t,rmse,rmse_yaw,dr,rte_2s");
    assert_eq!(text.lines().count(), 1 + 8);

    // aio-no-map lacks airflow estimates: every such run fails and is counted.
    let agg = a.aggregate();
    assert_eq!(agg.modes["aio-no-map"].successes, 0);
    assert_eq!(agg.modes["aio-no-map"].failures, 4);
    assert_eq!(agg.modes["imu-only"].successes, 4);
    assert!(agg.modes["imu-only"].metrics.contains_key("rte_2s"));
    let json = serde_json::to_string(&agg).unwrap();
    assert!(json.contains("\"median\""));
    assert_eq!(a.plot_data()["rmse"]["imu-only"].len(), 4);
    for r in &a.records {
        assert!((3.0..5.0).contains(&r.failure_t));
    }
}

#[test]
fn experiment_spec_is_validated() {
    let log = short_log();
    let inputs = [ExperimentInputs { log: &log, airflow: None, map: None }];
    let est = |l: &aio_core::sim::SensorLog, _: FilterMode, _: &ExperimentInputs<'_>| {
        Ok(l.rows.iter().map(|r| (r.truth.position, r.truth.attitude)).collect())
    };
    assert!(matches!(run_experiment_with(&short_spec(0), &inputs, est), Err(EvalError::InvalidSpec(_))));
    let late = ExperimentSpec { failure_window_start: 7.0, horizon: None, ..short_spec(1) };
    assert!(matches!(run_experiment_with(&late, &inputs, est), Err(EvalError::InvalidSpec(_))));
}
