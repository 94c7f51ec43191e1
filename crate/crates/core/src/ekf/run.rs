use std::io::Write;

use serde::{Deserialize, Serialize};

use super::filter::{
    predict, update_airflow, update_odometry, FilterState, OdomMeasurement, ProcessNoiseSpec, StateMatrix, UpdateInfo,
    UpdateOutcome, STATE_DIM,
};
use super::EkfError;
use crate::airflow::AirflowMeasurement;
use crate::geom::{Mat3, Rotation, Vec3};
use crate::sim::{LogRow, SensorLog, SensorNoiseSpec};
use crate::windmap::WindMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    ImuOnly,
    AioNoMap,
    AioWithMap,
}

impl FilterMode {
    pub const ALL: [FilterMode; 3] = [FilterMode::ImuOnly, FilterMode::AioNoMap, FilterMode::AioWithMap];

    pub fn name(&self) -> &'static str {
        match self {
            FilterMode::ImuOnly => "imu-only",
            FilterMode::AioNoMap => "aio-no-map",
            FilterMode::AioWithMap => "aio-with-map",
        }
    }

    pub fn uses_airflow(&self) -> bool {
        !matches!(self, FilterMode::ImuOnly)
    }
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FilterMode {
    type Err = EkfError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| EkfError::UnknownMode(s.to_string()))
    }
}

/// Where the initial mean comes from and the initial variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitPolicy {
    /// Start from the logged ground truth instead of the first odometry row.
    pub from_truth: bool,
    pub position_var: f64,
    pub velocity_var: f64,
    pub attitude_var: f64,
    pub accel_bias_var: f64,
    pub gyro_bias_var: f64,
    /// Initial wind-error variance without a map.
    pub wind_var: f64,
    /// Initial wind-error variance with a map attached.
    pub wind_var_with_map: f64,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self {
            from_truth: false,
            position_var: 1e-4,
            velocity_var: 4e-4,
            attitude_var: 1e-4,
            accel_bias_var: 0.01,
            gyro_bias_var: 1e-4,
            wind_var: 1.0,
            wind_var_with_map: 0.01,
        }
    }
}

/// How logged odometry is fused while it is available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdomPolicy {
    pub rate_hz: f64,
    pub use_velocity: bool,
    pub use_attitude: bool,
    pub position_var: f64,
    pub velocity_var: f64,
    pub attitude_var: f64,
}

impl Default for OdomPolicy {
    fn default() -> Self {
        Self {
            rate_hz: 50.0,
            use_velocity: true,
            use_attitude: true,
            position_var: 1e-4,
            velocity_var: 4e-4,
            attitude_var: 2.5e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub noise: ProcessNoiseSpec,
    pub init: InitPolicy,
    pub odometry: OdomPolicy,
    /// Reject updates whose NIS exceeds the 99.7 % chi-square quantile.
    pub gate: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: ProcessNoiseSpec::isotropic(0.02, 0.002, 1e-3, 1e-4, 0.05),
            init: InitPolicy::default(),
            odometry: OdomPolicy::default(),
            gate: false,
        }
    }
}

const VAR_FLOOR: f64 = 1e-12;

impl FilterConfig {
    /// Noise models matching a simulator configuration.
    pub fn matched_to(sensor: &SensorNoiseSpec, wind_walk: f64) -> Self {
        let sq = |v: f64| (v * v).max(VAR_FLOOR);
        Self {
            noise: ProcessNoiseSpec::isotropic(
                sensor.accel_noise_density,
                sensor.gyro_noise_density,
                sensor.accel_bias_walk,
                sensor.gyro_bias_walk,
                wind_walk,
            ),
            init: InitPolicy {
                position_var: sq(sensor.odom_position_std),
                velocity_var: sq(sensor.odom_velocity_std),
                attitude_var: sq(sensor.odom_attitude_std),
                accel_bias_var: sq(sensor.accel_bias_init),
                gyro_bias_var: sq(sensor.gyro_bias_init),
                ..Default::default()
            },
            odometry: OdomPolicy {
                position_var: sq(sensor.odom_position_std),
                velocity_var: sq(sensor.odom_velocity_std),
                attitude_var: sq(sensor.odom_attitude_std),
                ..Default::default()
            },
            gate: false,
        }
    }

    pub fn validate(&self) -> Result<(), EkfError> {
        self.noise.validate()?;
        let i = &self.init;
        let o = &self.odometry;
        let positive = [
            i.position_var,
            i.velocity_var,
            i.attitude_var,
            i.accel_bias_var,
            i.gyro_bias_var,
            i.wind_var,
            i.wind_var_with_map,
            o.rate_hz,
            o.position_var,
            o.velocity_var,
            o.attitude_var,
        ];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(EkfError::InvalidConfig("initial variances, odometry variances and rate must be positive".into()))
        }
    }
}

/// Optional artifacts a replay may need.
#[derive(Clone, Copy, Debug, Default)]
pub struct FilterInputs<'a> {
    /// Airflow estimates in log order, tagged with their row.
    pub airflow: Option<&'a [AirflowMeasurement]>,
    pub map: Option<&'a WindMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    pub attitude: Rotation,
    pub ba: Vec3,
    pub bg: Vec3,
    pub ew: Vec3,
    pub cov_diag: [f64; STATE_DIM],
}

impl EstimateRow {
    fn from_state(s: &FilterState) -> Self {
        Self {
            t: s.t,
            p: s.p,
            v: s.v,
            attitude: Rotation::from_matrix_projected(&s.attitude()),
            ba: s.ba,
            bg: s.bg,
            ew: s.ew,
            cov_diag: std::array::from_fn(|i| s.cov[(i, i)]),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub applied: usize,
    pub gated: usize,
    pub singular: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    pub airflow: UpdateCounts,
    pub odometry: UpdateCounts,
    /// Mean NIS of the applied airflow updates.
    pub airflow_mean_nis: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FilterOutput {
    pub mode: FilterMode,
    pub rows: Vec<EstimateRow>,
    pub updates: Vec<UpdateInfo>,
    pub diagnostics: FilterDiagnostics,
    pub final_state: FilterState,
}

pub const STATE_LABELS: [&str; STATE_DIM] = [
    "px", "py", "pz", "vx", "vy", "vz", "phix", "phiy", "phiz", "bax", "bay", "baz", "bgx", "bgy", "bgz", "ewx",
    "ewy", "ewz",
];

impl FilterOutput {
    pub fn positions(&self) -> Vec<Vec3> {
        self.rows.iter().map(|r| r.p).collect()
    }

    pub fn attitudes(&self) -> Vec<Rotation> {
        self.rows.iter().map(|r| r.attitude).collect()
    }

    /// Estimated trajectory CSV: time, position, velocity, yaw/pitch/roll,
    /// biases, wind error and the covariance diagonal.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> =
            ["t", "px", "py", "pz", "vx", "vy", "vz", "yaw", "pitch", "roll", "bax", "bay", "baz", "bgx", "bgy", "bgz", "ewx", "ewy", "ewz"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        header.extend(STATE_LABELS.iter().map(|s| format!("var_{s}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let ypr = r.attitude.ypr();
            let mut rec = vec![r.t];
            for v in [r.p, r.v, ypr, r.ba, r.bg, r.ew] {
                rec.extend(v.iter());
            }
            rec.extend(r.cov_diag.iter());
            w.write_record(rec.iter().map(|v| crate::sim::log::fmt_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn initial_state(row: &LogRow, cfg: &FilterConfig, with_map: bool) -> Result<FilterState, EkfError> {
    let (p, v, r) = if cfg.init.from_truth {
        (row.truth.position, row.truth.velocity, row.truth.attitude)
    } else {
        let o = row.odom.as_ref().ok_or(EkfError::NoInitialOdometry)?;
        (o.position, o.velocity, o.attitude)
    };
    let i = &cfg.init;
    let wind_var = if with_map { i.wind_var_with_map } else { i.wind_var };
    let diag = [i.position_var, i.velocity_var, i.attitude_var, i.accel_bias_var, i.gyro_bias_var, wind_var];
    let mut cov = StateMatrix::zeros();
    for (b, var) in diag.iter().enumerate() {
        for k in 0..3 {
            cov[(3 * b + k, 3 * b + k)] = *var;
        }
    }
    Ok(FilterState {
        t: row.t,
        p,
        v,
        r_ref: r,
        phi: Vec3::zeros(),
        ba: Vec3::zeros(),
        bg: Vec3::zeros(),
        ew: Vec3::zeros(),
        cov,
    })
}

fn odom_measurement(row: &LogRow, cfg: &OdomPolicy) -> Option<OdomMeasurement> {
    let o = row.odom.as_ref()?;
    let blocked = Mat3::from_element(f64::INFINITY);
    let iso = |v: f64| Mat3::identity() * v;
    Some(OdomMeasurement {
        t: row.t,
        position: o.position,
        velocity: o.velocity,
        attitude: o.attitude,
        position_cov: iso(cfg.position_var),
        velocity_cov: if cfg.use_velocity { iso(cfg.velocity_var) } else { blocked },
        attitude_cov: if cfg.use_attitude { iso(cfg.attitude_var) } else { blocked },
    })
}

fn count(c: &mut UpdateCounts, o: UpdateOutcome) {
    match o {
        UpdateOutcome::Applied => c.applied += 1,
        UpdateOutcome::Gated => c.gated += 1,
        UpdateOutcome::Singular => c.singular += 1,
    }
}

/// Replays a sensor log: IMU prediction at the log rate, airflow updates
/// whenever an estimate is tagged with the current row, and odometry
/// updates at the configured rate while odometry is present.
pub fn run_filter(
    log: &SensorLog,
    cfg: &FilterConfig,
    mode: FilterMode,
    inputs: FilterInputs<'_>,
) -> Result<FilterOutput, EkfError> {
    cfg.validate()?;
    if log.rows.is_empty() {
        return Err(EkfError::EmptyLog);
    }
    let airflow = if mode.uses_airflow() {
        Some(inputs.airflow.ok_or(EkfError::MissingArtifact { mode, artifact: "airflow estimates" })?)
    } else {
        None
    };
    let map = if mode == FilterMode::AioWithMap {
        Some(inputs.map.ok_or(EkfError::MissingArtifact { mode, artifact: "wind map" })?)
    } else {
        None
    };
    let mut noise = cfg.noise.clone();
    if map.is_some() {
        noise.wind = Mat3::zeros();
    }
    let odom_every = ((log.meta.rate_hz / cfg.odometry.rate_hz).round() as usize).max(1);

    let mut state = initial_state(&log.rows[0], cfg, map.is_some())?;
    let mut rows = Vec::with_capacity(log.rows.len());
    rows.push(EstimateRow::from_state(&state));
    let mut updates = Vec::new();
    let mut diag = FilterDiagnostics::default();
    let mut nis_sum = 0.0;
    let mut cursor = 0;
    let meas = airflow.unwrap_or(&[]);
    while cursor < meas.len() && meas[cursor].row == 0 {
        cursor += 1;
    }

    for i in 1..log.rows.len() {
        let prev = &log.rows[i - 1];
        let row = &log.rows[i];
        state = predict(&state, &prev.accel, &prev.gyro, row.t - prev.t, &noise).map_err(|e| EkfError::AtRow {
            row: i,
            source: Box::new(e),
        })?;
        state.t = row.t;
        while cursor < meas.len() && meas[cursor].row <= i {
            if meas[cursor].row == i {
                let (next, info) = update_airflow(&state, &meas[cursor], map, cfg.gate);
                count(&mut diag.airflow, info.outcome);
                if info.outcome == UpdateOutcome::Applied {
                    nis_sum += info.nis.unwrap_or(0.0);
                }
                updates.push(info);
                state = next;
            }
            cursor += 1;
        }
        if i % odom_every == 0 {
            if let Some(m) = odom_measurement(row, &cfg.odometry) {
                let (next, info) = update_odometry(&state, &m, cfg.gate)?;
                count(&mut diag.odometry, info.outcome);
                updates.push(info);
                state = next;
            }
        }
        rows.push(EstimateRow::from_state(&state));
    }
    if diag.airflow.applied > 0 {
        diag.airflow_mean_nis = Some(nis_sum / diag.airflow.applied as f64);
    }
    Ok(FilterOutput { mode, rows, updates, diagnostics: diag, final_state: state })
}
