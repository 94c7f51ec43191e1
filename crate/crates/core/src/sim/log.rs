//! The sensor log and its CSV representation.
//!
//! The CSV starts with a `#` comment line carrying the format version and the
//! log metadata, followed by a header row and one row per timestep. Floats are
//! written with 17 significant digits so a log reads back bit-identically.
//! Odometry columns are empty when odometry is unavailable.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::sensors::{THROTTLE_CHANNELS, WHISKER_COUNT};
use super::SimError;
use crate::geom::{Mat3, Rotation, Vec3};

pub const SENSOR_LOG_FORMAT: &str = "aio-sensorlog v1";

#[derive(Clone, Debug, PartialEq)]
pub struct LogMeta {
    pub rate_hz: f64,
    /// Every n-th row is an airflow-sensor sample.
    pub airflow_decimation: usize,
    pub failure_time: Option<f64>,
    pub failure_beyond_duration: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Odometry {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Rotation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRow {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Rotation,
    /// Total wind at the vehicle, turbulence included.
    pub wind: Vec3,
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub accel: Vec3,
    pub gyro: Vec3,
    pub whisker: [f64; 2 * WHISKER_COUNT],
    pub throttle: [f64; THROTTLE_CHANNELS],
    pub odom: Option<Odometry>,
    pub truth: TruthRow,
}

impl TruthRow {
    /// Body-frame relative airflow.
    pub fn relative_airflow(&self) -> Vec3 {
        self.attitude.matrix().transpose() * (self.wind - self.velocity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorLog {
    pub meta: LogMeta,
    pub rows: Vec<LogRow>,
}

impl SensorLog {
    pub fn duration(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.t - a.t + 1.0 / self.meta.rate_hz,
            _ => 0.0,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.meta.rate_hz
    }

    /// Marks odometry unavailable from `t` on.
    pub fn apply_failure(&mut self, t: f64) {
        let end = self.rows.last().map_or(0.0, |r| r.t);
        if t > end {
            self.meta.failure_time = None;
            self.meta.failure_beyond_duration = true;
            return;
        }
        self.meta.failure_time = Some(t);
        self.meta.failure_beyond_duration = false;
        for row in self.rows.iter_mut().filter(|r| r.t >= t) {
            row.odom = None;
        }
    }

    pub fn with_failure_at(&self, t: f64) -> SensorLog {
        let mut out = self.clone();
        out.apply_failure(t);
        out
    }

    /// Index of the first row without odometry.
    pub fn failure_index(&self) -> Option<usize> {
        self.rows.iter().position(|r| r.odom.is_none())
    }

    pub fn check(&self) -> Result<(), SimError> {
        if self.rows.len() < 2 {
            return Err(SimError::MalformedLog("log has fewer than two rows".into()));
        }
        let dt = self.dt();
        for (i, w) in self.rows.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) || (step - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(SimError::MalformedLog(format!(
                    "row {}: timestep {step} does not match rate {}",
                    i + 1,
                    self.meta.rate_hz
                )));
            }
            if w[1].odom.is_some() && w[0].odom.is_none() {
                return Err(SimError::MalformedLog(format!(
                    "row {}: odometry returns after a failure",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

fn header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let xyz = |prefix: &str, h: &mut Vec<String>| {
        for a in ["x", "y", "z"] {
            h.push(format!("{prefix}_{a}"));
        }
    };
    let mat = |prefix: &str, h: &mut Vec<String>| {
        for i in 0..3 {
            for j in 0..3 {
                h.push(format!("{prefix}_{i}{j}"));
            }
        }
    };
    xyz("acc", &mut h);
    xyz("gyro", &mut h);
    for i in 1..=WHISKER_COUNT {
        h.push(format!("whisker{i}_x"));
        h.push(format!("whisker{i}_y"));
    }
    for i in 1..=THROTTLE_CHANNELS {
        h.push(format!("throttle{i}"));
    }
    h.push("odom_available".into());
    xyz("odom_p", &mut h);
    xyz("odom_v", &mut h);
    mat("odom_R", &mut h);
    xyz("gt_p", &mut h);
    xyz("gt_v", &mut h);
    mat("gt_R", &mut h);
    xyz("gt_wind", &mut h);
    xyz("gt_ba", &mut h);
    xyz("gt_bg", &mut h);
    h
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_vec(out: &mut Vec<String>, v: &Vec3) {
    out.extend(v.iter().map(|x| fmt_f64(*x)));
}

fn push_mat(out: &mut Vec<String>, m: &Mat3) {
    for i in 0..3 {
        for j in 0..3 {
            out.push(fmt_f64(m[(i, j)]));
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), fmt_f64)
}

impl SensorLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        writeln!(
            w,
            "# {SENSOR_LOG_FORMAT} rate_hz={} airflow_decimation={} failure_time={} failure_beyond_duration={}",
            fmt_f64(self.meta.rate_hz),
            self.meta.airflow_decimation,
            fmt_opt(self.meta.failure_time),
            self.meta.failure_beyond_duration as u8
        )?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header())?;
        let mut rec = Vec::with_capacity(80);
        for row in &self.rows {
            rec.clear();
            rec.push(fmt_f64(row.t));
            push_vec(&mut rec, &row.accel);
            push_vec(&mut rec, &row.gyro);
            rec.extend(row.whisker.iter().map(|x| fmt_f64(*x)));
            rec.extend(row.throttle.iter().map(|x| fmt_f64(*x)));
            match &row.odom {
                Some(o) => {
                    rec.push("1".into());
                    push_vec(&mut rec, &o.position);
                    push_vec(&mut rec, &o.velocity);
                    push_mat(&mut rec, o.attitude.matrix());
                }
                None => {
                    rec.push("0".into());
                    rec.extend(std::iter::repeat_n(String::new(), 15));
                }
            }
            let t = &row.truth;
            push_vec(&mut rec, &t.position);
            push_vec(&mut rec, &t.velocity);
            push_mat(&mut rec, t.attitude.matrix());
            push_vec(&mut rec, &t.wind);
            push_vec(&mut rec, &t.accel_bias);
            push_vec(&mut rec, &t.gyro_bias);
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<SensorLog, SimError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<SensorLog, SimError> {
        let mut reader = BufReader::new(r);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let meta = parse_meta(first.trim())?;
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let expected = header();
        let got: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if got != expected {
            return Err(SimError::MalformedLog("unexpected CSV header".into()));
        }
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let mut fields = rec.iter();
            let mut next = || -> Result<f64, SimError> {
                let s = fields
                    .next()
                    .ok_or_else(|| SimError::MalformedLog(format!("row {line}: too few columns")))?;
                s.parse::<f64>()
                    .map_err(|_| SimError::MalformedLog(format!("row {line}: bad number {s:?}")))
            };
            let t = next()?;
            let accel = Vec3::new(next()?, next()?, next()?);
            let gyro = Vec3::new(next()?, next()?, next()?);
            let mut whisker = [0.0; 2 * WHISKER_COUNT];
            for w in whisker.iter_mut() {
                *w = next()?;
            }
            let mut throttle = [0.0; THROTTLE_CHANNELS];
            for u in throttle.iter_mut() {
                *u = next()?;
            }
            let available = next()? != 0.0;
            let odom = if available {
                let position = Vec3::new(next()?, next()?, next()?);
                let velocity = Vec3::new(next()?, next()?, next()?);
                let attitude = read_rotation(&mut next, line)?;
                Some(Odometry { position, velocity, attitude })
            } else {
                for _ in 0..15 {
                    // Empty cells; `next` would fail to parse them.
                    let _ = next();
                }
                None
            };
            let position = Vec3::new(next()?, next()?, next()?);
            let velocity = Vec3::new(next()?, next()?, next()?);
            let attitude = read_rotation(&mut next, line)?;
            let wind = Vec3::new(next()?, next()?, next()?);
            let accel_bias = Vec3::new(next()?, next()?, next()?);
            let gyro_bias = Vec3::new(next()?, next()?, next()?);
            rows.push(LogRow {
                t,
                accel,
                gyro,
                whisker,
                throttle,
                odom,
                truth: TruthRow { position, velocity, attitude, wind, accel_bias, gyro_bias },
            });
        }
        let log = SensorLog { meta, rows };
        log.check()?;
        Ok(log)
    }
}

fn read_rotation(
    next: &mut impl FnMut() -> Result<f64, SimError>,
    line: usize,
) -> Result<Rotation, SimError> {
    let mut m = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = next()?;
        }
    }
    Rotation::try_from(m).map_err(|e| SimError::MalformedLog(format!("row {line}: {e}")))
}

fn parse_meta(line: &str) -> Result<LogMeta, SimError> {
    let rest = line
        .strip_prefix("# ")
        .and_then(|l| l.strip_prefix(SENSOR_LOG_FORMAT))
        .ok_or_else(|| SimError::MalformedLog(format!("missing '{SENSOR_LOG_FORMAT}' header line")))?;
    let mut meta = LogMeta {
        rate_hz: 0.0,
        airflow_decimation: 0,
        failure_time: None,
        failure_beyond_duration: false,
    };
    let bad = |k: &str| SimError::MalformedLog(format!("bad metadata field {k}"));
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(kv))?;
        match k {
            "rate_hz" => meta.rate_hz = v.parse().map_err(|_| bad(k))?,
            "airflow_decimation" => meta.airflow_decimation = v.parse().map_err(|_| bad(k))?,
            "failure_time" if v == "none" => meta.failure_time = None,
            "failure_time" => meta.failure_time = Some(v.parse().map_err(|_| bad(k))?),
            "failure_beyond_duration" => meta.failure_beyond_duration = v == "1",
            _ => {}
        }
    }
    if !(meta.rate_hz > 0.0) || meta.airflow_decimation == 0 {
        return Err(SimError::MalformedLog("metadata lacks rate or decimation".into()));
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        generate_trajectory, synthesize_sensors, Shape, TrajectorySpec, WhiskerModel, WindFieldSpec,
        YawProfile,
    };

    #[test]
    fn csv_roundtrip_is_exact() {
        let truth = generate_trajectory(&TrajectorySpec {
            duration: 1.0,
            rate_hz: 200.0,
            shape: Shape::Circle { center: [0.0, 0.0, 1.0], radius: 1.0, period: 4.0 },
            peak_speed: 2.5,
            yaw: YawProfile::Tracking,
        })
        .unwrap();
        let mut noise = crate::sim::SensorNoiseSpec::noiseless();
        noise.accel_noise_density = 0.01;
        noise.odom_attitude_std = 0.01;
        let log = synthesize_sensors(
            &truth,
            &WindFieldSpec::calm(),
            &noise,
            &WhiskerModel::default(),
            Some(0.6),
            5,
        )
        .unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# aio-sensorlog v1"));
        assert_eq!(text.lines().count(), 2 + 200);
        let back = SensorLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.meta, log.meta);
        for (a, b) in back.rows.iter().zip(&log.rows) {
            assert_eq!(a.accel, b.accel);
            assert_eq!(a.whisker, b.whisker);
            assert_eq!(a.odom.is_some(), b.odom.is_some());
            assert!((a.truth.attitude.matrix() - b.truth.attitude.matrix()).norm() < 1e-15);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(SensorLog::read_csv("t,acc_x\n1,2\n".as_bytes()).is_err());
    }
}
