//! Failure-injection experiments.
//!
//! Each repetition draws an odometry failure time uniformly from the failure
//! window, replays every mode on the identical log with odometry removed from
//! that instant on, and scores the estimate from the failure to the end of the
//! evaluation horizon.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::EvalError;
use crate::airflow::AirflowMeasurement;
use crate::ekf::{run_filter, FilterConfig, FilterInputs, FilterMode};
use crate::geom::{Rotation, Vec3};
use crate::sim::log::fmt_f64;
use crate::sim::{rng_stream, SensorLog};
use crate::windmap::WindMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub dataset: String,
    pub modes: Vec<FilterMode>,
    pub repetitions: usize,
    pub failure_window_start: f64,
    pub failure_window_width: f64,
    /// End of the scored segment (s). `None` scores to the end of the log.
    pub horizon: Option<f64>,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: "unnamed".into(),
            modes: FilterMode::ALL.to_vec(),
            repetitions: 10,
            failure_window_start: 20.0,
            failure_window_width: 2.0,
            horizon: None,
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidSpec(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("mode list is empty".into());
        }
        if !(self.failure_window_start >= 0.0 && self.failure_window_width >= 0.0) {
            return bad("failure window must have a non-negative start and width".into());
        }
        if let Some(h) = self.horizon {
            if !(h > self.failure_window_start + self.failure_window_width) {
                return bad(format!("horizon {h} s ends before the failure window"));
            }
        }
        Ok(())
    }

    /// Checks that the failure window and horizon fit inside `log`.
    pub fn check_log(&self, log: &SensorLog) -> Result<(), EvalError> {
        let (first, last) = match (log.rows.first(), log.rows.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => return Err(EvalError::Empty),
        };
        let window_end = self.failure_window_start + self.failure_window_width;
        if self.failure_window_start <= first || window_end >= self.end_time(last) {
            return Err(EvalError::InvalidSpec(format!(
                "failure window [{}, {window_end}] s is not inside the scored span ({first}, {}] s",
                self.failure_window_start,
                self.end_time(last)
            )));
        }
        Ok(())
    }

    fn end_time(&self, last: f64) -> f64 {
        self.horizon.map_or(last, |h| h.min(last))
    }

    /// Failure times of all repetitions, reproducible from the seed.
    pub fn failure_times(&self) -> Vec<f64> {
        let mut rng = rng_stream(self.seed, 0xFA11);
        (0..self.repetitions)
            .map(|_| self.failure_window_start + self.failure_window_width * rng.random::<f64>())
            .collect()
    }
}

/// One evaluation flight with the artifacts its modes need.
#[derive(Clone, Copy, Debug)]
pub struct ExperimentInputs<'a> {
    pub log: &'a SensorLog,
    pub airflow: Option<&'a [AirflowMeasurement]>,
    pub map: Option<&'a WindMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub mode: FilterMode,
    pub failure_t: f64,
    /// Metrics, or the reason the run failed.
    pub outcome: Result<Metrics, String>,
}

/// Five-number summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Summary {
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub successes: usize,
    pub failures: usize,
    pub metrics: BTreeMap<String, Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub repetitions: usize,
    pub modes: BTreeMap<String, ModeAggregate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub records: Vec<RunRecord>,
}

impl ExperimentResult {
    /// Metric values of the successful runs of `mode`, in run order.
    pub fn values(&self, mode: FilterMode, metric: &str) -> Vec<f64> {
        let k = Metrics::NAMES.iter().position(|n| *n == metric).expect("known metric name");
        self.records
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.outcome.as_ref().ok().map(|m| m.values()[k]))
            .collect()
    }

    pub fn median(&self, mode: FilterMode, metric: &str) -> Option<f64> {
        Summary::of(&self.values(mode, metric)).map(|s| s.median)
    }

    pub fn aggregate(&self) -> Aggregate {
        let mut modes = BTreeMap::new();
        for mode in &self.spec.modes {
            let ok = self.records.iter().filter(|r| r.mode == *mode && r.outcome.is_ok()).count();
            let total = self.records.iter().filter(|r| r.mode == *mode).count();
            let metrics = Metrics::NAMES
                .iter()
                .filter_map(|n| Summary::of(&self.values(*mode, n)).map(|s| (n.to_string(), s)))
                .collect();
            modes.insert(mode.name().to_string(), ModeAggregate { successes: ok, failures: total - ok, metrics });
        }
        Aggregate { dataset: self.spec.dataset.clone(), repetitions: self.spec.repetitions, modes }
    }

    /// Long-format results: one row per repetition and mode. Metric cells
    /// of failed runs are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["run", "mode", "failure_t", "rmse", "rmse_yaw", "dr", "rte_2s"])?;
        for r in &self.records {
            let mut rec = vec![r.run.to_string(), r.mode.name().to_string(), fmt_f64(r.failure_t)];
            match &r.outcome {
                Ok(m) => rec.extend(m.values().iter().map(|v| fmt_f64(*v))),
                Err(_) => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-metric, per-mode value lists for external box plots.
    pub fn plot_data(&self) -> BTreeMap<String, BTreeMap<String, Vec<f64>>> {
        Metrics::NAMES
            .iter()
            .map(|n| {
                let per_mode = self.spec.modes.iter().map(|m| (m.name().to_string(), self.values(*m, n))).collect();
                (n.to_string(), per_mode)
            })
            .collect()
    }
}

/// Scores an estimated trajectory from row `from` up to the horizon.
pub fn score_segment(
    log: &SensorLog,
    est: &[(Vec3, Rotation)],
    from: usize,
    horizon: Option<f64>,
) -> Result<Metrics, EvalError> {
    if est.len() != log.rows.len() {
        return Err(EvalError::LengthMismatch { est: est.len(), gt: log.rows.len() });
    }
    let end = match horizon {
        Some(h) => log.rows.iter().rposition(|r| r.t <= h + 1e-9).map_or(0, |i| i + 1),
        None => log.rows.len(),
    };
    if from >= end {
        return Err(EvalError::TooShort { len: 0, needed: 2 });
    }
    let span = from..end;
    let ep: Vec<Vec3> = est[span.clone()].iter().map(|e| e.0).collect();
    let ea: Vec<Rotation> = est[span.clone()].iter().map(|e| e.1).collect();
    let gp: Vec<Vec3> = log.rows[span.clone()].iter().map(|r| r.truth.position).collect();
    let ga: Vec<Rotation> = log.rows[span].iter().map(|r| r.truth.attitude).collect();
    compute_metrics(&ep, &ea, &gp, &ga, log.meta.rate_hz)
}

/// Runs the protocol with a caller-supplied estimator. Repetition `r` uses
/// flight `r % inputs.len()`. The estimator sees the log with odometry
/// already removed after the failure and returns one pose per log row.
pub fn run_experiment_with<F>(
    spec: &ExperimentSpec,
    inputs: &[ExperimentInputs<'_>],
    mut estimate: F,
) -> Result<ExperimentResult, EvalError>
where
    F: FnMut(&SensorLog, FilterMode, &ExperimentInputs<'_>) -> Result<Vec<(Vec3, Rotation)>, String>,
{
    spec.validate()?;
    if inputs.is_empty() {
        return Err(EvalError::Empty);
    }
    for i in inputs {
        spec.check_log(i.log)?;
    }
    let mut records = Vec::new();
    for (run, failure_t) in spec.failure_times().into_iter().enumerate() {
        let input = &inputs[run % inputs.len()];
        let log = input.log.with_failure_at(failure_t);
        let from = log.failure_index().unwrap_or(log.rows.len());
        for mode in &spec.modes {
            let outcome = estimate(&log, *mode, input)
                .and_then(|est| score_segment(&log, &est, from, spec.horizon).map_err(|e| e.to_string()));
            if let Err(e) = &outcome {
                log::warn!("run {run}, {mode}: {e}");
            }
            records.push(RunRecord { run, mode: *mode, failure_t, outcome });
        }
    }
    Ok(ExperimentResult { spec: spec.clone(), records })
}

/// Runs the protocol with the filter in every requested mode.
pub fn run_experiment(
    spec: &ExperimentSpec,
    inputs: &[ExperimentInputs<'_>],
    filter: &FilterConfig,
) -> Result<ExperimentResult, EvalError> {
    run_experiment_with(spec, inputs, |log, mode, input| {
        let out = run_filter(log, filter, mode, FilterInputs { airflow: input.airflow, map: input.map })
            .map_err(|e| e.to_string())?;
        Ok(out.rows.iter().map(|r| (r.p, r.attitude)).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(Summary::of(&[7.0]).unwrap().median, 7.0);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn failure_times_stay_in_window() {
        let spec = ExperimentSpec { repetitions: 50, seed: 3, ..Default::default() };
        let t = spec.failure_times();
        assert_eq!(t.len(), 50);
        assert!(t.iter().all(|v| (20.0..22.0).contains(v)));
        assert_eq!(t, spec.failure_times());
    }
}
