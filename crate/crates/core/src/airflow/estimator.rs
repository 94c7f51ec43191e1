//! Streaming relative-airflow estimates.

use std::collections::VecDeque;

use super::model::{features, LstmRegressor, FEATURES};
use super::network::Workspace;
use crate::geom::{Mat3, Vec3};
use crate::sim::SensorLog;

/// Relative airflow measurement in the body frame with its covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AirflowMeasurement {
    pub t: f64,
    /// Row of the sensor log the measurement belongs to.
    pub row: usize,
    pub airflow: Vec3,
    pub covariance: Mat3,
}

/// Feeds airflow-rate samples through the regressor and emits a prediction
/// from the latest full window every `emit_every` samples (25 Hz from a
/// 50 Hz input with the default of 2).
pub struct AirflowEstimator<'a> {
    model: &'a LstmRegressor,
    buffer: VecDeque<[f64; FEATURES]>,
    window: Vec<[f64; FEATURES]>,
    emit_every: usize,
    since_full: usize,
    ws: Workspace,
    scratch: Vec<f64>,
}

impl<'a> AirflowEstimator<'a> {
    pub fn new(model: &'a LstmRegressor, emit_every: usize) -> Self {
        let len = model.architecture().seq_len;
        Self {
            model,
            buffer: VecDeque::with_capacity(len + 1),
            window: Vec::with_capacity(len),
            emit_every: emit_every.max(1),
            since_full: 0,
            ws: Workspace::new(model.layout()),
            scratch: Vec::new(),
        }
    }

    /// Pushes one sample; returns a prediction when one is due. Nothing is
    /// emitted until the buffer holds a full window.
    pub fn push(&mut self, sample: [f64; FEATURES]) -> Option<Vec3> {
        let len = self.model.architecture().seq_len;
        self.buffer.push_back(sample);
        if self.buffer.len() > len {
            self.buffer.pop_front();
        }
        if self.buffer.len() < len {
            return None;
        }
        let due = self.since_full % self.emit_every == 0;
        self.since_full += 1;
        if !due {
            return None;
        }
        self.window.clear();
        self.window.extend(self.buffer.iter());
        Some(self.model.predict_with(&self.window, &mut self.ws, &mut self.scratch))
    }
}

/// Output rate of [`estimate_airflow`] relative to the airflow sample rate.
pub const EMIT_EVERY: usize = 2;

/// Runs the regressor over a whole log at the airflow rate.
pub fn estimate_airflow(model: &LstmRegressor, log: &SensorLog) -> Vec<AirflowMeasurement> {
    let mut est = AirflowEstimator::new(model, EMIT_EVERY);
    let cov = *model.measurement_cov();
    let mut out = Vec::new();
    for (i, row) in log.rows.iter().enumerate().step_by(log.meta.airflow_decimation) {
        if let Some(v) = est.push(features(row)) {
            out.push(AirflowMeasurement { t: row.t, row: i, airflow: v, covariance: cov });
        }
    }
    out
}
