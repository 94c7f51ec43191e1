//! End-to-end pipeline: simulate flights, train the airflow regressor,
//! estimate wind along a mapping flight, fit the wind map and run the
//! failure-injection experiment.
//!
//! Every stage draws its randomness from the root seed through a fixed
//! per-stage stream, so a stage's output depends only on the configuration
//! and the seed.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentInputs, ExperimentResult, ExperimentSpec};
use super::EvalError;
use crate::airflow::{estimate_airflow, lstm_train, AirflowError, AirflowMeasurement, LstmRegressor, TrainedModel, TrainingConfig};
use crate::ekf::{run_filter, EkfError, FilterConfig, FilterInputs, FilterMode};
use crate::geom::Mat3;
use crate::optim::LbfgsConfig;
use crate::sim::{rng_stream, simulate_flight, SensorLog, SensorNoiseSpec, SimError, TrajectorySpec, WhiskerModel, WindFieldSpec};
use crate::windmap::{
    fit_exact_optimized, fit_sparse, initial_params, KernelParams, MapMode, SparseConfig, WindDataset, WindMap,
    WindMapError, DEFAULT_SUBSAMPLE_HZ,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("mapping flight has no odometry from t = {t} s; wind estimation needs position throughout")]
    OdometryGap { t: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Airflow(#[from] AirflowError),
    #[error(transparent)]
    Map(#[from] WindMapError),
    #[error(transparent)]
    Ekf(#[from] EkfError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Wind estimation along the mapping flight and the map fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapStageConfig {
    pub mode: MapMode,
    pub subsample_hz: f64,
    /// Estimates before this time are discarded while the wind state settles (s).
    pub burn_in: f64,
    /// Wind random-walk density of the mapping filter (m/s/√s).
    pub estimation_wind_walk: f64,
    /// Initial kernel parameters; derived from the data when absent.
    pub kernel: Option<KernelParams>,
    pub sparse: SparseConfig,
    /// Optimizer for the exact mode.
    pub optimizer: LbfgsConfig,
}

impl Default for MapStageConfig {
    fn default() -> Self {
        Self {
            mode: MapMode::Sparse,
            subsample_hz: DEFAULT_SUBSAMPLE_HZ,
            burn_in: 10.0,
            estimation_wind_walk: 0.3,
            kernel: None,
            sparse: SparseConfig::default(),
            optimizer: LbfgsConfig { max_iters: 100, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub name: String,
    pub seed: u64,
    /// Still-air flights for training the airflow regressor.
    pub training_flights: Vec<TrajectorySpec>,
    /// Flight through the wind field used only for building the map.
    #[serde(default)]
    pub mapping_flight: Option<TrajectorySpec>,
    pub evaluation_flights: Vec<TrajectorySpec>,
    #[serde(default)]
    pub wind: WindFieldSpec,
    pub noise: SensorNoiseSpec,
    #[serde(default)]
    pub whiskers: WhiskerModel,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub windmap: MapStageConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

/// Random streams of the stages.
mod stream {
    pub const TRAINING_FLIGHTS: u64 = 1;
    pub const MAPPING_FLIGHT: u64 = 2;
    pub const EVALUATION_FLIGHTS: u64 = 3;
    pub const TRAINING: u64 = 4;
    pub const MAP: u64 = 5;
    pub const EXPERIMENT: u64 = 6;
}

/// Seed of stage stream `stream` under the root `seed`.
pub fn stage_seed(seed: u64, stream: u64) -> u64 {
    rng_stream(seed, stream).next_u64()
}

fn flight_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut rng = rng_stream(seed, stream);
    for _ in 0..index {
        rng.next_u64();
    }
    rng.next_u64()
}

/// Logs produced by the simulation stage.
#[derive(Clone, Debug)]
pub struct Flights {
    pub training: Vec<SensorLog>,
    pub mapping: Option<SensorLog>,
    pub evaluation: Vec<SensorLog>,
}

impl PipelineConfig {
    /// Copy with every stage seed derived from the root seed.
    pub fn resolved(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.training.seed = stage_seed(self.seed, stream::TRAINING);
        c.windmap.sparse.seed = stage_seed(self.seed, stream::MAP);
        c.experiment.seed = stage_seed(self.seed, stream::EXPERIMENT);
        c.experiment.dataset = self.name.clone();
        c
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.into()));
        if self.training_flights.is_empty() {
            return bad("at least one training flight is required");
        }
        if self.evaluation_flights.is_empty() {
            return bad("at least one evaluation flight is required");
        }
        for t in self.training_flights.iter().chain(&self.evaluation_flights).chain(&self.mapping_flight) {
            t.validate()?;
        }
        self.wind.validate()?;
        self.noise.validate()?;
        self.whiskers.validate()?;
        self.training.validate()?;
        self.filter.validate()?;
        self.experiment.validate()?;
        let m = &self.windmap;
        if !(m.subsample_hz > 0.0 && m.burn_in >= 0.0 && m.estimation_wind_walk > 0.0) {
            return bad("map stage needs a positive subsampling rate and wind walk and a non-negative burn-in");
        }
        if let Some(k) = &m.kernel {
            k.validate()?;
        }
        if self.experiment.modes.contains(&FilterMode::AioWithMap) && self.mapping_flight.is_none() {
            return bad("mode aio-with-map needs a mapping flight");
        }
        Ok(())
    }

    pub fn needs_map(&self) -> bool {
        self.experiment.modes.contains(&FilterMode::AioWithMap)
    }

    pub fn needs_airflow(&self) -> bool {
        self.experiment.modes.iter().any(|m| m.uses_airflow())
    }
}

/// Still-air training flights.
pub fn simulate_training(cfg: &PipelineConfig) -> Result<Vec<SensorLog>, PipelineError> {
    let calm = WindFieldSpec::calm();
    cfg.training_flights
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let seed = flight_seed(cfg.seed, stream::TRAINING_FLIGHTS, i);
            Ok(simulate_flight(t, &calm, &cfg.noise, &cfg.whiskers, None, seed)?)
        })
        .collect()
}

/// Mapping flight through the configured wind field, odometry throughout.
pub fn simulate_mapping(cfg: &PipelineConfig) -> Result<Option<SensorLog>, PipelineError> {
    let Some(t) = &cfg.mapping_flight else { return Ok(None) };
    let seed = stage_seed(cfg.seed, stream::MAPPING_FLIGHT);
    Ok(Some(simulate_flight(t, &cfg.wind, &cfg.noise, &cfg.whiskers, None, seed)?))
}

/// Evaluation flights through the wind field. Failures are injected later
/// by the experiment.
pub fn simulate_evaluation(cfg: &PipelineConfig) -> Result<Vec<SensorLog>, PipelineError> {
    cfg.evaluation_flights
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let seed = flight_seed(cfg.seed, stream::EVALUATION_FLIGHTS, i);
            Ok(simulate_flight(t, &cfg.wind, &cfg.noise, &cfg.whiskers, None, seed)?)
        })
        .collect()
}

pub fn simulate_all(cfg: &PipelineConfig) -> Result<Flights, PipelineError> {
    Ok(Flights {
        training: simulate_training(cfg)?,
        mapping: simulate_mapping(cfg)?,
        evaluation: simulate_evaluation(cfg)?,
    })
}

/// Trains the airflow regressor with the stage seed.
pub fn train_airflow(cfg: &PipelineConfig, training: &[SensorLog]) -> Result<TrainedModel, PipelineError> {
    Ok(lstm_train(training, &cfg.resolved().training)?)
}

/// Wind estimates along a mapping flight: the filter runs without a map and
/// with a positive wind random walk while odometry is fused throughout, and
/// its wind state is sampled at the subsampling rate after the burn-in.
pub fn estimate_wind(
    cfg: &PipelineConfig,
    model: &LstmRegressor,
    log: &SensorLog,
) -> Result<WindDataset, PipelineError> {
    if let Some(i) = log.failure_index() {
        return Err(PipelineError::OdometryGap { t: log.rows[i].t });
    }
    let airflow = estimate_airflow(model, log);
    let mut fc = cfg.filter.clone();
    let q = cfg.windmap.estimation_wind_walk;
    fc.noise.wind = Mat3::identity() * (q * q);
    let out = run_filter(log, &fc, FilterMode::AioNoMap, FilterInputs { airflow: Some(&airflow), map: None })?;
    let kept: Vec<_> = out.rows.iter().filter(|r| r.t >= cfg.windmap.burn_in).collect();
    let times: Vec<f64> = kept.iter().map(|r| r.t).collect();
    let positions: Vec<_> = kept.iter().map(|r| r.p).collect();
    let winds: Vec<_> = kept.iter().map(|r| r.ew).collect();
    Ok(WindDataset::from_estimates(&times, &positions, &winds, Some(cfg.windmap.subsample_hz))?)
}

pub fn fit_map(cfg: &PipelineConfig, data: &WindDataset) -> Result<WindMap, PipelineError> {
    let m = &cfg.resolved().windmap;
    let init = m.kernel.clone().unwrap_or_else(|| initial_params(data));
    let map = match m.mode {
        MapMode::Sparse => {
            let mut sparse = m.sparse.clone();
            sparse.inducing = sparse.inducing.min(data.len());
            fit_sparse(data, &init, &sparse)?
        }
        MapMode::Exact => fit_exact_optimized(data, &init, m.sparse.isotropic, &m.optimizer)?,
    };
    Ok(map)
}

/// Airflow estimates for every evaluation flight.
pub fn predict_airflow(model: &LstmRegressor, logs: &[SensorLog]) -> Vec<Vec<AirflowMeasurement>> {
    logs.iter().map(|l| estimate_airflow(model, l)).collect()
}

/// Runs the experiment over the evaluation flights.
pub fn evaluate(
    cfg: &PipelineConfig,
    logs: &[SensorLog],
    airflow: Option<&[Vec<AirflowMeasurement>]>,
    map: Option<&WindMap>,
) -> Result<ExperimentResult, PipelineError> {
    let spec = cfg.resolved().experiment;
    let inputs: Vec<ExperimentInputs> = logs
        .iter()
        .enumerate()
        .map(|(i, log)| ExperimentInputs { log, airflow: airflow.map(|a| a[i].as_slice()), map })
        .collect();
    Ok(run_experiment(&spec, &inputs, &cfg.filter)?)
}

/// Every artifact of a full run.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub flights: Flights,
    pub model: Option<TrainedModel>,
    pub wind_estimates: Option<WindDataset>,
    pub map: Option<WindMap>,
    pub result: ExperimentResult,
}

/// Runs all stages in memory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let flights = simulate_all(cfg)?;
    let model = if cfg.needs_airflow() { Some(train_airflow(cfg, &flights.training)?) } else { None };
    let (wind_estimates, map) = match (&flights.mapping, &model, cfg.needs_map()) {
        (Some(log), Some(m), true) => {
            let ds = estimate_wind(cfg, &m.model, log)?;
            let map = fit_map(cfg, &ds)?;
            (Some(ds), Some(map))
        }
        _ => (None, None),
    };
    let airflow = model.as_ref().map(|m| predict_airflow(&m.model, &flights.evaluation));
    let result = evaluate(cfg, &flights.evaluation, airflow.as_deref(), map.as_ref())?;
    Ok(PipelineOutput { flights, model, wind_estimates, map, result })
}
