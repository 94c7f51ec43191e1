//! Pipeline stages backed by files in the output directory.
//!
//! Every stage reads its inputs from earlier stages' artifacts, writes its own
//! artifacts and finishes by writing `manifests/<stage>.json`, which records the
//! resolved configuration, the seed and the produced files. A stage refuses to
//! run when a manifest it depends on is missing.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use aio_core::airflow::{estimate_airflow, LstmRegressor, MODEL_FORMAT};
use aio_core::ekf::{run_filter, FilterInputs};
use aio_core::eval::pipeline::{
    estimate_wind, evaluate, fit_map, predict_airflow, simulate_evaluation, simulate_mapping, simulate_training,
    train_airflow, PipelineError,
};
use aio_core::eval::{presets, PipelineConfig};
use aio_core::geom::Vec3;
use aio_core::sim::{SensorLog, SENSOR_LOG_FORMAT};
use aio_core::windmap::{WindDataset, WindMap, WINDMAP_FORMAT};
use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FORMAT: &str = "aio-manifest v1";

/// Exit status 2 for invalid input, 3 for failures while running.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn validation(e: impl Into<anyhow::Error>) -> Self {
        Failure::Validation(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(e.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) | PipelineError::OdometryGap { .. } => Failure::validation(e),
            other => Failure::runtime(other),
        }
    }
}

trait OrRuntime<T> {
    fn io(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> OrRuntime<T> for Result<T, E> {
    fn io(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.with_context(what).map_err(Failure::Runtime)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Simulate,
    TrainAirflow,
    EstimateWind,
    FitMap,
    RunFilter,
    Evaluate,
}

impl Stage {
    pub const ORDER: [Stage; 6] =
        [Stage::Simulate, Stage::TrainAirflow, Stage::EstimateWind, Stage::FitMap, Stage::RunFilter, Stage::Evaluate];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::TrainAirflow => "train-airflow",
            Stage::EstimateWind => "estimate-wind",
            Stage::FitMap => "fit-map",
            Stage::RunFilter => "run-filter",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose artifacts this stage reads under `cfg`.
    fn dependencies(&self, cfg: &PipelineConfig) -> Vec<Stage> {
        let mut deps = match self {
            Stage::Simulate => vec![],
            Stage::TrainAirflow => vec![Stage::Simulate],
            Stage::EstimateWind => vec![Stage::Simulate, Stage::TrainAirflow],
            Stage::FitMap => vec![Stage::EstimateWind],
            Stage::RunFilter | Stage::Evaluate => {
                let mut d = vec![Stage::Simulate];
                if cfg.needs_airflow() {
                    d.push(Stage::TrainAirflow);
                }
                if cfg.needs_map() {
                    d.push(Stage::FitMap);
                }
                d
            }
        };
        if *self == Stage::Evaluate {
            deps.push(Stage::RunFilter);
        }
        deps
    }

    /// Whether `run` without `--stage` executes this stage.
    fn needed(&self, cfg: &PipelineConfig) -> bool {
        match self {
            Stage::TrainAirflow => cfg.needs_airflow(),
            Stage::EstimateWind | Stage::FitMap => cfg.needs_map(),
            _ => true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub format: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stage: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: Vec<String>,
    pub outputs: Vec<Artifact>,
    #[serde(default)]
    pub details: serde_json::Value,
}

pub fn load_config(path: Option<&Path>, preset: Option<&str>, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    let mut cfg = match (path, preset) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).io(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<PipelineConfig>(&text)
                .with_context(|| format!("config {} does not match the pipeline schema", p.display()))
                .map_err(Failure::Validation)?
        }
        (None, Some(name)) => presets::preset(name).ok_or_else(|| {
            Failure::validation(anyhow!("unknown preset {name:?}; available: {}", presets::PRESETS.join(", ")))
        })?,
        (None, None) => presets::zero_wind(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::validation(anyhow!(e).context("invalid configuration")))?;
    Ok(cfg)
}

fn manifest_path(out: &Path, stage: Stage) -> PathBuf {
    out.join("manifests").join(format!("{}.json", stage.name()))
}

fn read_manifest(out: &Path, stage: Stage, needed_by: Stage) -> Result<Manifest, Failure> {
    let path = manifest_path(out, stage);
    if !path.exists() {
        return Err(Failure::validation(anyhow!(
            "stage {} needs the output of stage {}, but {} does not exist; run `aio {}` first",
            needed_by.name(),
            stage.name(),
            path.display(),
            stage.name()
        )));
    }
    let text = fs::read_to_string(&path).io(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).io(|| format!("parsing {}", path.display()))
}

fn check_dependencies(stage: Stage, cfg: &PipelineConfig, out: &Path) -> Result<Vec<Manifest>, Failure> {
    let resolved = cfg.resolved();
    let mut manifests = Vec::new();
    for dep in stage.dependencies(cfg) {
        let m = read_manifest(out, dep, stage)?;
        if m.config != resolved {
            log::warn!("{} was produced with a different configuration or seed", manifest_path(out, dep).display());
        }
        manifests.push(m);
    }
    Ok(manifests)
}

fn outputs_of<'a>(manifests: &'a [Manifest], stage: Stage) -> impl Iterator<Item = &'a Artifact> {
    manifests.iter().filter(move |m| m.stage == stage.name()).flat_map(|m| m.outputs.iter())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).io(|| format!("creating {}", dir.display()))
}

struct Writer<'a> {
    out: &'a Path,
    outputs: Vec<Artifact>,
}

impl<'a> Writer<'a> {
    fn new(out: &'a Path) -> Self {
        Self { out, outputs: Vec::new() }
    }

    fn file(&mut self, rel: &str, format: &str) -> Result<BufWriter<fs::File>, Failure> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        self.outputs.push(Artifact { path: rel.to_string(), format: format.to_string() });
        let f = fs::File::create(&path).io(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn text(&mut self, rel: &str, format: &str, body: &str) -> Result<(), Failure> {
        use std::io::Write;
        let mut f = self.file(rel, format)?;
        f.write_all(body.as_bytes()).io(|| format!("writing {rel}"))?;
        f.flush().io(|| format!("writing {rel}"))
    }

    fn finish(
        self,
        stage: Stage,
        cfg: &PipelineConfig,
        inputs: Vec<String>,
        details: serde_json::Value,
    ) -> Result<(), Failure> {
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            stage: stage.name().into(),
            seed: cfg.seed,
            config: cfg.resolved(),
            inputs,
            outputs: self.outputs,
            details,
        };
        let path = manifest_path(self.out, stage);
        create_dir(path.parent().expect("manifest dir"))?;
        let text = serde_json::to_string_pretty(&manifest).map_err(Failure::runtime)?;
        fs::write(&path, text + "\n").io(|| format!("writing {}", path.display()))
    }
}

fn load_logs(out: &Path, artifacts: &[&Artifact]) -> Result<Vec<SensorLog>, Failure> {
    artifacts
        .iter()
        .map(|a| SensorLog::load(&out.join(&a.path)).io(|| format!("loading sensor log {}", a.path)))
        .collect()
}

fn logs_with_prefix<'a>(manifests: &'a [Manifest], prefix: &str) -> Vec<&'a Artifact> {
    outputs_of(manifests, Stage::Simulate).filter(|a| a.path.starts_with(prefix)).collect()
}

fn load_model(out: &Path, manifests: &[Manifest]) -> Result<LstmRegressor, Failure> {
    let a = outputs_of(manifests, Stage::TrainAirflow).next().ok_or_else(|| Failure::runtime(anyhow!("train-airflow manifest lists no model")))?;
    LstmRegressor::load(&out.join(&a.path)).io(|| format!("loading model {}", a.path))
}

fn load_map(out: &Path, manifests: &[Manifest]) -> Result<WindMap, Failure> {
    let a = outputs_of(manifests, Stage::FitMap)
        .find(|a| a.format == WINDMAP_FORMAT)
        .ok_or_else(|| Failure::runtime(anyhow!("fit-map manifest lists no map")))?;
    WindMap::load(&out.join(&a.path)).io(|| format!("loading map {}", a.path))
}

fn input_paths(manifests: &[Manifest]) -> Vec<String> {
    manifests.iter().flat_map(|m| m.outputs.iter().map(|a| a.path.clone())).collect()
}

const ESTIMATES_FORMAT: &str = "aio-wind-estimates v1 (t,px,py,pz,wx,wy,wz)";
const GRID_FORMAT: &str = "aio-wind-grid v1 (x,y,z,wx,wy,wz,var_x,var_y,var_z)";
const TRAJECTORY_FORMAT: &str = "aio-trajectory v1";
const RESULTS_FORMAT: &str = "aio-results v1 (run,mode,failure_t,rmse,rmse_yaw,dr,rte_2s)";
const JSON_FORMAT: &str = "json";

/// Points per axis of the exported map grid.
const GRID_POINTS: [usize; 3] = [15, 15, 5];

fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let mut w = Writer::new(out);
    let mut rows = Vec::new();
    for (i, log) in simulate_training(cfg)?.iter().enumerate() {
        log.write_csv(w.file(&format!("logs/training_{i}.csv"), SENSOR_LOG_FORMAT)?).map_err(Failure::runtime)?;
        rows.push(log.rows.len());
    }
    if let Some(log) = simulate_mapping(cfg)? {
        log.write_csv(w.file("logs/mapping.csv", SENSOR_LOG_FORMAT)?).map_err(Failure::runtime)?;
        rows.push(log.rows.len());
    }
    for (i, log) in simulate_evaluation(cfg)?.iter().enumerate() {
        log.write_csv(w.file(&format!("logs/evaluation_{i}.csv"), SENSOR_LOG_FORMAT)?).map_err(Failure::runtime)?;
        rows.push(log.rows.len());
    }
    w.finish(Stage::Simulate, cfg, vec![], serde_json::json!({ "rows": rows }))
}

fn train(cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let deps = check_dependencies(Stage::TrainAirflow, cfg, out)?;
    let logs = load_logs(out, &logs_with_prefix(&deps, "logs/training_"))?;
    let trained = train_airflow(cfg, &logs)?;
    let mut w = Writer::new(out);
    let json = trained.model.to_json().map_err(Failure::runtime)?;
    w.text("model/airflow.json", MODEL_FORMAT, &json)?;
    let cov = trained.model.measurement_cov();
    let details = serde_json::json!({
        "best_epoch": trained.best_epoch,
        "best_validation_mse": trained.best_validation_loss(),
        "measurement_cov": (0..3).map(|r| (0..3).map(|c| cov[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "history": trained.history,
    });
    w.finish(Stage::TrainAirflow, cfg, input_paths(&deps), details)
}

fn wind(cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let deps = check_dependencies(Stage::EstimateWind, cfg, out)?;
    let mapping = logs_with_prefix(&deps, "logs/mapping");
    if mapping.is_empty() {
        return Err(Failure::validation(anyhow!("the configuration has no mapping flight")));
    }
    let log = load_logs(out, &mapping)?.remove(0);
    let model = load_model(out, &deps)?;
    let ds = estimate_wind(cfg, &model, &log)?;
    let mut w = Writer::new(out);
    ds.write_csv(w.file("wind/estimates.csv", ESTIMATES_FORMAT)?).map_err(Failure::runtime)?;
    w.finish(Stage::EstimateWind, cfg, input_paths(&deps), serde_json::json!({ "samples": ds.len() }))
}

fn map(cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let deps = check_dependencies(Stage::FitMap, cfg, out)?;
    let a = outputs_of(&deps, Stage::EstimateWind).next().ok_or_else(|| Failure::runtime(anyhow!("no wind estimates")))?;
    let f = fs::File::open(out.join(&a.path)).io(|| format!("opening {}", a.path))?;
    let ds = WindDataset::read_csv(f, None).map_err(Failure::runtime)?;
    let map = fit_map(cfg, &ds)?;
    let mut w = Writer::new(out);
    w.text("map/windmap.json", WINDMAP_FORMAT, &map.to_json().map_err(Failure::runtime)?)?;
    let lo = ds.positions.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = ds.positions.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let grid = map.query_grid(lo, hi, GRID_POINTS);
    WindMap::write_grid_csv(&grid, w.file("map/grid.csv", GRID_FORMAT)?).map_err(Failure::runtime)?;
    let details = serde_json::json!({
        "mode": map.mode,
        "inducing": map.inducing_count(),
        "axes": map.reports,
    });
    w.finish(Stage::FitMap, cfg, input_paths(&deps), details)
}

/// Replays every mode on every evaluation flight with odometry lost at the
/// first repetition's failure time.
fn filter(cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let deps = check_dependencies(Stage::RunFilter, cfg, out)?;
    let logs = load_logs(out, &logs_with_prefix(&deps, "logs/evaluation_"))?;
    let model = if cfg.needs_airflow() { Some(load_model(out, &deps)?) } else { None };
    let map = if cfg.needs_map() { Some(load_map(out, &deps)?) } else { None };
    let failure_t = cfg.resolved().experiment.failure_times()[0];
    let mut w = Writer::new(out);
    let mut diagnostics = Vec::new();
    for (i, log) in logs.iter().enumerate() {
        let log = log.with_failure_at(failure_t);
        let airflow = model.as_ref().map(|m| estimate_airflow(m, &log));
        for mode in &cfg.experiment.modes {
            let inputs = FilterInputs { airflow: airflow.as_deref(), map: map.as_ref() };
            let est = run_filter(&log, &cfg.filter, *mode, inputs).map_err(Failure::runtime)?;
            let rel = format!("filter/evaluation_{i}_{mode}.csv");
            est.write_csv(w.file(&rel, TRAJECTORY_FORMAT)?).map_err(Failure::runtime)?;
            diagnostics.push(serde_json::json!({ "flight": i, "mode": mode, "diagnostics": est.diagnostics }));
        }
    }
    let details = serde_json::json!({ "failure_t": failure_t, "runs": diagnostics });
    w.finish(Stage::RunFilter, cfg, input_paths(&deps), details)
}

fn score(cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    let deps = check_dependencies(Stage::Evaluate, cfg, out)?;
    let logs = load_logs(out, &logs_with_prefix(&deps, "logs/evaluation_"))?;
    let airflow = if cfg.needs_airflow() { Some(predict_airflow(&load_model(out, &deps)?, &logs)) } else { None };
    let map = if cfg.needs_map() { Some(load_map(out, &deps)?) } else { None };
    let result = evaluate(cfg, &logs, airflow.as_deref(), map.as_ref())?;
    let mut w = Writer::new(out);
    result.write_csv(w.file("results/results.csv", RESULTS_FORMAT)?).map_err(Failure::runtime)?;
    let aggregate = result.aggregate();
    w.text("results/aggregate.json", JSON_FORMAT, &(serde_json::to_string_pretty(&aggregate).map_err(Failure::runtime)? + "\n"))?;
    let plot = serde_json::to_string_pretty(&result.plot_data()).map_err(Failure::runtime)?;
    w.text("results/plot_data.json", JSON_FORMAT, &(plot + "\n"))?;
    for (mode, agg) in &aggregate.modes {
        let med = |k: &str| agg.metrics.get(k).map_or(f64::NAN, |s| s.median);
        log::info!(
            "{mode}: median rmse {:.3} m, rmse-yaw {:.4} rad, dr {:.4}, rte-2s {:.3} m ({} ok, {} failed)",
            med("rmse"),
            med("rmse_yaw"),
            med("dr"),
            med("rte_2s"),
            agg.successes,
            agg.failures
        );
    }
    let input = input_paths(&deps);
    w.finish(Stage::Evaluate, cfg, input, serde_json::to_value(&aggregate).map_err(Failure::runtime)?)
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    log::info!("stage {}", stage.name());
    match stage {
        Stage::Simulate => simulate(cfg, out),
        Stage::TrainAirflow => train(cfg, out),
        Stage::EstimateWind => wind(cfg, out),
        Stage::FitMap => map(cfg, out),
        Stage::RunFilter => filter(cfg, out),
        Stage::Evaluate => score(cfg, out),
    }
}

pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<(), Failure> {
    for stage in Stage::ORDER {
        if stage.needed(cfg) {
            run_stage(stage, cfg, out)?;
        } else {
            log::info!("stage {} not needed by the configured modes, skipped", stage.name());
        }
    }
    Ok(())
}
