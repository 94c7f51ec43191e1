//! Stationary wind map built from three independent Gaussian processes, one
//! per world-frame wind component, with a squared-exponential kernel over
//! position.
//!
//! Two fitting modes share one query representation. Per axis the map
//! stores inducing inputs `Z`, weights `w` and a matrix `V`, so that
//!
//! ```text
//! mean(p) = k(p, Z) w
//! var(p)  = σ_f² - k(p, Z) V k(p, Z)ᵀ
//! ```
//!
//! In exact mode `Z` is the training inputs, `w = (K + σ_n² I)⁻¹ y` and
//! `V = (K + σ_n² I)⁻¹`. In sparse mode the variational posterior
//! `q(u) = N(m, S)` over inducing outputs gives `w = Kmm⁻¹ m` and
//! `V = Kmm⁻¹ - Kmm⁻¹ S Kmm⁻¹`.

mod exact;
mod kernel;
mod kmeans;
mod sparse;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Mat3, Vec3};
use crate::optim::{maximize, LbfgsConfig, OptimError};

pub use kernel::KernelParams;
pub use kmeans::kmeans;

/// Relative diagonal jitter (times σ_f²) added before every factorization.
pub const JITTER: f64 = 1e-8;
/// Largest dataset accepted by the dense exact solver.
pub const MAX_EXACT_SAMPLES: usize = 5000;
pub const DEFAULT_INDUCING: usize = 20;
pub const DEFAULT_SUBSAMPLE_HZ: f64 = 1.0;
pub const WINDMAP_FORMAT: &str = "aio-windmap v1";

#[derive(Debug, thiserror::Error)]
pub enum WindMapError {
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("wind dataset is empty")]
    EmptyDataset,
    #[error("wind dataset contains a non-finite value at sample {0}")]
    NonFiniteSample(usize),
    #[error("dataset of {0} samples exceeds the exact-GP limit of {MAX_EXACT_SAMPLES}")]
    TooLarge(usize),
    #[error("{m} inducing points requested but only {k} samples are available")]
    TooManyInducing { m: usize, k: usize },
    #[error("Gram matrix could not be factored even with jitter {0:.3e}")]
    Conditioning(f64),
    #[error("non-finite objective on axis {axis} with parameters {params}")]
    NonFiniteObjective { axis: usize, params: String },
    #[error("malformed wind map: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Position / wind pairs used to fit a map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindDataset {
    pub times: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub winds: Vec<Vec3>,
    /// Rate the samples were thinned to, if any.
    pub subsample_hz: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    wx: f64,
    wy: f64,
    wz: f64,
}

impl WindDataset {
    pub fn new(positions: Vec<Vec3>, winds: Vec<Vec3>) -> Result<Self, WindMapError> {
        let times = (0..positions.len()).map(|i| i as f64).collect();
        let ds = Self { times, positions, winds, subsample_hz: None };
        ds.validate()?;
        Ok(ds)
    }

    /// Thin a time series of wind estimates to at most one sample per
    /// `1/hz` seconds, keeping the first sample of each interval.
    pub fn from_estimates(
        times: &[f64],
        positions: &[Vec3],
        winds: &[Vec3],
        hz: Option<f64>,
    ) -> Result<Self, WindMapError> {
        let mut ds = Self { subsample_hz: hz, ..Default::default() };
        let mut next = f64::NEG_INFINITY;
        for i in 0..times.len().min(positions.len()).min(winds.len()) {
            if let Some(hz) = hz {
                if times[i] + 1e-9 < next {
                    continue;
                }
                next = times[i] + 1.0 / hz;
            }
            ds.times.push(times[i]);
            ds.positions.push(positions[i]);
            ds.winds.push(winds[i]);
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<(), WindMapError> {
        if self.positions.is_empty() {
            return Err(WindMapError::EmptyDataset);
        }
        if self.positions.len() != self.winds.len() {
            return Err(WindMapError::Format("positions and winds differ in length".into()));
        }
        for (i, (p, w)) in self.positions.iter().zip(&self.winds).enumerate() {
            if !p.iter().chain(w.iter()).all(|v| v.is_finite()) {
                return Err(WindMapError::NonFiniteSample(i));
            }
        }
        Ok(())
    }

    fn axis_targets(&self, axis: usize) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.winds.iter().map(|w| w[axis]))
    }

    /// Reads a CSV with columns `t, px, py, pz, wx, wy, wz`.
    pub fn read_csv<R: Read>(reader: R, hz: Option<f64>) -> Result<Self, WindMapError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let (mut t, mut p, mut w) = (Vec::new(), Vec::new(), Vec::new());
        for row in rdr.deserialize() {
            let r: DatasetRow = row?;
            t.push(r.t);
            p.push(Vec3::new(r.px, r.py, r.pz));
            w.push(Vec3::new(r.wx, r.wy, r.wz));
        }
        Self::from_estimates(&t, &p, &w, hz)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), WindMapError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "px", "py", "pz", "wx", "wy", "wz"])?;
        for i in 0..self.len() {
            let (p, w) = (self.positions[i], self.winds[i]);
            let rec = [self.times[i], p.x, p.y, p.z, w.x, w.y, w.z];
            wtr.write_record(rec.iter().map(|v| crate::sim::log::fmt_f64(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Heuristic starting hyperparameters: σ_f² from the mean squared wind
/// (the prior mean is zero), ℓ from the spatial spread, σ_n² a tenth of σ_f².
pub fn initial_params(ds: &WindDataset) -> KernelParams {
    let n = ds.len().max(1) as f64;
    let msq = ds.winds.iter().map(|w| w.norm_squared()).sum::<f64>() / (3.0 * n);
    let sf = msq.max(1e-2);
    let mean = ds.positions.iter().sum::<Vec3>() / n;
    let spread = (ds.positions.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt();
    KernelParams::isotropic(sf, (0.5 * spread).max(0.5), 0.1 * sf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    Exact,
    Sparse,
}

/// One fitted GP in query form.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisModel {
    pub params: KernelParams,
    pub inducing: Vec<Vec3>,
    /// Posterior mean of the inducing outputs.
    pub q_mean: DVector<f64>,
    /// Posterior covariance of the inducing outputs.
    pub q_cov: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl AxisModel {
    fn kvec(&self, p: &Vec3) -> DVector<f64> {
        DVector::from_iterator(self.inducing.len(), self.inducing.iter().map(|z| self.params.eval(p, z)))
    }

    pub fn mean_variance(&self, p: &Vec3) -> (f64, f64) {
        let k = self.kvec(p);
        let mean = k.dot(&self.weights);
        let var = self.params.signal_variance - (&self.precision * &k).dot(&k);
        (mean, var.max(0.0))
    }

    pub fn mean_gradient(&self, p: &Vec3) -> Vec3 {
        self.inducing.iter().zip(self.weights.iter()).map(|(z, w)| self.params.grad_first(p, z) * *w).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    /// Objective value at the start and after each accepted optimizer step.
    pub objective_history: Vec<f64>,
    pub jitter: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindQuery {
    pub mean: Vec3,
    /// Diagonal covariance Σ_M(p).
    pub covariance: Mat3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindMap {
    pub mode: MapMode,
    pub axes: [AxisModel; 3],
    pub reports: [AxisReport; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseConfig {
    pub inducing: usize,
    /// One length scale shared by all three position axes.
    pub isotropic: bool,
    pub optimize_hyperparams: bool,
    pub optimize_inducing: bool,
    pub kmeans_iters: usize,
    pub optimizer: LbfgsConfig,
    pub seed: u64,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            inducing: DEFAULT_INDUCING,
            isotropic: true,
            optimize_hyperparams: true,
            optimize_inducing: true,
            kmeans_iters: 100,
            optimizer: LbfgsConfig { max_iters: 150, ..Default::default() },
            seed: 0,
        }
    }
}

/// Exact GP with fixed hyperparameters.
pub fn fit_exact(ds: &WindDataset, params: &KernelParams) -> Result<WindMap, WindMapError> {
    fit_exact_axes(ds, &[*params; 3], Default::default())
}

fn fit_exact_axes(
    ds: &WindDataset,
    params: &[KernelParams; 3],
    mut reports: [AxisReport; 3],
) -> Result<WindMap, WindMapError> {
    ds.validate()?;
    if ds.len() > MAX_EXACT_SAMPLES {
        return Err(WindMapError::TooLarge(ds.len()));
    }
    let mut axes = Vec::with_capacity(3);
    for (a, p) in params.iter().enumerate() {
        p.validate()?;
        let (model, jitter) = exact::fit_axis(p, &ds.positions, &ds.axis_targets(a))?;
        reports[a].jitter = jitter;
        axes.push(model);
    }
    Ok(WindMap { mode: MapMode::Exact, axes: axes.try_into().unwrap(), reports })
}

/// Exact GP whose hyperparameters maximize the log marginal likelihood,
/// starting from `initial`.
pub fn fit_exact_optimized(
    ds: &WindDataset,
    initial: &KernelParams,
    isotropic: bool,
    optimizer: &LbfgsConfig,
) -> Result<WindMap, WindMapError> {
    ds.validate()?;
    initial.validate()?;
    if ds.len() > MAX_EXACT_SAMPLES {
        return Err(WindMapError::TooLarge(ds.len()));
    }
    let mut params = [*initial; 3];
    let mut reports: [AxisReport; 3] = Default::default();
    for a in 0..3 {
        let y = ds.axis_targets(a);
        let report = maximize(&initial.to_log(isotropic), optimizer, |v| {
            let p = KernelParams::from_log(v, isotropic);
            match exact::log_marginal(&p, isotropic, &ds.positions, &y) {
                Ok(r) => Ok(r),
                Err(WindMapError::Conditioning(_)) => Ok((f64::NAN, vec![f64::NAN; v.len()])),
                Err(e) => Err(e),
            }
        })
        .map_err(|e| optim_error(e, a, initial))?;
        params[a] = KernelParams::from_log(&report.x, isotropic);
        reports[a] = AxisReport {
            objective_history: report.history,
            jitter: 0.0,
            iterations: report.iterations,
            converged: report.converged,
        };
    }
    fit_exact_axes(ds, &params, reports)
}

fn optim_error(e: OptimError<WindMapError>, axis: usize, p: &KernelParams) -> WindMapError {
    match e {
        OptimError::NonFiniteStart(_) => WindMapError::NonFiniteObjective { axis, params: format!("{p:?}") },
        OptimError::Objective(e) => e,
    }
}

/// Sparse variational GP with `cfg.inducing` inducing points initialized by
/// k-means over the training positions.
pub fn fit_sparse(ds: &WindDataset, params: &KernelParams, cfg: &SparseConfig) -> Result<WindMap, WindMapError> {
    ds.validate()?;
    if cfg.inducing == 0 || cfg.inducing > ds.len() {
        return Err(WindMapError::TooManyInducing { m: cfg.inducing, k: ds.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z = kmeans(&ds.positions, cfg.inducing, cfg.kmeans_iters, &mut rng);
    fit_sparse_at(ds, params, &z, cfg)
}

/// Sparse GP starting from the given inducing inputs.
pub fn fit_sparse_at(
    ds: &WindDataset,
    params: &KernelParams,
    inducing: &[Vec3],
    cfg: &SparseConfig,
) -> Result<WindMap, WindMapError> {
    ds.validate()?;
    params.validate()?;
    if inducing.is_empty() || inducing.len() > ds.len() {
        return Err(WindMapError::TooManyInducing { m: inducing.len(), k: ds.len() });
    }
    let iso = cfg.isotropic;
    let nh = KernelParams::log_len(iso);
    let mut axes = Vec::with_capacity(3);
    let mut reports: [AxisReport; 3] = Default::default();
    for (a, report) in reports.iter_mut().enumerate() {
        let y = ds.axis_targets(a);
        let mut p = *params;
        let mut z = inducing.to_vec();
        if cfg.optimize_hyperparams || cfg.optimize_inducing {
            let mut x0 = Vec::new();
            if cfg.optimize_hyperparams {
                x0.extend(params.to_log(iso));
            }
            if cfg.optimize_inducing {
                x0.extend(inducing.iter().flat_map(|v| v.iter().copied()));
            }
            let unpack = |v: &[f64]| -> (KernelParams, Vec<Vec3>) {
                let mut off = 0;
                let p = if cfg.optimize_hyperparams {
                    off = nh;
                    KernelParams::from_log(&v[..nh], iso)
                } else {
                    *params
                };
                let z = if cfg.optimize_inducing {
                    v[off..].chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
                } else {
                    inducing.to_vec()
                };
                (p, z)
            };
            let r = maximize(&x0, &cfg.optimizer, |v| {
                let (p, z) = unpack(v);
                match sparse::elbo(&p, iso, &z, &ds.positions, &y, true) {
                    Ok((val, Some(g))) => {
                        let mut grad = Vec::with_capacity(v.len());
                        if cfg.optimize_hyperparams {
                            grad.extend(g.hyper);
                        }
                        if cfg.optimize_inducing {
                            grad.extend(g.inducing.iter().flat_map(|v| v.iter().copied()));
                        }
                        Ok((val, grad))
                    }
                    Ok((_, None)) => unreachable!(),
                    Err(WindMapError::Conditioning(_)) => Ok((f64::NAN, vec![f64::NAN; v.len()])),
                    Err(e) => Err(e),
                }
            })
            .map_err(|e| optim_error(e, a, params))?;
            (p, z) = unpack(&r.x);
            report.objective_history = r.history;
            report.iterations = r.iterations;
            report.converged = r.converged;
        } else {
            let (val, _) = sparse::elbo(&p, iso, &z, &ds.positions, &y, false)?;
            if !val.is_finite() {
                return Err(WindMapError::NonFiniteObjective { axis: a, params: format!("{p:?}") });
            }
            report.objective_history = vec![val];
        }
        let (model, jitter) = sparse::posterior(&p, &z, &ds.positions, &y)?;
        report.jitter = jitter;
        axes.push(model);
    }
    Ok(WindMap { mode: MapMode::Sparse, axes: axes.try_into().unwrap(), reports })
}

/// Sparse-GP lower bound for one wind component and its gradients with
/// respect to the log-space hyperparameters and the inducing inputs.
pub fn sparse_elbo(
    params: &KernelParams,
    isotropic: bool,
    inducing: &[Vec3],
    positions: &[Vec3],
    targets: &[f64],
) -> Result<(f64, Vec<f64>, Vec<Vec3>), WindMapError> {
    let y = DVector::from_column_slice(targets);
    let (v, g) = sparse::elbo(params, isotropic, inducing, positions, &y, true)?;
    let g = g.expect("gradient requested");
    Ok((v, g.hyper, g.inducing))
}

/// Exact-GP log marginal likelihood for one component and its log-space
/// hyperparameter gradient.
pub fn exact_log_marginal(
    params: &KernelParams,
    isotropic: bool,
    positions: &[Vec3],
    targets: &[f64],
) -> Result<(f64, Vec<f64>), WindMapError> {
    exact::log_marginal(params, isotropic, positions, &DVector::from_column_slice(targets))
}

impl WindMap {
    pub fn inducing_count(&self) -> usize {
        self.axes[0].inducing.len()
    }

    pub fn query(&self, p: &Vec3) -> WindQuery {
        let mut mean = Vec3::zeros();
        let mut var = Vec3::zeros();
        for (a, axis) in self.axes.iter().enumerate() {
            (mean[a], var[a]) = axis.mean_variance(p);
        }
        WindQuery { mean, covariance: Mat3::from_diagonal(&var) }
    }

    /// Covariance of a wind sample at `p`: the posterior covariance plus the
    /// fitted sample noise, which absorbs turbulence and estimation error.
    pub fn predictive_covariance(&self, p: &Vec3) -> Mat3 {
        let noise = Vec3::from_fn(|a, _| self.axes[a].params.noise_variance);
        self.query(p).covariance + Mat3::from_diagonal(&noise)
    }

    /// `∂ mean / ∂ p`, row `a` being the gradient of wind component `a`.
    pub fn mean_jacobian(&self, p: &Vec3) -> Mat3 {
        let mut j = Mat3::zeros();
        for (a, axis) in self.axes.iter().enumerate() {
            j.set_row(a, &axis.mean_gradient(p).transpose());
        }
        j
    }

    /// Queries a regular grid spanning `[lo, hi]` with `n` points per axis.
    pub fn query_grid(&self, lo: Vec3, hi: Vec3, n: [usize; 3]) -> Vec<(Vec3, WindQuery)> {
        let coord = |d: usize, i: usize| {
            if n[d] <= 1 {
                0.5 * (lo[d] + hi[d])
            } else {
                lo[d] + (hi[d] - lo[d]) * i as f64 / (n[d] - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(n.iter().product());
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let p = Vec3::new(coord(0, i), coord(1, j), coord(2, k));
                    out.push((p, self.query(&p)));
                }
            }
        }
        out
    }

    pub fn write_grid_csv<W: Write>(grid: &[(Vec3, WindQuery)], writer: W) -> Result<(), WindMapError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["x", "y", "z", "wx", "wy", "wz", "var_x", "var_y", "var_z"])?;
        for (p, q) in grid {
            let c = &q.covariance;
            let rec = [p.x, p.y, p.z, q.mean.x, q.mean.y, q.mean.z, c[(0, 0)], c[(1, 1)], c[(2, 2)]];
            wtr.write_record(rec.iter().map(|v| crate::sim::log::fmt_f64(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, WindMapError> {
        let file = MapFile {
            format: WINDMAP_FORMAT.into(),
            mode: self.mode,
            inducing_count: self.inducing_count(),
            axes: self.axes.iter().map(AxisFile::from_model).collect(),
            reports: self.reports.to_vec(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self, WindMapError> {
        let file: MapFile = serde_json::from_str(s)?;
        if file.format != WINDMAP_FORMAT {
            return Err(WindMapError::Format(format!("unsupported format {:?}", file.format)));
        }
        if file.axes.len() != 3 {
            return Err(WindMapError::Format(format!("expected 3 axes, found {}", file.axes.len())));
        }
        let axes: Vec<AxisModel> = file.axes.into_iter().map(AxisFile::into_model).collect::<Result<_, _>>()?;
        let mut reports = file.reports;
        reports.resize(3, AxisReport::default());
        Ok(Self {
            mode: file.mode,
            axes: axes.try_into().unwrap(),
            reports: reports.try_into().unwrap(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), WindMapError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WindMapError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    format: String,
    mode: MapMode,
    inducing_count: usize,
    axes: Vec<AxisFile>,
    #[serde(default)]
    reports: Vec<AxisReport>,
}

#[derive(Serialize, Deserialize)]
struct AxisFile {
    kernel: KernelParams,
    inducing_inputs: Vec<[f64; 3]>,
    q_mean: Vec<f64>,
    /// Row-major M×M.
    q_cov: Vec<f64>,
    query_weights: Vec<f64>,
    /// Row-major M×M.
    query_precision: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl AxisFile {
    fn from_model(m: &AxisModel) -> Self {
        Self {
            kernel: m.params,
            inducing_inputs: m.inducing.iter().map(|z| [z.x, z.y, z.z]).collect(),
            q_mean: m.q_mean.as_slice().to_vec(),
            q_cov: row_major(&m.q_cov),
            query_weights: m.weights.as_slice().to_vec(),
            query_precision: row_major(&m.precision),
        }
    }

    fn into_model(self) -> Result<AxisModel, WindMapError> {
        self.kernel.validate()?;
        let m = self.inducing_inputs.len();
        if m == 0
            || self.q_mean.len() != m
            || self.query_weights.len() != m
            || self.q_cov.len() != m * m
            || self.query_precision.len() != m * m
        {
            return Err(WindMapError::Format("inconsistent axis dimensions".into()));
        }
        Ok(AxisModel {
            params: self.kernel,
            inducing: self.inducing_inputs.iter().map(|z| Vec3::new(z[0], z[1], z[2])).collect(),
            q_mean: DVector::from_vec(self.q_mean),
            q_cov: DMatrix::from_row_slice(m, m, &self.q_cov),
            weights: DVector::from_vec(self.query_weights),
            precision: DMatrix::from_row_slice(m, m, &self.query_precision),
        })
    }
}
