use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward, Architecture, Layout, Workspace};
use super::AirflowError;
use crate::geom::{Mat3, Vec3};
use crate::sim::LogRow;

pub const MODEL_FORMAT: &str = "aio-lstm v1";

/// Number of input features per airflow sample.
pub const FEATURES: usize = 20;

/// Index ranges of the input groups in a feature row.
pub mod feature {
    use std::ops::Range;
    pub const WHISKER: Range<usize> = 0..8;
    pub const GYRO: Range<usize> = 8..11;
    pub const ACCEL: Range<usize> = 11..14;
    pub const THROTTLE: Range<usize> = 14..20;
}

/// Feature row of one log sample: whisker angles, gyro, accelerometer,
/// throttle.
pub fn features(row: &LogRow) -> [f64; FEATURES] {
    let mut f = [0.0; FEATURES];
    f[feature::WHISKER].copy_from_slice(&row.whisker);
    f[feature::GYRO].copy_from_slice(row.gyro.as_slice());
    f[feature::ACCEL].copy_from_slice(row.accel.as_slice());
    f[feature::THROTTLE].copy_from_slice(&row.throttle);
    f
}

/// Which input groups the network sees. Masked groups are zeroed after
/// normalization, which is equivalent to removing them from the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub airflow: bool,
    pub gyro: bool,
    pub accel: bool,
    pub throttle: bool,
}

impl FeatureMask {
    pub const FULL: Self = Self { airflow: true, gyro: true, accel: true, throttle: true };
    pub const NO_ACCEL: Self = Self { accel: false, ..Self::FULL };
    pub const NO_THROTTLE: Self = Self { throttle: false, ..Self::FULL };
    pub const AIRFLOW_GYRO: Self = Self { accel: false, throttle: false, ..Self::FULL };

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.airflow {
            parts.push("airflow");
        }
        if self.gyro {
            parts.push("gyro");
        }
        if self.throttle {
            parts.push("throttle");
        }
        if self.accel {
            parts.push("acc");
        }
        parts.join("+")
    }

    pub fn enabled(&self, index: usize) -> bool {
        if feature::WHISKER.contains(&index) {
            self.airflow
        } else if feature::GYRO.contains(&index) {
            self.gyro
        } else if feature::ACCEL.contains(&index) {
            self.accel
        } else {
            self.throttle
        }
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::FULL
    }
}

/// Relative airflow regressor: stacked LSTM over a short window of sensor
/// samples, linear head on the last hidden state.
#[derive(Clone, Debug)]
pub struct LstmRegressor {
    layout: Layout,
    pub(crate) params: Vec<f64>,
    pub(crate) norm_mean: Vec<f64>,
    pub(crate) norm_std: Vec<f64>,
    pub(crate) mask: FeatureMask,
    /// Covariance of the prediction error, body frame (m/s)².
    pub(crate) measurement_cov: Mat3,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    architecture: Architecture,
    feature_mask: FeatureMask,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    measurement_cov: [[f64; 3]; 3],
    layers: Vec<LayerDocument>,
    head_weights: Vec<f64>,
    head_bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    /// `4H x (I + H)` row-major, gates ordered input, forget, cell, output.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LstmRegressor {
    /// Fresh network: weights uniform in `±1/sqrt(fan_in)`, forget-gate bias
    /// +1, identity normalization.
    pub fn initialized(arch: Architecture, mask: FeatureMask, seed: u64) -> Self {
        let layout = Layout::new(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len()];
        for (range, bound, _) in layout.init_ranges() {
            for p in &mut params[range] {
                *p = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            }
        }
        for l in 0..arch.layers {
            for p in &mut params[layout.forget_bias_range(l)] {
                *p += 1.0;
            }
        }
        Self {
            params,
            norm_mean: vec![0.0; arch.input_dim],
            norm_std: vec![1.0; arch.input_dim],
            mask,
            measurement_cov: Mat3::identity() * 0.01,
            layout,
        }
    }

    /// Network with every parameter zero.
    pub fn zeroed(arch: Architecture) -> Self {
        let mut m = Self::initialized(arch, FeatureMask::FULL, 0);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        m
    }

    pub fn architecture(&self) -> &Architecture {
        self.layout.arch()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn feature_mask(&self) -> FeatureMask {
        self.mask
    }

    pub fn measurement_cov(&self) -> &Mat3 {
        &self.measurement_cov
    }

    pub fn set_measurement_cov(&mut self, cov: Mat3) -> Result<(), AirflowError> {
        if (cov - cov.transpose()).norm() > 1e-12 * cov.norm().max(1.0) || cov.cholesky().is_none() {
            return Err(AirflowError::InvalidModel("measurement covariance must be SPD".into()));
        }
        self.measurement_cov = cov;
        Ok(())
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.norm_mean, &self.norm_std)
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<(), AirflowError> {
        let n = self.architecture().input_dim;
        if mean.len() != n || std.len() != n {
            return Err(AirflowError::InvalidModel("normalization length mismatch".into()));
        }
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(AirflowError::InvalidModel("normalization stds must be positive".into()));
        }
        self.norm_mean = mean;
        self.norm_std = std;
        Ok(())
    }

    /// Normalized, masked, flattened copy of a raw window.
    pub(crate) fn prepare(&self, window: &[[f64; FEATURES]], out: &mut Vec<f64>) {
        out.clear();
        for row in window {
            for (i, x) in row.iter().enumerate() {
                out.push(if self.mask.enabled(i) {
                    (x - self.norm_mean[i]) / self.norm_std[i]
                } else {
                    0.0
                });
            }
        }
    }

    fn check_window(&self, window: &[[f64; FEATURES]]) -> Result<(), AirflowError> {
        let arch = self.architecture();
        if window.len() != arch.seq_len || arch.input_dim != FEATURES {
            return Err(AirflowError::WindowShape {
                expected: (arch.seq_len, arch.input_dim),
                got: (window.len(), FEATURES),
            });
        }
        Ok(())
    }

    /// Predicted relative airflow (body frame, m/s) for one raw window.
    pub fn predict(&self, window: &[[f64; FEATURES]]) -> Result<Vec3, AirflowError> {
        self.check_window(window)?;
        let mut ws = Workspace::new(&self.layout);
        let mut buf = Vec::with_capacity(window.len() * FEATURES);
        Ok(self.predict_with(window, &mut ws, &mut buf))
    }

    pub(crate) fn predict_with(
        &self,
        window: &[[f64; FEATURES]],
        ws: &mut Workspace,
        buf: &mut Vec<f64>,
    ) -> Vec3 {
        self.prepare(window, buf);
        let mut out = [0.0; 3];
        forward(&self.layout, &self.params, buf, ws, &mut out);
        Vec3::from(out)
    }

    pub fn to_json(&self) -> Result<String, AirflowError> {
        let arch = *self.architecture();
        let layers = (0..arch.layers)
            .map(|l| LayerDocument {
                weights: self.params[self.layout.layer_weight_range(l)].to_vec(),
                bias: self.params[self.layout.layer_bias_range(l)].to_vec(),
            })
            .collect();
        let c = &self.measurement_cov;
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            architecture: arch,
            feature_mask: self.mask,
            norm_mean: self.norm_mean.clone(),
            norm_std: self.norm_std.clone(),
            measurement_cov: [
                [c.m11, c.m12, c.m13],
                [c.m21, c.m22, c.m23],
                [c.m31, c.m32, c.m33],
            ],
            layers,
            head_weights: self.params[self.layout.head_weight_range()].to_vec(),
            head_bias: self.params[self.layout.head_bias_range()].to_vec(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self, AirflowError> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(AirflowError::InvalidModel(format!("unsupported format {:?}", doc.format)));
        }
        let arch = doc.architecture;
        let mut m = Self::zeroed(arch);
        m.mask = doc.feature_mask;
        if doc.layers.len() != arch.layers {
            return Err(AirflowError::InvalidModel("layer count mismatch".into()));
        }
        let mut fill = |range: std::ops::Range<usize>, src: &[f64], what: &str| {
            if range.len() != src.len() {
                return Err(AirflowError::InvalidModel(format!("{what} has wrong length")));
            }
            m.params[range].copy_from_slice(src);
            Ok(())
        };
        for (l, layer) in doc.layers.iter().enumerate() {
            fill(m.layout.layer_weight_range(l), &layer.weights, "layer weights")?;
            fill(m.layout.layer_bias_range(l), &layer.bias, "layer bias")?;
        }
        fill(m.layout.head_weight_range(), &doc.head_weights, "head weights")?;
        fill(m.layout.head_bias_range(), &doc.head_bias, "head bias")?;
        if m.params.iter().any(|p| !p.is_finite()) {
            return Err(AirflowError::InvalidModel("non-finite parameter".into()));
        }
        m.set_normalization(doc.norm_mean, doc.norm_std)?;
        let c = doc.measurement_cov;
        m.set_measurement_cov(Mat3::new(
            c[0][0], c[0][1], c[0][2], c[1][0], c[1][1], c[1][2], c[2][0], c[2][1], c[2][2],
        ))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), AirflowError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AirflowError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_window(seed: u64) -> Vec<[f64; FEATURES]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect()
    }

    #[test]
    fn wrong_window_shape_rejected() {
        let m = LstmRegressor::initialized(Architecture::default(), FeatureMask::FULL, 1);
        let w = random_window(0);
        assert!(matches!(m.predict(&w[..4]), Err(AirflowError::WindowShape { .. })));
    }

    #[test]
    fn predictions_do_not_depend_on_other_windows() {
        let m = LstmRegressor::initialized(Architecture::default(), FeatureMask::FULL, 1);
        let (a, b) = (random_window(1), random_window(2));
        let pa = m.predict(&a).unwrap();
        let pb = m.predict(&b).unwrap();
        let mut ws = Workspace::new(m.layout());
        let mut buf = Vec::new();
        assert_eq!(m.predict_with(&b, &mut ws, &mut buf), pb);
        assert_eq!(m.predict_with(&a, &mut ws, &mut buf), pa);
    }

    #[test]
    fn shifting_input_and_mean_together_is_exact() {
        let mut m = LstmRegressor::initialized(Architecture::default(), FeatureMask::FULL, 3);
        let mean: Vec<f64> = (0..FEATURES).map(|i| 0.25 * i as f64).collect();
        let std: Vec<f64> = (0..FEATURES).map(|i| 0.5 + 0.125 * i as f64).collect();
        m.set_normalization(mean.clone(), std.clone()).unwrap();
        let window: Vec<[f64; FEATURES]> =
            (0..5).map(|t| std::array::from_fn(|i| 0.5 * t as f64 - 0.75 * i as f64)).collect();
        let before = m.predict(&window).unwrap();
        let c = 4.0;
        let shifted: Vec<[f64; FEATURES]> =
            window.iter().map(|row| { let mut r = *row; r[5] += c; r }).collect();
        let mut shifted_mean = mean;
        shifted_mean[5] += c;
        m.set_normalization(shifted_mean, std).unwrap();
        assert_eq!(m.predict(&shifted).unwrap(), before);
    }

    #[test]
    fn json_roundtrip_preserves_predictions() {
        let mut m = LstmRegressor::initialized(Architecture::default(), FeatureMask::NO_ACCEL, 7);
        m.set_measurement_cov(Mat3::from_diagonal(&Vec3::new(0.01, 0.02, 0.03))).unwrap();
        let back = LstmRegressor::from_json(&m.to_json().unwrap()).unwrap();
        let w = random_window(4);
        assert_eq!(back.predict(&w).unwrap(), m.predict(&w).unwrap());
        assert_eq!(back.feature_mask(), FeatureMask::NO_ACCEL);
        assert_eq!(back.measurement_cov(), m.measurement_cov());
    }

    #[test]
    fn invalid_normalization_rejected() {
        let mut m = LstmRegressor::zeroed(Architecture::default());
        assert!(m.set_normalization(vec![0.0; FEATURES], vec![0.0; FEATURES]).is_err());
        assert!(m.set_measurement_cov(Mat3::zeros()).is_err());
    }
}
