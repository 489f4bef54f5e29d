//! Learned latency correction: a small MLP predicts the log-ratio between
//! measured and analytical latency, and the corrected latency is the
//! analytical one scaled by the (clamped) exponentiated prediction.

mod dataset;
mod features;
mod mlp;
mod rank;
mod train;

pub use dataset::{
    generate_synthetic, load_samples, parse_samples, write_samples, Dataset, MeasuredSample, Residual, SAMPLE_SCHEMA,
};
pub use features::{features, FEATURE_NAMES, NUM_FEATURES};
pub use mlp::{Mlp, DEFAULT_HIDDEN};
pub use rank::{average_ranks, spearman};
pub use train::{train, write_loss_curve, EpochLoss, TrainConfig, TrainReport, LOSS_SCHEMA, MIN_SAMPLES};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::Scalar;

/// Largest correction in either direction: a factor of 10.
pub const MAX_LOG_RESIDUAL: f64 = std::f64::consts::LN_10;

pub const CHECKPOINT_SCHEMA: &str = "oneloop-correction/v1";

/// Normalized features beyond this many standard deviations are flagged as
/// out of the training domain.
pub const DOMAIN_SIGMAS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionModel {
    pub schema: String,
    pub mlp: Mlp,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

/// Corrected latency plus whether the inputs resembled the training data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corrected<S> {
    pub latency: S,
    pub residual: S,
    pub in_domain: bool,
}

impl CorrectionModel {
    /// Model whose weights are all zero: predicts no correction.
    pub fn zero() -> Self {
        CorrectionModel {
            schema: CHECKPOINT_SCHEMA.to_string(),
            mlp: Mlp::zeros(NUM_FEATURES, &DEFAULT_HIDDEN),
            feature_mean: vec![0.0; NUM_FEATURES],
            feature_std: vec![1.0; NUM_FEATURES],
        }
    }

    pub fn normalize<S: Scalar>(&self, raw: &[S]) -> Vec<S> {
        raw.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    /// Predicted log residual, before clamping.
    pub fn residual<S: Scalar>(&self, raw: &[S]) -> S {
        self.mlp.forward_const(&self.normalize(raw))
    }

    pub fn in_domain(&self, raw: &[f64]) -> bool {
        self.normalize(raw).iter().all(|z| z.abs() <= DOMAIN_SIGMAS)
    }

    /// `analytical * exp(clamp(residual, -ln 10, ln 10))`.
    pub fn corrected_latency<S: Scalar>(&self, analytical: S, raw: &[S]) -> Corrected<S> {
        let r = self.residual(raw).max_const(-MAX_LOG_RESIDUAL).min_const(MAX_LOG_RESIDUAL);
        let raw_values: Vec<f64> = raw.iter().map(|x| x.value()).collect();
        Corrected {
            latency: analytical * r.exp(),
            residual: r,
            in_domain: self.in_domain(&raw_values),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: CorrectionModel = serde_json::from_str(text)?;
        if m.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Config(format!("unsupported checkpoint schema `{}`", m.schema)));
        }
        if m.mlp.inputs() != NUM_FEATURES || m.feature_mean.len() != NUM_FEATURES || m.feature_std.len() != NUM_FEATURES {
            return Err(Error::Config(format!("checkpoint does not take {NUM_FEATURES} features")));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some_features() -> Vec<f64> {
        (0..NUM_FEATURES).map(|i| (i as f64 * 0.37).sin() * 3.0).collect()
    }

    #[test]
    fn zero_model_is_identity_bit_for_bit() {
        let m = CorrectionModel::zero();
        for a in [1.0, 3.7e5, 123.456789, 1e-3] {
            let c = m.corrected_latency(a, &some_features());
            assert_eq!(c.latency.to_bits(), f64::to_bits(a));
        }
    }

    fn with_bias(b: f64) -> CorrectionModel {
        let mut m = CorrectionModel::zero();
        let last = m.mlp.num_params() - 1;
        m.mlp.params[last] = b;
        m
    }

    #[test]
    fn residual_scales_latency() {
        let c = with_bias(2f64.ln()).corrected_latency(50.0, &some_features());
        approx::assert_relative_eq!(c.latency, 100.0, max_relative = 1e-12);
    }

    #[test]
    fn residual_is_clamped() {
        let c = with_bias(100f64.ln()).corrected_latency(50.0, &some_features());
        approx::assert_relative_eq!(c.latency, 500.0, max_relative = 1e-12);
        let c = with_bias(-1e3).corrected_latency(50.0, &some_features());
        approx::assert_relative_eq!(c.latency, 5.0, max_relative = 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = with_bias(0.1234567890123);
        let back = CorrectionModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn domain_flag() {
        let m = CorrectionModel::zero();
        assert!(m.in_domain(&vec![1.0; NUM_FEATURES]));
        assert!(!m.in_domain(&vec![10.0; NUM_FEATURES]));
    }
}
