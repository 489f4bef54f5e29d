use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, MeasuredSample};
use super::mlp::{Mlp, DEFAULT_HIDDEN};
use super::{CorrectionModel, CHECKPOINT_SCHEMA, NUM_FEATURES};
use crate::arch::ArchTemplate;
use crate::error::{Error, Result};
use crate::gradient::{grad, Scalar};
use crate::search::Adam;

pub const MIN_SAMPLES: usize = 50;

pub const LOSS_SCHEMA: &str = "# schema: oneloop-loss-curve/v1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub test_fraction: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 32,
            test_fraction: 0.2,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

/// Mean squared log-residual error after an epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub model: CorrectionModel,
    pub curve: Vec<EpochLoss>,
    pub train: Vec<MeasuredSample>,
    pub test: Vec<MeasuredSample>,
}

impl TrainReport {
    pub fn final_test_loss(&self) -> Option<f64> {
        self.curve.last().map(|e| e.test)
    }
}

fn mse(mlp: &Mlp, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let total: f64 = xs.iter().zip(ys).map(|(x, y)| (mlp.forward_const(x) - y).powi(2)).sum();
    total / xs.len() as f64
}

/// Fits the regressor to `ln(measured) - ln(analytical)` with Adam on mean
/// squared error. Normalization statistics come from the training split.
/// Output weights start at zero and the output bias at the mean training
/// residual.
pub fn train(dataset: &Dataset, template: &ArchTemplate, config: &TrainConfig) -> Result<TrainReport> {
    if dataset.len() < MIN_SAMPLES {
        return Err(Error::Training(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            dataset.len()
        )));
    }
    if config.batch_size == 0 || !(0.0..1.0).contains(&config.test_fraction) {
        return Err(Error::Config("batch size must be positive and test fraction in [0, 1)".into()));
    }
    let (train_set, test_set) = dataset.split(config.test_fraction, config.seed);
    let prepare = |s: &[MeasuredSample]| -> (Vec<Vec<f64>>, Vec<f64>) {
        s.iter().map(|s| (s.features(template), s.log_residual(template))).unzip()
    };
    let (train_raw, train_y) = prepare(&train_set);
    let (test_raw, test_y) = prepare(&test_set);

    let n = train_raw.len() as f64;
    let mut mean = vec![0.0; NUM_FEATURES];
    let mut std = vec![0.0; NUM_FEATURES];
    for x in &train_raw {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    for x in &train_raw {
        for ((s, v), m) in std.iter_mut().zip(x).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-18 { s.sqrt() } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::init(NUM_FEATURES, &config.hidden, &mut rng);
    let out_w = mlp.widths[mlp.widths.len() - 2];
    let np = mlp.num_params();
    mlp.params[np - out_w - 1..].iter_mut().for_each(|p| *p = 0.0);
    mlp.params[np - 1] = train_y.iter().sum::<f64>() / n;

    let mut model = CorrectionModel {
        schema: CHECKPOINT_SCHEMA.to_string(),
        mlp,
        feature_mean: mean,
        feature_std: std,
    };
    let train_x: Vec<Vec<f64>> = train_raw.iter().map(|x| model.normalize(x)).collect();
    let test_x: Vec<Vec<f64>> = test_raw.iter().map(|x| model.normalize(x)).collect();

    let mut adam = Adam::new(np, config.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let widths = model.mlp.widths.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let g = grad(
                |params| {
                    let mut loss = None;
                    for &i in batch {
                        let x: Vec<_> = train_x[i].iter().map(|&v| Scalar::constant(v)).collect();
                        let e = Mlp::forward(&widths, params, &x) - train_y[i];
                        let sq = e * e;
                        loss = Some(match loss {
                            None => sq,
                            Some(l) => l + sq,
                        });
                    }
                    loss.expect("non-empty batch") / batch.len() as f64
                },
                &model.mlp.params,
            );
            if !g.value.is_finite() || g.gradient.iter().any(|d| !d.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss {} at epoch {epoch}, batch {b}",
                    g.value
                )));
            }
            adam.step(&mut model.mlp.params, &g.gradient);
        }
        let e = EpochLoss {
            epoch,
            train: mse(&model.mlp, &train_x, &train_y),
            test: mse(&model.mlp, &test_x, &test_y),
        };
        if !e.train.is_finite() || !e.test.is_finite() {
            return Err(Error::Training(format!("non-finite loss after epoch {epoch}")));
        }
        curve.push(e);
    }
    Ok(TrainReport {
        model,
        curve,
        train: train_set,
        test: test_set,
    })
}

pub fn write_loss_curve<W: Write>(mut out: W, curve: &[EpochLoss]) -> Result<()> {
    writeln!(out, "{LOSS_SCHEMA}").map_err(|e| Error::io("<loss curve>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "test_loss"])?;
    for e in curve {
        w.write_record([e.epoch.to_string(), e.train.to_string(), e.test.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<loss curve>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::{generate_synthetic, Residual};
    use crate::workload::{LayerShape, Network};

    fn dataset(n: usize, residual: Residual) -> Dataset {
        let net = Network::from_layers("t", &[(LayerShape::new([3, 3, 8, 8, 8, 16, 1]), 1), (LayerShape::matmul(16, 8, 32), 1)]).unwrap();
        let samples = generate_synthetic(&net, &ArchTemplate::default(), n, residual, 0.0, 3).unwrap();
        Dataset { samples, rejected: vec![] }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            ..Default::default()
        }
    }

    #[test]
    fn refuses_small_datasets() {
        let err = train(&dataset(49, Residual::Zero), &ArchTemplate::default(), &quick()).unwrap_err();
        assert!(err.to_string().contains("at least 50"), "{err}");
        assert!(train(&Dataset::default(), &ArchTemplate::default(), &quick()).is_err());
    }

    #[test]
    fn zero_residual_is_a_fixed_point() {
        let t = ArchTemplate::default();
        let rep = train(&dataset(100, Residual::Zero), &t, &quick()).unwrap();
        assert!(rep.final_test_loss().unwrap() < 1e-4);
        for s in &rep.test {
            let a = s.analytical_latency(&t);
            let c = rep.model.corrected_latency(a, &s.features(&t)).latency;
            assert!((c / a - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn constant_factor_is_learned() {
        let t = ArchTemplate::default();
        let rep = train(&dataset(100, Residual::Constant(2.0)), &t, &quick()).unwrap();
        for s in &rep.test {
            let c = rep.model.corrected_latency(s.analytical_latency(&t), &s.features(&t)).latency;
            assert!((c / s.measured_latency - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let t = ArchTemplate::default();
        let d = dataset(80, Residual::Structured);
        let a = train(&d, &t, &quick()).unwrap();
        let b = train(&d, &t, &quick()).unwrap();
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        assert_eq!(a.curve, b.curve);
        let mut csv = Vec::new();
        write_loss_curve(&mut csv, &a.curve).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(LOSS_SCHEMA));
        assert_eq!(text.lines().count(), 2 + 20);
    }

    #[test]
    fn structured_loss_decreases() {
        let rep = train(&dataset(100, Residual::Structured), &ArchTemplate::default(), &quick()).unwrap();
        assert!(rep.curve.last().unwrap().train < rep.curve[0].train);
    }
}
