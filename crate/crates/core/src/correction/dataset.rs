use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::features::features;
use crate::arch::{infer_min_hw, ArchConfig, ArchTemplate};
use crate::error::{Error, Result};
use crate::mapping::{free_slots, random_mapping, Factors, LayerMapping, LoopOrdering, Order, FREE_PER_LAYER};
use crate::perfmodel::evaluate_layer;
use crate::workload::{Dim, LayerShape, Network};

pub const SAMPLE_SCHEMA: &str = "# schema: oneloop-samples/v1";

const SHAPE_COLUMNS: [&str; 9] = ["R", "S", "P", "Q", "C", "K", "N", "p_stride", "q_stride"];
const TAIL_COLUMNS: [&str; 5] = ["ordering", "pe_side", "acc_bytes", "sp_bytes", "measured_latency"];

fn header() -> Vec<String> {
    let mut h: Vec<String> = SHAPE_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(free_slots().iter().map(|s| format!("f_{}{}{}", s.kind.letter(), s.level, s.dim.name())));
    h.extend(TAIL_COLUMNS.iter().map(|s| s.to_string()));
    h
}

/// One layer, mapping and hardware with its measured latency in cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredSample {
    pub layer: LayerShape,
    /// Free factors in [`free_slots`] order; DRAM factors are derived.
    pub free: Vec<f64>,
    pub ordering: LoopOrdering,
    pub pe_side: u64,
    pub acc_bytes: u64,
    pub sp_bytes: u64,
    pub measured_latency: f64,
}

impl MeasuredSample {
    pub fn factors(&self) -> Factors<f64> {
        Factors::from_free(&self.free, &self.layer)
    }

    pub fn mapping(&self) -> LayerMapping {
        LayerMapping::new(self.layer, self.factors(), self.ordering)
    }

    pub fn arch(&self, template: &ArchTemplate) -> ArchConfig {
        ArchConfig::with_capacities(template, self.pe_side, self.acc_bytes, self.sp_bytes)
    }

    pub fn analytical_latency(&self, template: &ArchTemplate) -> f64 {
        let arch = self.arch(template);
        let (_, p) = evaluate_layer(&self.factors(), &self.layer, &self.ordering, template, &arch.params());
        p.latency
    }

    pub fn features(&self, template: &ArchTemplate) -> Vec<f64> {
        features(&self.layer, &self.factors(), &self.ordering, &self.arch(template).params())
    }

    /// `ln(measured) - ln(analytical)`.
    pub fn log_residual(&self, template: &ArchTemplate) -> f64 {
        self.measured_latency.ln() - self.analytical_latency(template).ln()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !(self.measured_latency > 0.0 && self.measured_latency.is_finite()) {
            return Err(format!("measured latency {} is not positive", self.measured_latency));
        }
        self.layer.validate().map_err(|e| e.to_string())?;
        self.mapping().validate().into_result().map_err(|e| e.to_string())?;
        if self.pe_side == 0 || self.acc_bytes == 0 || self.sp_bytes == 0 {
            return Err("hardware parameters must be positive".into());
        }
        Ok(())
    }

    fn record(&self) -> Vec<String> {
        let mut r: Vec<String> = self.layer.extents().iter().map(u64::to_string).collect();
        r.push(self.layer.p_stride.to_string());
        r.push(self.layer.q_stride.to_string());
        r.extend(self.free.iter().map(f64::to_string));
        r.push(self.ordering.to_string());
        r.push(self.pe_side.to_string());
        r.push(self.acc_bytes.to_string());
        r.push(self.sp_bytes.to_string());
        r.push(self.measured_latency.to_string());
        r
    }
}

/// Parsed samples plus rows dropped for failing validation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MeasuredSample>,
    /// `(line, reason)` for each rejected row.
    pub rejected: Vec<(usize, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Seeded shuffle, then the last `test_fraction` of samples is held out.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Vec<MeasuredSample>, Vec<MeasuredSample>) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.samples.len() as f64 * test_fraction).round() as usize;
        let n_train = self.samples.len() - n_test.min(self.samples.len());
        let pick = |ix: &[usize]| ix.iter().map(|&i| self.samples[i].clone()).collect();
        (pick(&idx[..n_train]), pick(&idx[n_train..]))
    }
}

fn field<T: FromStr>(rec: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(col).ok_or_else(|| Error::Parse {
        line,
        field: name.into(),
        message: "missing".into(),
    })?;
    raw.trim().parse().map_err(|e: T::Err| Error::Parse {
        line,
        field: name.into(),
        message: format!("`{raw}`: {e}"),
    })
}

pub fn parse_samples(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let cols = header();
    let mut out = Dataset::default();
    let mut seen_header = false;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if !seen_header {
            let got: Vec<&str> = rec.iter().map(str::trim).collect();
            if got != cols {
                return Err(Error::Parse {
                    line,
                    field: "header".into(),
                    message: format!("expected `{}`", cols.join(",")),
                });
            }
            seen_header = true;
            continue;
        }
        if rec.len() != cols.len() {
            return Err(Error::Parse {
                line,
                field: "row".into(),
                message: format!("{} fields, expected {}", rec.len(), cols.len()),
            });
        }
        let mut ext = [0u64; 7];
        for (i, e) in ext.iter_mut().enumerate() {
            *e = field(&rec, i, &cols[i], line)?;
        }
        let layer = LayerShape::new(ext).with_strides(field(&rec, 7, &cols[7], line)?, field(&rec, 8, &cols[8], line)?);
        let mut free = Vec::with_capacity(FREE_PER_LAYER);
        for i in 9..9 + FREE_PER_LAYER {
            free.push(field(&rec, i, &cols[i], line)?);
        }
        let t = 9 + FREE_PER_LAYER;
        let sample = MeasuredSample {
            layer,
            free,
            ordering: field(&rec, t, &cols[t], line)?,
            pe_side: field(&rec, t + 1, &cols[t + 1], line)?,
            acc_bytes: field(&rec, t + 2, &cols[t + 2], line)?,
            sp_bytes: field(&rec, t + 3, &cols[t + 3], line)?,
            measured_latency: field(&rec, t + 4, &cols[t + 4], line)?,
        };
        match sample.check() {
            Ok(()) => out.samples.push(sample),
            Err(msg) => out.rejected.push((line, msg)),
        }
    }
    Ok(out)
}

pub fn load_samples(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_samples(&text)
}

pub fn write_samples<W: Write>(mut out: W, samples: &[MeasuredSample]) -> Result<()> {
    writeln!(out, "{SAMPLE_SCHEMA}").map_err(|e| Error::io("<samples>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for s in samples {
        w.write_record(s.record())?;
    }
    w.flush().map_err(|e| Error::io("<samples>", e))?;
    Ok(())
}

/// Log-space gap between synthetic "measured" and analytical latency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Residual {
    Zero,
    /// Measured is this multiple of analytical.
    Constant(f64),
    /// Depends on array utilization and the DRAM loop ordering, neither of
    /// which the analytical latency charges for.
    Structured,
}

impl Residual {
    fn log_value(&self, s: &MeasuredSample) -> f64 {
        match *self {
            Residual::Zero => 0.0,
            Residual::Constant(f) => f.ln(),
            Residual::Structured => {
                let f = s.factors();
                let used = f.spatial(1, Dim::C) * f.spatial(2, Dim::K);
                let idle = ((s.pe_side * s.pe_side) as f64 / used).ln();
                let dram_order = match s.ordering.at(3) {
                    Order::WeightStationary => 0.0,
                    Order::InputStationary => 0.5,
                    Order::OutputStationary => -0.4,
                };
                1.2 * (0.5 * idle).tanh() + dram_order
            }
        }
    }
}

impl FromStr for Residual {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Residual::Zero),
            "structured" => Ok(Residual::Structured),
            other => match other.strip_prefix("constant:").map(str::parse::<f64>) {
                Some(Ok(f)) if f > 0.0 && f.is_finite() => Ok(Residual::Constant(f)),
                _ => Err(Error::Config(format!(
                    "unknown residual `{other}` (zero, structured, constant:<factor>)"
                ))),
            },
        }
    }
}

/// Random valid mappings of the network's layers on their minimal hardware,
/// "measured" as analytical latency times `exp(residual + noise)` with
/// Gaussian noise of standard deviation `noise` in log space.
pub fn generate_synthetic(
    network: &Network,
    template: &ArchTemplate,
    n: usize,
    residual: Residual,
    noise: f64,
    seed: u64,
) -> Result<Vec<MeasuredSample>> {
    if network.is_empty() && n > 0 {
        return Err(Error::Validation("network has no layers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orderings = LoopOrdering::all();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let layer = network.layers()[i % network.len()].shape;
        let mut m = random_mapping(&layer, template.pe_side_cap, &mut rng);
        m.ordering = orderings[rng.gen_range(0..orderings.len())];
        let arch = infer_min_hw(template, std::slice::from_ref(&m))?;
        let mut s = MeasuredSample {
            layer,
            free: m.free_values(),
            ordering: m.ordering,
            pe_side: arch.pe_side,
            acc_bytes: arch.acc_bytes,
            sp_bytes: arch.sp_bytes,
            measured_latency: 0.0,
        };
        let eps: f64 = rng.sample(StandardNormal);
        s.measured_latency = s.analytical_latency(template) * (residual.log_value(&s) + noise * eps).exp();
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::from_layers("t", &[(LayerShape::new([3, 3, 8, 8, 8, 16, 1]), 1), (LayerShape::matmul(16, 8, 32), 1)]).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let t = ArchTemplate::default();
        let samples = generate_synthetic(&net(), &t, 40, Residual::Structured, 0.1, 5).unwrap();
        let mut buf = Vec::new();
        write_samples(&mut buf, &samples).unwrap();
        let back = parse_samples(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert!(back.rejected.is_empty());
        assert_eq!(back.samples, samples);
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        assert!(parse_samples("").unwrap().is_empty());
        assert!(parse_samples(&format!("{SAMPLE_SCHEMA}\n")).unwrap().is_empty());
    }

    fn one_row(edit: impl Fn(&mut Vec<String>)) -> String {
        let s = generate_synthetic(&net(), &ArchTemplate::default(), 1, Residual::Zero, 0.0, 1).unwrap();
        let mut rec = s[0].record();
        edit(&mut rec);
        format!("{}\n{}\n", header().join(","), rec.join(","))
    }

    #[test]
    fn non_positive_latency_is_rejected() {
        let d = parse_samples(&one_row(|r| *r.last_mut().unwrap() = "0".into())).unwrap();
        assert!(d.samples.is_empty());
        assert_eq!(d.rejected.len(), 1);
        assert_eq!(d.rejected[0].0, 2);
    }

    #[test]
    fn invalid_mapping_is_rejected() {
        // S1C = 3 does not divide C = 8
        let d = parse_samples(&one_row(|r| r[9] = "3".into())).unwrap();
        assert_eq!(d.rejected.len(), 1);
        assert!(d.rejected[0].1.contains("invalid mapping"), "{}", d.rejected[0].1);
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse_samples(&one_row(|r| r[2] = "eight".into())).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_samples(&one_row(|r| {
            r.pop();
        }))
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn split_is_seeded() {
        let samples = generate_synthetic(&net(), &ArchTemplate::default(), 50, Residual::Zero, 0.0, 2).unwrap();
        let d = Dataset { samples, rejected: vec![] };
        let (a, b) = d.split(0.2, 7);
        assert_eq!((a.len(), b.len()), (40, 10));
        assert_eq!(d.split(0.2, 7), (a, b));
    }

    #[test]
    fn residual_names() {
        assert_eq!("constant:2".parse::<Residual>().unwrap(), Residual::Constant(2.0));
        assert!("constant:-1".parse::<Residual>().is_err());
    }
}
