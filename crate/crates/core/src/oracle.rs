//! Brute-force reference: walks the mapped loop nest and counts tile fills
//! directly instead of using the closed form.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::arch::{ArchConfig, BypassMatrix};
use crate::error::{Error, Result};
use crate::gradient::relative_error;
use crate::mapping::{FactorKind, LayerMapping, DRAM, NUM_LEVELS};
use crate::perfmodel::{self, NetworkEvaluation, PerfEstimate, TrafficReport};
use crate::workload::{Dim, LayerShape, Network, Tensor, NUM_DIMS, NUM_TENSORS};

/// Maximum loop-nest iterations the oracle will enumerate per layer.
pub const ITERATION_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Loop {
    pub level: usize,
    pub kind: FactorKind,
    pub dim: Dim,
    pub bound: u64,
}

/// The loop nest of a valid mapping, outermost loop first. Unit loops are
/// kept so positions are stable.
#[derive(Clone, Debug, PartialEq)]
pub struct NestSpec {
    pub loops: Vec<Loop>,
    pub layer: LayerShape,
}

impl NestSpec {
    pub fn from_mapping(mapping: &LayerMapping) -> Result<Self> {
        mapping.validate().into_result()?;
        let f = &mapping.factors;
        let mut loops = Vec::with_capacity(2 * NUM_LEVELS * NUM_DIMS);
        for level in (0..NUM_LEVELS).rev() {
            let temporal_order = if level == 0 {
                Dim::ALL
            } else {
                mapping.ordering.at(level).permutation()
            };
            for d in temporal_order {
                loops.push(Loop {
                    level,
                    kind: FactorKind::Temporal,
                    dim: d,
                    bound: f.temporal(level, d) as u64,
                });
            }
            for d in Dim::ALL {
                loops.push(Loop {
                    level,
                    kind: FactorKind::Spatial,
                    dim: d,
                    bound: f.spatial(level, d) as u64,
                });
            }
        }
        Ok(NestSpec {
            loops,
            layer: mapping.layer,
        })
    }

    pub fn iterations(&self) -> u64 {
        self.loops.iter().map(|l| l.bound).product()
    }

    /// Enumerates every point of the full nest and counts them.
    pub fn count_iterations(&self) -> u64 {
        let mut n = 0;
        odometer(&self.loops, |_| n += 1);
        n
    }

    /// Per-dimension multiplier of each loop's index when forming the
    /// coordinate within the sub-nest `loops`.
    fn strides(loops: &[Loop]) -> Vec<u64> {
        let mut strides = vec![0; loops.len()];
        let mut running = [1u64; NUM_DIMS];
        for (k, l) in loops.iter().enumerate().rev() {
            strides[k] = running[l.dim.index()];
            running[l.dim.index()] *= l.bound;
        }
        strides
    }
}

impl fmt::Display for NestSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut depth = 0;
        for l in self.loops.iter().filter(|l| l.bound > 1) {
            let kw = match l.kind {
                FactorKind::Temporal => "for",
                FactorKind::Spatial => "parallel_for",
            };
            writeln!(
                f,
                "{:indent$}{kw} {}{} in 0..{}:",
                "",
                l.dim.name().to_lowercase(),
                l.level,
                l.bound,
                indent = 2 * depth
            )?;
            depth += 1;
        }
        write!(f, "{:indent$}mac()", "", indent = 2 * depth)
    }
}

/// Visits every index vector of `loops` in lexicographic (nest) order.
fn odometer(loops: &[Loop], mut visit: impl FnMut(&[u64])) {
    let mut idx = vec![0u64; loops.len()];
    if loops.iter().any(|l| l.bound == 0) {
        return;
    }
    loop {
        visit(&idx);
        let mut k = loops.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < loops[k].bound {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Distinct words of `t` touched by the sub-nest `loops`.
fn footprint(loops: &[Loop], layer: &LayerShape, t: Tensor) -> u64 {
    let strides = NestSpec::strides(loops);
    let coord = |idx: &[u64], d: Dim| -> u64 {
        loops
            .iter()
            .zip(idx)
            .zip(&strides)
            .filter(|((l, _), _)| l.dim == d)
            .map(|((_, &i), &s)| i * s)
            .sum()
    };
    match t {
        Tensor::W | Tensor::O => {
            let dims: Vec<Dim> = Dim::ALL.into_iter().filter(|&d| t.relevant(d)).collect();
            let mut seen = HashSet::new();
            odometer(loops, |idx| {
                let key: Vec<u64> = dims.iter().map(|&d| coord(idx, d)).collect();
                seen.insert(key);
            });
            seen.len() as u64
        }
        Tensor::I => {
            let mut channels = HashSet::new();
            let (mut h_lo, mut h_hi, mut w_lo, mut w_hi) = (u64::MAX, 0, u64::MAX, 0);
            odometer(loops, |idx| {
                channels.insert((coord(idx, Dim::C), coord(idx, Dim::N)));
                let h = coord(idx, Dim::P) * layer.p_stride + coord(idx, Dim::R);
                let w = coord(idx, Dim::Q) * layer.q_stride + coord(idx, Dim::S);
                h_lo = h_lo.min(h);
                h_hi = h_hi.max(h);
                w_lo = w_lo.min(w);
                w_hi = w_hi.max(w);
            });
            channels.len() as u64 * (h_hi - h_lo + 1) * (w_hi - w_lo + 1)
        }
    }
}

/// Number of maximal constant runs of the tile identifier (the indices of
/// relevant loops) over the sequential loops.
fn count_runs(loops: &[Loop], t: Tensor) -> u64 {
    let relevant: Vec<usize> = (0..loops.len()).filter(|&k| t.relevant(loops[k].dim)).collect();
    let mut runs = 0;
    let mut last: Option<Vec<u64>> = None;
    odometer(loops, |idx| {
        let id: Vec<u64> = relevant.iter().map(|&k| idx[k]).collect();
        if last.as_ref() != Some(&id) {
            runs += 1;
            last = Some(id);
        }
    });
    runs
}

/// Counts traffic of a valid mapping by enumeration.
///
/// Writes into level `i` are the tile footprint times the number of times the
/// tile changes while the temporal loops above `i` run, once per spatial
/// instance above `i`. Reads and updates follow from the writes one level
/// in: each level serves the next inner level that holds the tensor (or the
/// MACs, at the innermost one), shared across its irrelevant spatial fan-out.
pub fn simulate_traffic(mapping: &LayerMapping, bypass: &BypassMatrix) -> Result<TrafficReport<f64>> {
    let spec = NestSpec::from_mapping(mapping)?;
    let macs = spec.iterations();
    if macs > ITERATION_CAP {
        return Err(Error::OracleCap {
            layer: mapping.layer.to_string(),
            iterations: macs,
            cap: ITERATION_CAP,
        });
    }
    let layer = &mapping.layer;
    let mut report = TrafficReport::zero(macs as f64);
    for t in Tensor::ALL {
        for i in (0..NUM_LEVELS).filter(|&i| bypass.holds(i, t)) {
            let inside: Vec<Loop> = spec.loops.iter().copied().filter(|l| l.level <= i).collect();
            let above_temporal: Vec<Loop> = spec
                .loops
                .iter()
                .copied()
                .filter(|l| l.level > i && l.kind == FactorKind::Temporal)
                .collect();
            let instances: u64 = spec
                .loops
                .iter()
                .filter(|l| l.level > i && l.kind == FactorKind::Spatial)
                .map(|l| l.bound)
                .product();
            let runs = count_runs(&above_temporal, t) * instances;
            report.writes[i][t.index()] = (runs * footprint(&inside, layer, t)) as f64;
        }
        let mut below: Option<f64> = None;
        for i in (0..NUM_LEVELS).filter(|&i| bypass.holds(i, t)) {
            let fanout: u64 = spec
                .loops
                .iter()
                .filter(|l| l.level == i && l.kind == FactorKind::Spatial && !t.relevant(l.dim))
                .map(|l| l.bound)
                .product();
            let served = below.unwrap_or(macs as f64) / fanout as f64;
            report.reads[i][t.index()] = served;
            if t == Tensor::O {
                report.updates[i][t.index()] = served;
            }
            below = Some(report.writes[i][t.index()]);
        }
    }
    Ok(report)
}

/// Full footprint of each tensor, enumerated over the whole nest.
pub fn tensor_footprints(mapping: &LayerMapping) -> Result<[u64; NUM_TENSORS]> {
    let spec = NestSpec::from_mapping(mapping)?;
    Ok(Tensor::ALL.map(|t| footprint(&spec.loops, &mapping.layer, t)))
}

/// Latency and energy computed from oracle-counted traffic.
pub fn oracle_layer(mapping: &LayerMapping, arch: &ArchConfig) -> Result<(TrafficReport<f64>, PerfEstimate<f64>)> {
    let report = simulate_traffic(mapping, &arch.template.bypass)?;
    let hw = arch.params();
    let (latency, compute_latency, mem_latency) = perfmodel::latency(&report, &mapping.factors, &arch.template, &hw);
    let (energy, compute_energy, level_energy) = perfmodel::energy(&report, &arch.template, &hw);
    Ok((
        report,
        PerfEstimate {
            latency,
            energy,
            compute_latency,
            mem_latency,
            level_energy,
            compute_energy,
        },
    ))
}

/// Network evaluation with oracle traffic in place of the closed form.
pub fn oracle_network(mappings: &[LayerMapping], network: &Network, arch: &ArchConfig) -> Result<NetworkEvaluation> {
    let mut layers = Vec::new();
    let mut traffic = Vec::new();
    for m in mappings {
        let (t, p) = oracle_layer(m, arch)?;
        layers.push(p);
        traffic.push(t);
    }
    let repeats = network.repeats();
    let est: Vec<(f64, f64)> = layers.iter().map(|p| (p.energy, p.latency)).collect();
    Ok(NetworkEvaluation {
        edp: perfmodel::network_edp(&est, &repeats),
        energy: layers.iter().zip(&repeats).map(|(p, &r)| p.energy * r as f64).sum(),
        latency: layers.iter().zip(&repeats).map(|(p, &r)| p.latency * r as f64).sum(),
        layers,
        traffic,
        arch: arch.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldComparison {
    pub field: String,
    pub model: f64,
    pub oracle: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Correlation {
    pub fields: Vec<FieldComparison>,
}

impl Correlation {
    /// Mean relative error over all fields; `None` when there are none.
    pub fn mae(&self) -> Option<f64> {
        if self.fields.is_empty() {
            None
        } else {
            Some(self.fields.iter().map(|f| f.rel_error).sum::<f64>() / self.fields.len() as f64)
        }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.fields.iter().map(|f| f.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&FieldComparison> {
        self.fields
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Field-by-field comparison of a model report with an oracle report.
pub fn correlate(
    model: (&TrafficReport<f64>, &PerfEstimate<f64>),
    oracle: (&TrafficReport<f64>, &PerfEstimate<f64>),
) -> Correlation {
    let mut fields = Vec::new();
    let mut push = |name: String, m: f64, o: f64| {
        fields.push(FieldComparison {
            field: name,
            model: m,
            oracle: o,
            rel_error: relative_error(m, o),
        });
    };
    let (mt, mp) = model;
    let (ot, op) = oracle;
    for i in 0..NUM_LEVELS {
        for t in Tensor::ALL {
            let k = t.index();
            push(format!("writes_{}_{}", t.name(), i), mt.writes[i][k], ot.writes[i][k]);
            push(format!("reads_{}_{}", t.name(), i), mt.reads[i][k], ot.reads[i][k]);
            push(format!("updates_{}_{}", t.name(), i), mt.updates[i][k], ot.updates[i][k]);
        }
    }
    push("macs".into(), mt.macs, ot.macs);
    push("latency".into(), mp.latency, op.latency);
    push("energy".into(), mp.energy, op.energy);
    push("edp".into(), mp.edp(), op.edp());
    Correlation { fields }
}

/// One row per (mapping, field) with a versioned schema line.
pub fn write_correlation_csv(path: &Path, rows: &[(usize, Correlation)]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# schema: oneloop-correlation-fields/v1").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["mapping_id", "field", "model", "oracle", "rel_error"])?;
    for (id, c) in rows {
        for f in &c.fields {
            w.write_record([
                id.to_string(),
                f.field.clone(),
                f.model.to_string(),
                f.oracle.to_string(),
                f.rel_error.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// DRAM tile of every tensor equals its full footprint.
pub fn dram_writes_are_footprints(report: &TrafficReport<f64>, footprints: &[u64; NUM_TENSORS]) -> bool {
    Tensor::ALL
        .iter()
        .all(|t| report.writes[DRAM][t.index()] == footprints[t.index()] as f64)
}
