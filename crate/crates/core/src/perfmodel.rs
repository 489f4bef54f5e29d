//! Closed-form traffic, latency, energy and EDP.
//!
//! Everything here is generic over [`Scalar`], so the same code evaluates
//! rounded mappings in `f64` and records a differentiable tape during
//! descent.

use crate::arch::{hardware_requirements, ArchConfig, ArchTemplate, BypassMatrix, HardwareParams};
use crate::error::{Error, Result};
use crate::gradient::{softmax, Scalar};
use crate::mapping::{Factors, LayerMapping, LoopOrdering, Order, DRAM, NUM_LEVELS};
use crate::workload::{Dim, LayerShape, Network, Tensor, NUM_DIMS, NUM_TENSORS};

/// Per-level, per-tensor data movement of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficReport<S> {
    pub writes: [[S; NUM_TENSORS]; NUM_LEVELS],
    pub reads: [[S; NUM_TENSORS]; NUM_LEVELS],
    pub updates: [[S; NUM_TENSORS]; NUM_LEVELS],
    pub macs: f64,
}

impl<S: Scalar> TrafficReport<S> {
    pub fn zero(macs: f64) -> Self {
        let z = [[S::constant(0.0); NUM_TENSORS]; NUM_LEVELS];
        TrafficReport {
            writes: z,
            reads: z,
            updates: z,
            macs,
        }
    }

    /// Reads + updates + writes of every tensor at `level`.
    pub fn accesses(&self, level: usize) -> S {
        let mut acc = S::constant(0.0);
        for t in 0..NUM_TENSORS {
            acc = acc + self.reads[level][t] + self.updates[level][t] + self.writes[level][t];
        }
        acc
    }

    pub fn value(&self) -> TrafficReport<f64> {
        let v = |a: &[[S; NUM_TENSORS]; NUM_LEVELS]| a.map(|row| row.map(|x| x.value()));
        TrafficReport {
            writes: v(&self.writes),
            reads: v(&self.reads),
            updates: v(&self.updates),
            macs: self.macs,
        }
    }
}

/// Number of times a tile of `t` resident at `level` is (re)filled over
/// the temporal loops of the levels above it.
///
/// Loops run outer to inner as `T3, T2, ..., T(level+1)`, each level in its
/// ordering's permutation. Every relevant loop refetches. An irrelevant loop
/// refetches only when some relevant loop with factor > 1 sits inside it.
pub fn temporal_runs<S: Scalar>(factors: &Factors<S>, ordering: &LoopOrdering, level: usize, t: Tensor) -> S {
    let mut loops: Vec<(Dim, S)> = Vec::with_capacity(NUM_DIMS * (DRAM - level));
    for j in (level + 1..NUM_LEVELS).rev() {
        for d in ordering.at(j).permutation() {
            loops.push((d, factors.temporal(j, d)));
        }
    }
    // Evaluated outermost first so the branch record is stable.
    let live: Vec<bool> = loops
        .iter()
        .map(|(d, f)| t.relevant(*d) && f.exceeds(1.0))
        .collect();
    let innermost = live.iter().rposition(|&b| b);
    let mut runs = S::constant(1.0);
    for (pos, (d, f)) in loops.iter().enumerate() {
        let outer_to_relevant = innermost.is_some_and(|k| pos < k);
        if t.relevant(*d) || outer_to_relevant {
            runs = runs * *f;
        }
    }
    runs
}

/// Product of all spatial factors at levels above `level` (tile instances).
fn spatial_instances<S: Scalar>(factors: &Factors<S>, level: usize) -> S {
    let mut acc = S::constant(1.0);
    for j in level + 1..NUM_LEVELS {
        for d in Dim::ALL {
            acc = acc * factors.spatial(j, d);
        }
    }
    acc
}

/// Spatial factors at `level` over dimensions that do not index `t`: the
/// fan-out over which one access of `t` is shared (broadcast or reduced).
pub fn spatial_sharing<S: Scalar>(factors: &Factors<S>, level: usize, t: Tensor) -> S {
    let mut acc = S::constant(1.0);
    for d in Dim::ALL {
        if !t.relevant(d) {
            acc = acc * factors.spatial(level, d);
        }
    }
    acc
}

/// Closed-form traffic of one layer.
pub fn traffic<S: Scalar>(
    factors: &Factors<S>,
    layer: &LayerShape,
    ordering: &LoopOrdering,
    bypass: &BypassMatrix,
) -> TrafficReport<S> {
    let macs = layer.macs() as f64;
    let mut r = TrafficReport::zero(macs);
    for t in Tensor::ALL {
        for i in (0..NUM_LEVELS).filter(|&i| bypass.holds(i, t)) {
            let tile = crate::arch::tile_words(factors, layer, i, t);
            r.writes[i][t.index()] = if i == DRAM {
                tile
            } else {
                tile * spatial_instances(factors, i) * temporal_runs(factors, ordering, i, t)
            };
        }
        for i in (0..NUM_LEVELS).filter(|&i| bypass.holds(i, t)) {
            let shared = spatial_sharing(factors, i, t);
            let source = match bypass.next_inner(i, t) {
                None => S::constant(macs),
                Some(j) => r.writes[j][t.index()],
            };
            r.reads[i][t.index()] = source / shared;
            if t == Tensor::O {
                r.updates[i][t.index()] = source / shared;
            }
        }
    }
    r
}

/// Latency and energy of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfEstimate<S> {
    pub latency: S,
    pub energy: S,
    pub compute_latency: S,
    pub mem_latency: [S; NUM_LEVELS],
    /// Energy of each memory level; compute energy is `energy` minus their sum.
    pub level_energy: [S; NUM_LEVELS],
    pub compute_energy: S,
}

impl<S: Scalar> PerfEstimate<S> {
    pub fn edp(&self) -> S {
        self.energy * self.latency
    }

    pub fn value(&self) -> PerfEstimate<f64> {
        PerfEstimate {
            latency: self.latency.value(),
            energy: self.energy.value(),
            compute_latency: self.compute_latency.value(),
            mem_latency: self.mem_latency.map(|x| x.value()),
            level_energy: self.level_energy.map(|x| x.value()),
            compute_energy: self.compute_energy.value(),
        }
    }
}

/// Compute and per-level memory latencies; the layer takes as long as the
/// slowest of them.
pub fn latency<S: Scalar>(
    report: &TrafficReport<S>,
    factors: &Factors<S>,
    template: &ArchTemplate,
    hw: &HardwareParams<S>,
) -> (S, S, [S; NUM_LEVELS]) {
    let compute = S::constant(report.macs) / factors.spatial_product();
    let mut mem = [S::constant(0.0); NUM_LEVELS];
    let mut total = compute;
    for (i, m) in mem.iter_mut().enumerate() {
        *m = report.accesses(i) / template.bandwidth(hw, i);
        total = total.max(*m);
    }
    (total, compute, mem)
}

/// `MACs * EPA_PE + sum_i Accesses(i) * EPA(i)`, returning the total, the
/// compute term and each level's term.
pub fn energy<S: Scalar>(
    report: &TrafficReport<S>,
    template: &ArchTemplate,
    hw: &HardwareParams<S>,
) -> (S, S, [S; NUM_LEVELS]) {
    let compute = S::constant(report.macs * template.epa.pe);
    let mut levels = [S::constant(0.0); NUM_LEVELS];
    let mut total = compute;
    for (i, e) in levels.iter_mut().enumerate() {
        *e = report.accesses(i) * template.epa(hw, i);
        total = total + *e;
    }
    (total, compute, levels)
}

pub fn evaluate_layer<S: Scalar>(
    factors: &Factors<S>,
    layer: &LayerShape,
    ordering: &LoopOrdering,
    template: &ArchTemplate,
    hw: &HardwareParams<S>,
) -> (TrafficReport<S>, PerfEstimate<S>) {
    let report = traffic(factors, layer, ordering, &template.bypass);
    let (lat, compute_latency, mem_latency) = latency(&report, factors, template, hw);
    let (en, compute_energy, level_energy) = energy(&report, template, hw);
    let perf = PerfEstimate {
        latency: lat,
        energy: en,
        compute_latency,
        mem_latency,
        level_energy,
        compute_energy,
    };
    (report, perf)
}

/// `(sum repeat * E) * (sum repeat * L)`.
pub fn network_edp<S: Scalar>(estimates: &[(S, S)], repeats: &[u64]) -> S {
    assert_eq!(estimates.len(), repeats.len());
    let mut e = S::constant(0.0);
    let mut l = S::constant(0.0);
    for (&(energy, latency), &r) in estimates.iter().zip(repeats) {
        e = e + energy * r as f64;
        l = l + latency * r as f64;
    }
    e * l
}

/// Softmax weights over the inverse EDPs of a layer's candidate orderings.
pub fn ordering_weights<S: Scalar>(candidates: &[(S, S)]) -> Vec<S> {
    let logits: Vec<S> = candidates.iter().map(|&(e, l)| (e * l).recip()).collect();
    softmax(&logits)
}

/// Network EDP where each layer's energy and latency are softmax-weighted
/// mixtures over its candidate orderings.
pub fn softmax_ordering_loss<S: Scalar>(per_layer: &[Vec<(S, S)>], repeats: &[u64]) -> S {
    let mixed: Vec<(S, S)> = per_layer
        .iter()
        .map(|cands| {
            let w = ordering_weights(cands);
            let mut e = S::constant(0.0);
            let mut l = S::constant(0.0);
            for (wi, &(ei, li)) in w.iter().zip(cands) {
                e = e + *wi * ei;
                l = l + *wi * li;
            }
            (e, l)
        })
        .collect();
    network_edp(&mixed, repeats)
}

/// `sum max(1 - f, 0)` over every factor, derived DRAM factors included.
pub fn penalty<S: Scalar>(factors: &Factors<S>) -> S {
    let mut acc = S::constant(0.0);
    for (_, f) in factors.values() {
        acc = acc + (S::constant(1.0) - f).max_const(0.0);
    }
    acc
}

/// How loop orderings enter the continuous objective.
#[derive(Clone, Copy, Debug)]
pub enum OrderingObjective<'a> {
    /// One fixed ordering per layer.
    Fixed(&'a [LoopOrdering]),
    /// Softmax mixture over WS, IS and OS applied uniformly to all levels.
    Softmax,
}

/// Continuous network objective split into its two terms.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<S> {
    pub edp: S,
    pub penalty: S,
    pub hardware: HardwareParams<S>,
}

/// Builds every layer's factor tensor from the concatenated free vector.
pub fn layer_factors<S: Scalar>(free: &[S], network: &Network) -> Vec<Factors<S>> {
    let per = crate::mapping::FREE_PER_LAYER;
    assert_eq!(free.len(), per * network.len(), "free vector length");
    network
        .layers()
        .iter()
        .enumerate()
        .map(|(l, nl)| Factors::from_free(&free[l * per..(l + 1) * per], &nl.shape))
        .collect()
}

/// Network EDP under the minimal hardware of the current (continuous)
/// mappings, plus the validity penalty. Hardware enters through EPA and
/// bandwidth, so the whole expression is one differentiable function of the
/// mapping factors.
pub fn network_objective<S: Scalar>(
    free: &[S],
    network: &Network,
    template: &ArchTemplate,
    objective: OrderingObjective<'_>,
) -> LossParts<S> {
    let factors = layer_factors(free, network);
    let pairs: Vec<_> = factors
        .iter()
        .zip(network.layers())
        .map(|(f, nl)| (*f, nl.shape))
        .collect();
    let hw = hardware_requirements(&pairs, &template.bypass);
    let repeats = network.repeats();
    let edp = match objective {
        OrderingObjective::Fixed(orderings) => {
            assert_eq!(orderings.len(), network.len());
            let est: Vec<(S, S)> = pairs
                .iter()
                .zip(orderings)
                .map(|((f, layer), o)| {
                    let (_, p) = evaluate_layer(f, layer, o, template, &hw);
                    (p.energy, p.latency)
                })
                .collect();
            network_edp(&est, &repeats)
        }
        OrderingObjective::Softmax => {
            let per_layer: Vec<Vec<(S, S)>> = pairs
                .iter()
                .map(|(f, layer)| {
                    Order::ALL
                        .iter()
                        .map(|&o| {
                            let (_, p) = evaluate_layer(f, layer, &LoopOrdering::uniform(o), template, &hw);
                            (p.energy, p.latency)
                        })
                        .collect()
                })
                .collect();
            softmax_ordering_loss(&per_layer, &repeats)
        }
    };
    let mut pen = S::constant(0.0);
    for f in &factors {
        pen = pen + penalty(f);
    }
    LossParts {
        edp,
        penalty: pen,
        hardware: hw,
    }
}

/// Result of evaluating integer mappings on a concrete accelerator.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkEvaluation {
    pub edp: f64,
    pub energy: f64,
    pub latency: f64,
    pub layers: Vec<PerfEstimate<f64>>,
    pub traffic: Vec<TrafficReport<f64>>,
    pub arch: ArchConfig,
}

fn check_mappings(mappings: &[LayerMapping], network: &Network) -> Result<()> {
    if mappings.len() != network.len() {
        return Err(Error::Validation(format!(
            "{} mappings for {} layers",
            mappings.len(),
            network.len()
        )));
    }
    for (m, nl) in mappings.iter().zip(network.layers()) {
        if m.layer != nl.shape {
            return Err(Error::Validation(format!(
                "mapping is for layer {}, network has {}",
                m.layer, nl.shape
            )));
        }
    }
    Ok(())
}

/// Evaluates mappings on a given accelerator (no fit check).
pub fn evaluate_on_arch(mappings: &[LayerMapping], network: &Network, arch: &ArchConfig) -> Result<NetworkEvaluation> {
    check_mappings(mappings, network)?;
    let hw = arch.params();
    let mut layers = Vec::with_capacity(mappings.len());
    let mut traffic_reports = Vec::with_capacity(mappings.len());
    for m in mappings {
        let (t, p) = evaluate_layer(&m.factors, &m.layer, &m.ordering, &arch.template, &hw);
        layers.push(p);
        traffic_reports.push(t);
    }
    let repeats = network.repeats();
    let energy: f64 = layers.iter().zip(&repeats).map(|(p, &r)| p.energy * r as f64).sum();
    let latency: f64 = layers.iter().zip(&repeats).map(|(p, &r)| p.latency * r as f64).sum();
    let est: Vec<(f64, f64)> = layers.iter().map(|p| (p.energy, p.latency)).collect();
    Ok(NetworkEvaluation {
        edp: network_edp(&est, &repeats),
        energy,
        latency,
        layers,
        traffic: traffic_reports,
        arch: arch.clone(),
    })
}

/// Infers the minimal (KiB-finalized) hardware for the mappings and
/// evaluates them on it.
pub fn evaluate_network(mappings: &[LayerMapping], network: &Network, template: &ArchTemplate) -> Result<NetworkEvaluation> {
    check_mappings(mappings, network)?;
    let arch = crate::arch::infer_min_hw(template, mappings)?;
    evaluate_on_arch(mappings, network, &arch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::uniform_mapping;
    use approx::assert_relative_eq;

    fn l0() -> LayerShape {
        LayerShape::new([1, 1, 2, 2, 2, 2, 1])
    }

    #[test]
    fn weight_refills_depend_on_dram_ordering() {
        let layer = l0();
        let m = uniform_mapping(&layer);
        let b = BypassMatrix::default();
        let ws = traffic(&m.factors, &layer, &LoopOrdering::uniform(Order::WeightStationary), &b);
        assert_eq!(ws.writes[2][Tensor::W.index()], 16.0);
        let os = traffic(&m.factors, &layer, &LoopOrdering::uniform(Order::OutputStationary), &b);
        assert_eq!(os.writes[2][Tensor::W.index()], 4.0);
    }

    #[test]
    fn accumulator_updates_reduced_over_rows() {
        let layer = LayerShape::new([1, 1, 2, 2, 4, 2, 1]);
        let mut f = uniform_mapping(&layer).factors;
        f.spatial[1][Dim::C.index()] = 2.0;
        let f = crate::mapping::derive_dram_factors(&f, &layer);
        let r = traffic(&f, &layer, &LoopOrdering::default(), &BypassMatrix::default());
        assert_eq!(r.updates[1][Tensor::O.index()], layer.macs() as f64 / 2.0);
    }

    #[test]
    fn reads_cascade_from_inner_writes() {
        let layer = LayerShape::new([3, 1, 4, 2, 4, 4, 1]);
        let mut f = uniform_mapping(&layer).factors;
        f.spatial[1][Dim::C.index()] = 2.0;
        f.spatial[2][Dim::K.index()] = 2.0;
        f.temporal[1][Dim::P.index()] = 2.0;
        f.temporal[2][Dim::R.index()] = 3.0;
        let f = crate::mapping::derive_dram_factors(&f, &layer);
        let b = BypassMatrix::default();
        let r = traffic(&f, &layer, &LoopOrdering::default(), &b);
        for t in Tensor::ALL {
            for i in 0..NUM_LEVELS {
                if let (true, Some(j)) = (b.holds(i, t), b.next_inner(i, t)) {
                    assert_eq!(r.reads[i][t.index()], r.writes[j][t.index()] / spatial_sharing(&f, i, t));
                }
                if !b.holds(i, t) {
                    assert_eq!(r.writes[i][t.index()] + r.reads[i][t.index()] + r.updates[i][t.index()], 0.0);
                }
            }
        }
        assert_eq!(r.reads[0][Tensor::W.index()], layer.macs() as f64);
    }

    #[test]
    fn latency_is_slowest_component() {
        let t = ArchTemplate::default();
        let hw = HardwareParams { pe_side: 2.0, acc_words: 1.0, sp_words: 1.0 };
        let mut r = TrafficReport::<f64>::zero(16.0);
        r.reads[3][0] = 80.0;
        let mut f = Factors::<f64>::ones();
        f.spatial[1][Dim::C.index()] = 2.0;
        f.spatial[2][Dim::K.index()] = 2.0;
        let (lat, compute, mem) = latency(&r, &f, &t, &hw);
        assert_eq!(compute, 4.0);
        assert_eq!(mem[3], 10.0);
        assert_eq!(lat, 10.0);
    }

    #[test]
    fn energy_examples() {
        let t = ArchTemplate::default();
        let hw = HardwareParams { pe_side: 1.0, acc_words: 1.0, sp_words: 1.0 };
        assert_relative_eq!(energy(&TrafficReport::<f64>::zero(10.0), &t, &hw).0, 5.61, max_relative = 1e-15);
        let mut r = TrafficReport::<f64>::zero(0.0);
        r.reads[3][1] = 100.0;
        assert_eq!(energy(&r, &t, &hw).0, 10000.0);
    }

    #[test]
    fn edp_composition() {
        assert_eq!(network_edp(&[(2.0, 5.0), (3.0, 7.0)], &[1, 1]), 60.0);
        assert_eq!(network_edp(&[(2.0, 5.0), (3.0, 7.0)], &[2, 2]), 240.0);
        assert_eq!(network_edp(&[(3.0, 4.0)], &[1]), 12.0);
    }

    #[test]
    fn softmax_weights() {
        let w = ordering_weights(&[(1.0, 2.0), (2.0, 1.0), (0.5, 4.0)]);
        for x in &w {
            assert_relative_eq!(*x, 1.0 / 3.0, max_relative = 1e-15);
        }
        let w = ordering_weights(&[(1.0, 1.0), (1e-3, 1e-3), (1.0, 1.0)]);
        assert!(w[1] > 0.999_999);
        let w = ordering_weights(&[(0.9, 1.1), (1.3, 0.6), (2.0, 0.25)]);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, max_relative = 1e-15);
        assert!(w.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn penalty_examples() {
        let mut f = Factors::<f64>::ones();
        f.temporal[1][0] = 0.5;
        f.temporal[1][1] = 1.2;
        f.temporal[2][0] = 0.9;
        assert_relative_eq!(penalty(&f), 0.6, max_relative = 1e-12);
        assert_eq!(penalty(&Factors::<f64>::ones()), 0.0);
        let layer = LayerShape::new([1, 1, 12, 1, 1, 1, 1]);
        let mut g = Factors::<f64>::ones();
        g.temporal[1][Dim::P.index()] = 24.0;
        assert_eq!(penalty(&crate::mapping::derive_dram_factors(&g, &layer)), 0.5);
    }

    #[test]
    fn single_layer_network_edp_is_e_times_l() {
        let layer = LayerShape::new([3, 3, 4, 4, 2, 2, 1]);
        let net = Network::from_layers("one", &[(layer, 1)]).unwrap();
        let m = vec![uniform_mapping(&layer)];
        let eval = evaluate_network(&m, &net, &ArchTemplate::default()).unwrap();
        assert_eq!(eval.edp, eval.layers[0].energy * eval.layers[0].latency);
        let twice = Network::from_layers("two", &[(layer, 2)]).unwrap();
        let eval2 = evaluate_network(&m, &twice, &ArchTemplate::default()).unwrap();
        assert_relative_eq!(eval2.edp, 4.0 * eval.edp, max_relative = 1e-14);
    }

    #[test]
    fn continuous_objective_matches_integer_evaluation_on_exact_hardware() {
        let layer = LayerShape::new([1, 1, 8, 8, 8, 8, 1]);
        let net = Network::from_layers("n", &[(layer, 1)]).unwrap();
        let m = uniform_mapping(&layer);
        let t = ArchTemplate::default();
        let parts = network_objective(&m.free_values(), &net, &t, OrderingObjective::Fixed(&[m.ordering]));
        let hw = parts.hardware;
        let (_, p) = evaluate_layer(&m.factors, &layer, &m.ordering, &t, &hw);
        assert_eq!(parts.edp, p.energy * p.latency);
        assert_eq!(parts.penalty, 0.0);
    }
}
