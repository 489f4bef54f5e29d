use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gd::best_orderings;
use super::start::heuristic_start_mappings;
use super::trace::{EntryKind, Pending, SearchTrace};
use super::{Adam, OrderingStrategy, SearchConfig};
use crate::arch::{capacity_requirements, ArchConfig, HardwareParams};
use crate::error::Result;
use crate::gradient::{grad, Scalar};
use crate::mapping::{derive_dram_factors, nearest_divisor, Factors, LayerMapping, LoopOrdering, DRAM, EPSILON};
use crate::perfmodel::{evaluate_layer, evaluate_on_arch, network_edp, penalty};
use crate::workload::{Dim, LayerShape, Network, NUM_DIMS};

/// Temporal descent variables per layer (levels 1 and 2).
const TEMPORAL_PER_LAYER: usize = 2 * NUM_DIMS;

#[derive(Clone, Debug, PartialEq)]
pub struct RefineResult {
    pub start: Vec<LayerMapping>,
    pub mappings: Vec<LayerMapping>,
    pub start_edp: f64,
    pub final_edp: f64,
    pub trace: SearchTrace,
}

fn with_temporal<S: Scalar>(spatial: &Factors<f64>, temporal: &[S], layer: &LayerShape) -> Factors<S> {
    let mut f = spatial.map(S::constant);
    for (k, d) in Dim::ALL.into_iter().enumerate() {
        f.temporal[1][d.index()] = temporal[k];
        f.temporal[2][d.index()] = temporal[NUM_DIMS + k];
    }
    derive_dram_factors(&f, layer)
}

fn temporal_values(f: &Factors<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Dim::ALL.iter().map(|&d| f.temporal(1, d)).collect();
    out.extend(Dim::ALL.iter().map(|&d| f.temporal(2, d)));
    out
}

/// Rounds temporal factors innermost first, keeping spatial factors.
fn round_temporal(f: &Factors<f64>, layer: &LayerShape) -> Factors<f64> {
    let mut out = *f;
    for d in Dim::ALL {
        let spatial: f64 = (0..=DRAM).map(|i| f.spatial(i, d)).product();
        let mut remaining = (layer.extent(d) as f64 / spatial).round() as u64;
        for level in 1..DRAM {
            let v = nearest_divisor(f.temporal(level, d), remaining, u64::MAX);
            out.temporal[level][d.index()] = v as f64;
            remaining /= v;
        }
        out.temporal[DRAM][d.index()] = remaining as f64;
    }
    out
}

/// Moves prime factors of temporal loops out to DRAM until `m` fits.
///
/// Always terminates: with every level-1/2 temporal factor at 1 only the
/// spatial factors remain, which fit by construction of the start point.
pub fn repair_to_fit(m: &mut LayerMapping, arch: &ArchConfig) {
    let bypass = &arch.template.bypass;
    loop {
        let cap = capacity_requirements(&m.factors, &m.layer, bypass);
        let Some(level) = (1..DRAM).find(|&l| cap.total[l] > arch.capacity_words(l)) else {
            return;
        };
        let mut pick: Option<(usize, Dim)> = None;
        for l in 1..=level {
            for d in Dim::ALL {
                let v = m.factors.temporal(l, d);
                if v > 1.0 && pick.map_or(true, |(pl, pd)| v > m.factors.temporal(pl, pd)) {
                    pick = Some((l, d));
                }
            }
        }
        let Some((l, d)) = pick else {
            return;
        };
        let v = m.factors.temporal(l, d) as u64;
        let p = (2..=v).find(|p| v % p == 0).unwrap();
        m.factors.temporal[l][d.index()] /= p as f64;
        m.factors.temporal[DRAM][d.index()] *= p as f64;
    }
}

struct LossContext<'a> {
    shapes: &'a [LayerShape],
    spatial: &'a [Factors<f64>],
    repeats: &'a [u64],
    arch: &'a ArchConfig,
    caps: [f64; 2],
}

impl LossContext<'_> {
    fn loss<S: Scalar>(&self, v: &[S], orderings: &[LoopOrdering], scale: f64) -> S {
        let p = self.arch.params();
        let hw = HardwareParams {
            pe_side: S::constant(p.pe_side),
            acc_words: S::constant(p.acc_words),
            sp_words: S::constant(p.sp_words),
        };
        let template = &self.arch.template;
        let mut est = Vec::with_capacity(self.shapes.len());
        let mut pen = S::constant(0.0);
        for (l, layer) in self.shapes.iter().enumerate() {
            let f = with_temporal(&self.spatial[l], &v[l * TEMPORAL_PER_LAYER..(l + 1) * TEMPORAL_PER_LAYER], layer);
            let (_, perf) = evaluate_layer(&f, layer, &orderings[l], template, &hw);
            est.push((perf.energy, perf.latency));
            pen = pen + penalty(&f);
            let cap = capacity_requirements(&f, layer, &template.bypass);
            for (k, c) in self.caps.iter().enumerate() {
                pen = pen + (cap.total[k + 1] / *c - 1.0).max_const(0.0);
            }
        }
        network_edp(&est, self.repeats) / scale + pen
    }
}

/// Gradient descent over temporal factors only on a fixed accelerator.
///
/// Spatial factors stay at the heuristic mapper's values for `arch`. The
/// loss adds `max(C/capacity - 1, 0)` per buffer level, so descent is pushed
/// back inside the fixed capacities; after each rounding any remaining
/// overflow is repaired by moving factors out to DRAM. The best design seen
/// (start point included) is returned.
pub fn refine_mappings_fixed_hw(network: &Network, arch: &ArchConfig, config: &SearchConfig) -> Result<RefineResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = heuristic_start_mappings(network, arch, &mut rng);
    let start_eval = evaluate_on_arch(&start, network, arch)?;
    let mut trace = SearchTrace::default();
    trace.push(Pending {
        kind: EntryKind::Start,
        start: 0,
        step: 0,
        mappings: start.clone(),
        arch: arch.clone(),
        model_edp: start_eval.edp,
        oracle_edp: None,
        cost: 1,
    });

    let repeats = network.repeats();
    let shapes = network.shapes();
    let spatial: Vec<Factors<f64>> = start.iter().map(|m| m.factors).collect();
    let mut orderings: Vec<LoopOrdering> = start.iter().map(|m| m.ordering).collect();
    let mut x: Vec<f64> = start.iter().flat_map(|m| temporal_values(&m.factors)).collect();
    let bounds: Vec<f64> = shapes
        .iter()
        .flat_map(|s| {
            let e: Vec<f64> = Dim::ALL.iter().map(|&d| s.extent(d) as f64).collect();
            [e.clone(), e].concat()
        })
        .collect();
    let caps = [arch.capacity_words(1), arch.capacity_words(2)];

    let ctx = LossContext {
        shapes: &shapes,
        spatial: &spatial,
        repeats: &repeats,
        arch,
        caps,
    };

    let mut adam = Adam::new(x.len(), config.learning_rate, config.beta1, config.beta2);
    let mut scale = start_eval.edp;
    let mut best = (start_eval.edp, start.clone());
    for step in 1..=config.steps_per_start {
        let g = grad(|v| ctx.loss(v, &orderings, scale), &x);
        let gradient: Vec<f64> = g.gradient.iter().map(|d| if d.is_finite() { *d } else { 0.0 }).collect();
        adam.step(&mut x, &gradient);
        for (xi, hi) in x.iter_mut().zip(&bounds) {
            *xi = xi.clamp(EPSILON, *hi);
        }
        if step % config.rounding_period == 0 || step == config.steps_per_start {
            let mut mappings: Vec<LayerMapping> = shapes
                .iter()
                .enumerate()
                .map(|(l, layer)| {
                    let f = with_temporal(&spatial[l], &x[l * TEMPORAL_PER_LAYER..(l + 1) * TEMPORAL_PER_LAYER], layer);
                    let mut m = LayerMapping::new(*layer, round_temporal(&f, layer), orderings[l]);
                    repair_to_fit(&mut m, arch);
                    m
                })
                .collect();
            if config.ordering_strategy == OrderingStrategy::Iterative {
                best_orderings(&mut mappings, &repeats, arch);
                orderings = mappings.iter().map(|m| m.ordering).collect();
            }
            let eval = evaluate_on_arch(&mappings, network, arch)?;
            if eval.edp < best.0 {
                best = (eval.edp, mappings.clone());
            }
            x = mappings.iter().flat_map(|m| temporal_values(&m.factors)).collect();
            adam.reset();
            scale = eval.edp;
            trace.push(Pending {
                kind: EntryKind::Refine,
                start: 0,
                step,
                mappings,
                arch: arch.clone(),
                model_edp: eval.edp,
                oracle_edp: None,
                cost: 1,
            });
        }
    }
    Ok(RefineResult {
        start,
        mappings: best.1,
        start_edp: start_eval.edp,
        final_edp: best.0,
        trace,
    })
}
