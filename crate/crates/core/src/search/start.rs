use rand::seq::SliceRandom;
use rand::Rng;

use crate::arch::{ArchConfig, ArchTemplate, KIB};
use crate::mapping::{derive_dram_factors, nearest_divisor, uniform_mapping, LayerMapping, LoopOrdering, DRAM};
use crate::workload::{Dim, LayerShape, Network};

/// A start candidate is rejected when its EDP exceeds this multiple of the
/// best start so far.
pub const REJECT_FACTOR: f64 = 10.0;

pub fn reject_start_point(candidate_edp: f64, best_edp: Option<f64>) -> bool {
    best_edp.is_some_and(|b| candidate_edp > REJECT_FACTOR * b)
}

const MIN_BUFFER: u64 = KIB;
const MAX_BUFFER: u64 = 1024 * KIB;

fn log_uniform_kib<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    let (lo, hi) = ((MIN_BUFFER as f64).ln(), (MAX_BUFFER as f64).ln());
    let bytes = rng.gen_range(lo..=hi).exp();
    ((bytes / KIB as f64).round() as u64).clamp(1, MAX_BUFFER / KIB) * KIB
}

/// PE side a power of two up to the template cap; buffers log-uniform in
/// [1 KiB, 1 MiB].
pub fn random_hardware<R: Rng + ?Sized>(template: &ArchTemplate, rng: &mut R) -> ArchConfig {
    let max_exp = 63 - template.pe_side_cap.leading_zeros();
    let side = 1u64 << rng.gen_range(0..=max_exp);
    let acc = log_uniform_kib(rng);
    let sp = log_uniform_kib(rng);
    ArchConfig::with_capacities(template, side, acc, sp)
}

fn grow_temporal(m: &mut LayerMapping, arch: &ArchConfig, level: usize, order: &[Dim]) {
    loop {
        let mut changed = false;
        for &d in order {
            let others = m.factors.total(d) / m.factors.temporal(DRAM, d);
            let remaining = (m.layer.extent(d) as f64 / others).round() as u64;
            if remaining <= 1 {
                continue;
            }
            let p = (2..=remaining).find(|p| remaining % p == 0).unwrap();
            let mut trial = m.clone();
            trial.factors.temporal[level][d.index()] *= p as f64;
            trial.factors = derive_dram_factors(&trial.factors, &m.layer);
            if arch.fits(&trial) {
                *m = trial;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

fn heuristic_layer<R: Rng + ?Sized>(layer: &LayerShape, arch: &ArchConfig, rng: &mut R) -> LayerMapping {
    let side = arch.pe_side.min(arch.template.pe_side_cap);
    let mut m = uniform_mapping(layer);
    m.factors.spatial[1][Dim::C.index()] = nearest_divisor(side as f64, layer.c, side) as f64;
    m.factors.spatial[2][Dim::K.index()] = nearest_divisor(side as f64, layer.k, side) as f64;
    m.factors = derive_dram_factors(&m.factors, layer);
    if !arch.fits(&m) {
        return uniform_mapping(layer);
    }
    let mut order = Dim::ALL.to_vec();
    order.shuffle(rng);
    grow_temporal(&mut m, arch, 1, &order);
    grow_temporal(&mut m, arch, 2, &order);
    m.ordering = LoopOrdering::default();
    m
}

/// Greedy mapper used in place of an exact solver for start points.
///
/// Per layer: the C and K spatial factors take the largest divisor not above
/// the array side, then level-1 and then level-2 temporal factors grow one
/// prime at a time, round-robin over a shuffled dimension order, while the
/// mapping still fits `arch`. Orderings are WS. If even the spatial factors
/// do not fit, the layer gets the uniform mapping.
pub fn heuristic_start_mappings<R: Rng + ?Sized>(network: &Network, arch: &ArchConfig, rng: &mut R) -> Vec<LayerMapping> {
    network
        .layers()
        .iter()
        .map(|nl| heuristic_layer(&nl.shape, arch, rng))
        .collect()
}
