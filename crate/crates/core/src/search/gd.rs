use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::start::{heuristic_start_mappings, random_hardware, reject_start_point};
use super::trace::{EntryKind, Pending, SearchTrace, TraceEntry};
use super::{Adam, BudgetMode, OrderingStrategy, SearchConfig};
use crate::arch::{infer_min_hw, ArchConfig, ArchTemplate};
use crate::error::{Error, Result};
use crate::gradient::grad;
use crate::mapping::{free_slots, round_mapping, Factors, FactorKind, LayerMapping, LoopOrdering, Order, EPSILON, FREE_PER_LAYER};
use crate::oracle::oracle_network;
use crate::perfmodel::{evaluate_layer, evaluate_network, network_objective, ordering_weights, OrderingObjective};
use crate::workload::Network;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub trace: SearchTrace,
    /// Lowest model EDP among accepted start points.
    pub start_edp: Option<f64>,
}

impl SearchResult {
    pub fn best(&self) -> Option<&TraceEntry> {
        self.trace.best()
    }

    pub fn final_edp(&self) -> Option<f64> {
        self.trace.final_best_edp()
    }

    /// Start-point EDP divided by final EDP.
    pub fn improvement(&self) -> Option<f64> {
        Some(self.start_edp? / self.final_edp()?)
    }
}

/// `[lower, upper]` for every free variable of the network.
fn bounds(network: &Network, template: &ArchTemplate) -> Vec<(f64, f64)> {
    let slots = free_slots();
    network
        .layers()
        .iter()
        .flat_map(|nl| {
            slots.iter().map(move |s| {
                let extent = nl.shape.extent(s.dim) as f64;
                let upper = match s.kind {
                    FactorKind::Spatial => extent.min(template.pe_side_cap as f64),
                    FactorKind::Temporal => extent,
                };
                (EPSILON, upper.max(EPSILON))
            })
        })
        .collect()
}

fn concat_free(mappings: &[LayerMapping]) -> Vec<f64> {
    mappings.iter().flat_map(|m| m.free_values()).collect()
}

fn round_all(x: &[f64], network: &Network, template: &ArchTemplate) -> Vec<Factors<f64>> {
    network
        .layers()
        .iter()
        .enumerate()
        .map(|(l, nl)| {
            let f = Factors::from_free(&x[l * FREE_PER_LAYER..(l + 1) * FREE_PER_LAYER], &nl.shape);
            round_mapping(&f, &nl.shape, template.pe_side_cap)
        })
        .collect()
}

/// Coordinate pass over layers: each layer tries every per-level ordering
/// combination and keeps one only if it strictly lowers network EDP on
/// `arch`. Returns the candidates tried.
pub fn best_orderings(mappings: &mut [LayerMapping], repeats: &[u64], arch: &ArchConfig) -> usize {
    let hw = arch.params();
    let layer_el = |m: &LayerMapping, o: &LoopOrdering| {
        let (_, p) = evaluate_layer(&m.factors, &m.layer, o, &arch.template, &hw);
        (p.energy, p.latency)
    };
    let mut el: Vec<(f64, f64)> = mappings.iter().map(|m| layer_el(m, &m.ordering)).collect();
    let mut tried = 0;
    for l in 0..mappings.len() {
        let r = repeats[l] as f64;
        let e_rest: f64 = el.iter().zip(repeats).enumerate().filter(|(k, _)| *k != l).map(|(_, (x, &rk))| x.0 * rk as f64).sum();
        let l_rest: f64 = el.iter().zip(repeats).enumerate().filter(|(k, _)| *k != l).map(|(_, (x, &rk))| x.1 * rk as f64).sum();
        let mut best = (e_rest + r * el[l].0) * (l_rest + r * el[l].1);
        for o in LoopOrdering::all() {
            tried += 1;
            let (e, lat) = layer_el(&mappings[l], &o);
            let edp = (e_rest + r * e) * (l_rest + r * lat);
            if edp < best {
                best = edp;
                mappings[l].ordering = o;
                el[l] = (e, lat);
            }
        }
    }
    tried
}

/// Per layer, the uniform ordering with the largest softmax weight.
fn softmax_orderings(mappings: &mut [LayerMapping], arch: &ArchConfig) {
    let hw = arch.params();
    for m in mappings.iter_mut() {
        let cands: Vec<(f64, f64)> = Order::ALL
            .iter()
            .map(|&o| {
                let (_, p) = evaluate_layer(&m.factors, &m.layer, &LoopOrdering::uniform(o), &arch.template, &hw);
                (p.energy, p.latency)
            })
            .collect();
        let w = ordering_weights(&cands);
        let mut k = 0;
        for i in 1..w.len() {
            if w[i] > w[k] {
                k = i;
            }
        }
        m.ordering = LoopOrdering::uniform(Order::ALL[k]);
    }
}

fn evaluation(
    kind: EntryKind,
    start: usize,
    step: usize,
    mappings: Vec<LayerMapping>,
    network: &Network,
    template: &ArchTemplate,
    config: &SearchConfig,
    cost: usize,
) -> Result<Pending> {
    let eval = evaluate_network(&mappings, network, template)?;
    let oracle_edp = if config.oracle_check {
        oracle_network(&mappings, network, &eval.arch).ok().map(|o| o.edp)
    } else {
        None
    };
    Ok(Pending {
        kind,
        start,
        step,
        mappings,
        arch: eval.arch,
        model_edp: eval.edp,
        oracle_edp,
        cost,
    })
}

/// Projected Adam from one start point, rounding periodically.
fn descend(
    network: &Network,
    template: &ArchTemplate,
    config: &SearchConfig,
    start_index: usize,
    start: &[LayerMapping],
) -> Result<Vec<Pending>> {
    let bounds = bounds(network, template);
    let mut x = concat_free(start);
    let mut orderings: Vec<LoopOrdering> = start.iter().map(|m| m.ordering).collect();
    let mut adam = Adam::new(x.len(), config.learning_rate, config.beta1, config.beta2);
    let softmax = config.ordering_strategy == OrderingStrategy::Softmax;
    let objective_at = |x: &[f64], orderings: &[LoopOrdering]| {
        let obj = if softmax {
            OrderingObjective::Softmax
        } else {
            OrderingObjective::Fixed(orderings)
        };
        network_objective(x, network, template, obj).edp
    };
    let mut scale = objective_at(&x, &orderings);
    let mut out = Vec::new();
    for step in 1..=config.steps_per_start {
        let g = {
            let orderings = &orderings;
            grad(
                |v| {
                    let obj = if softmax {
                        OrderingObjective::Softmax
                    } else {
                        OrderingObjective::Fixed(orderings)
                    };
                    let parts = network_objective(v, network, template, obj);
                    parts.edp / scale + parts.penalty
                },
                &x,
            )
        };
        let gradient: Vec<f64> = g.gradient.iter().map(|d| if d.is_finite() { *d } else { 0.0 }).collect();
        adam.step(&mut x, &gradient);
        for (xi, (lo, hi)) in x.iter_mut().zip(&bounds) {
            *xi = xi.clamp(*lo, *hi);
        }

        if step % config.rounding_period == 0 || step == config.steps_per_start {
            let rounded = round_all(&x, network, template);
            let mut mappings: Vec<LayerMapping> = rounded
                .into_iter()
                .zip(network.layers())
                .zip(&orderings)
                .map(|((f, nl), o)| LayerMapping::new(nl.shape, f, *o))
                .collect();
            let mut cost = 1;
            match config.ordering_strategy {
                OrderingStrategy::None => {}
                OrderingStrategy::Iterative => {
                    let arch = infer_min_hw(template, &mappings)?;
                    let tried = best_orderings(&mut mappings, &network.repeats(), &arch);
                    if config.budget_mode == BudgetMode::WithOrderingSearch {
                        cost += tried;
                    }
                }
                OrderingStrategy::Softmax => {
                    let arch = infer_min_hw(template, &mappings)?;
                    softmax_orderings(&mut mappings, &arch);
                }
            }
            orderings = mappings.iter().map(|m| m.ordering).collect();
            x = concat_free(&mappings);
            adam.reset();
            scale = objective_at(&x, &orderings);
            out.push(evaluation(EntryKind::Round, start_index, step, mappings, network, template, config, cost)?);
        }
    }
    Ok(out)
}

/// Gradient-descent co-search.
///
/// Start candidates are drawn one after another from the seeded generator:
/// random hardware, the heuristic mapper on it, then the minimal hardware of
/// those mappings. A candidate more than 10x worse than the best so far is
/// rejected. Every candidate and every rounding event is one evaluation.
/// Trajectories run in parallel and are appended to the trace in start
/// order, so the trace is identical for any thread count.
pub fn run_gd(network: &Network, template: &ArchTemplate, config: &SearchConfig) -> Result<SearchResult> {
    config.validate()?;
    if network.is_empty() {
        return Err(Error::Validation("network has no layers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let budget = config.budget.unwrap_or(usize::MAX);
    let mut pending = Vec::new();
    let mut accepted: Vec<(usize, Vec<LayerMapping>)> = Vec::new();
    let mut best_start: Option<f64> = None;
    for _ in 0..config.max_start_attempts {
        if accepted.len() == config.n_start_points || pending.len() >= budget {
            break;
        }
        let hw = random_hardware(template, &mut rng);
        let mappings = heuristic_start_mappings(network, &hw, &mut rng);
        let mut p = evaluation(EntryKind::Start, accepted.len(), 0, mappings, network, template, config, 1)?;
        if reject_start_point(p.model_edp, best_start) {
            p.kind = EntryKind::RejectedStart;
        } else {
            best_start = Some(best_start.map_or(p.model_edp, |b: f64| b.min(p.model_edp)));
            accepted.push((accepted.len(), p.mappings.clone()));
        }
        pending.push(p);
    }

    let trajectories: Vec<Result<Vec<Pending>>> = accepted
        .par_iter()
        .map(|(i, m)| descend(network, template, config, *i, m))
        .collect();
    for t in trajectories {
        pending.extend(t?);
    }

    let mut trace = SearchTrace::default();
    let mut spent = 0;
    for p in pending {
        if spent + p.cost > budget {
            break;
        }
        spent += p.cost;
        trace.push(p);
    }
    Ok(SearchResult {
        trace,
        start_edp: best_start,
    })
}
