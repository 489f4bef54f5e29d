use rand::Rng;

use super::start::random_hardware;
use super::trace::{EntryKind, Pending, SearchTrace};
use crate::arch::{ArchConfig, ArchTemplate};
use crate::error::{Error, Result};
use crate::mapping::{random_mapping, uniform_mapping, LayerMapping};
use crate::perfmodel::evaluate_network;
use crate::workload::{LayerShape, Network};

/// Hardware designs sampled by the baseline; they share the budget evenly.
pub const RANDOM_HW_DESIGNS: usize = 10;

const FIT_ATTEMPTS: usize = 50;

fn fitting_mapping<R: Rng + ?Sized>(layer: &LayerShape, hw: &ArchConfig, rng: &mut R) -> LayerMapping {
    for _ in 0..FIT_ATTEMPTS {
        let m = random_mapping(layer, hw.pe_side, rng);
        if hw.fits(&m) {
            return m;
        }
    }
    uniform_mapping(layer)
}

/// Random-search baseline: a few random hardware designs, each with random
/// valid mappings (random orderings included) that fit it. Each sample is
/// recorded with the minimal hardware of its mappings, which never exceeds
/// the sampled design. Exactly `budget` evaluations are recorded.
pub fn random_search<R: Rng + ?Sized>(
    network: &Network,
    template: &ArchTemplate,
    budget: usize,
    rng: &mut R,
) -> Result<SearchTrace> {
    if budget == 0 {
        return Err(Error::Config("random search needs a positive budget".into()));
    }
    if network.is_empty() {
        return Err(Error::Validation("network has no layers".into()));
    }
    let mut trace = SearchTrace::default();
    for h in 0..RANDOM_HW_DESIGNS {
        let share = budget / RANDOM_HW_DESIGNS + usize::from(h < budget % RANDOM_HW_DESIGNS);
        let hw = random_hardware(template, rng);
        for _ in 0..share {
            let mappings: Vec<LayerMapping> = network
                .layers()
                .iter()
                .map(|nl| fitting_mapping(&nl.shape, &hw, rng))
                .collect();
            let eval = evaluate_network(&mappings, network, template)?;
            trace.push(Pending {
                kind: EntryKind::Random,
                start: h,
                step: 0,
                mappings,
                arch: eval.arch,
                model_edp: eval.edp,
                oracle_edp: None,
                cost: 1,
            });
        }
    }
    Ok(trace)
}
