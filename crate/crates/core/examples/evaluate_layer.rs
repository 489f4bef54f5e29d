//! Closed-form traffic, latency and energy of one hand-written mapping.

use oneloop_dse::arch::{infer_min_hw, ArchTemplate, LEVEL_NAMES};
use oneloop_dse::mapping::{derive_dram_factors, uniform_mapping, LoopOrdering, Order};
use oneloop_dse::perfmodel::evaluate_layer;
use oneloop_dse::workload::{Dim, LayerShape, Tensor};

fn main() -> oneloop_dse::Result<()> {
    let layer = LayerShape::new([3, 3, 16, 16, 32, 64, 1]);
    let mut m = uniform_mapping(&layer);
    m.factors.spatial[1][Dim::C.index()] = 16.0;
    m.factors.spatial[2][Dim::K.index()] = 16.0;
    m.factors.temporal[1][Dim::P.index()] = 4.0;
    m.factors.temporal[2][Dim::Q.index()] = 8.0;
    m.factors.temporal[2][Dim::K.index()] = 2.0;
    m.factors = derive_dram_factors(&m.factors, &layer);
    m.ordering = LoopOrdering([Order::WeightStationary, Order::OutputStationary, Order::WeightStationary]);
    m.validate().into_result()?;

    let template = ArchTemplate::default();
    let arch = infer_min_hw(&template, std::slice::from_ref(&m))?;
    let (traffic, perf) = evaluate_layer(&m.factors, &layer, &m.ordering, &template, &arch.params());

    println!("layer {layer}");
    println!("ordering {}, hardware {arch}", m.ordering);
    for (i, name) in LEVEL_NAMES.iter().enumerate() {
        let cols: Vec<String> = Tensor::ALL
            .iter()
            .map(|t| {
                let k = t.index();
                format!("{}: w {} r {} u {}", t.name(), traffic.writes[i][k], traffic.reads[i][k], traffic.updates[i][k])
            })
            .collect();
        println!("{name:>12}  {}", cols.join(" | "));
    }
    println!("latency {} cycles (compute {})", perf.latency, perf.compute_latency);
    println!("energy {:.1} pJ, EDP {:.4e}", perf.energy, perf.edp());
    Ok(())
}
