//! Mapping-only descent on an accelerator whose sizes are fixed.
//!
//! With the ordering held at WS the heuristic start is usually a corner the
//! temporal descent cannot leave; letting the ordering move opens it up.

use oneloop_dse::arch::{ArchConfig, ArchTemplate, KIB};
use oneloop_dse::search::{refine_mappings_fixed_hw, OrderingStrategy, SearchConfig};
use oneloop_dse::workload::parse_workload;

fn main() -> oneloop_dse::Result<()> {
    let net = parse_workload(include_str!("../workloads/toy_cnn.txt"))?;
    let template = ArchTemplate::default();
    for (acc, sp) in [(32, 128), (1, 8)] {
        let arch = ArchConfig::with_capacities(&template, 16, acc * KIB, sp * KIB);
        println!("hardware {arch}");
        for strategy in [OrderingStrategy::None, OrderingStrategy::Iterative] {
            let config = SearchConfig {
                steps_per_start: 600,
                rounding_period: 100,
                ordering_strategy: strategy,
                ..SearchConfig::default()
            };
            let r = refine_mappings_fixed_hw(&net, &arch, &config)?;
            let steps: Vec<String> = r.trace.entries.iter().map(|e| format!("{:.3e}", e.model_edp)).collect();
            println!("  {:<9} {}", strategy.to_string(), steps.join(" "));
            println!("  {:<9} heuristic {:.4e} -> refined {:.4e} ({:.2}x)", strategy.to_string(), r.start_edp, r.final_edp, r.start_edp / r.final_edp);
        }
    }
    Ok(())
}
