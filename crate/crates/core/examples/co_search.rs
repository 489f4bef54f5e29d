//! Gradient co-search of mappings and hardware on the toy CNN.

use oneloop_dse::arch::ArchTemplate;
use oneloop_dse::search::{run_gd, SearchConfig};
use oneloop_dse::workload::parse_workload;

fn main() -> oneloop_dse::Result<()> {
    let net = parse_workload(include_str!("../workloads/toy_cnn.txt"))?;
    let config = SearchConfig {
        seed: 2,
        ..SearchConfig::default()
    };
    let result = run_gd(&net, &ArchTemplate::default(), &config)?;
    for e in &result.trace.entries {
        println!(
            "#{:<3} {:<14} start {} step {:>4}  EDP {:.4e}  best {:.4e}  {}",
            e.index,
            e.kind.name(),
            e.start,
            e.step,
            e.model_edp,
            e.best_so_far,
            e.arch
        );
    }
    let best = result.best().expect("non-empty trace");
    println!("improvement over start point: {:.2}x", result.improvement().unwrap_or(1.0));
    for m in &best.mappings {
        println!("  {} {}", m.ordering, m.layer);
    }
    Ok(())
}
