//! Fixed WS ordering against the iterative and softmax ordering searches.

use oneloop_dse::arch::ArchTemplate;
use oneloop_dse::search::{run_gd, OrderingStrategy, SearchConfig};
use oneloop_dse::workload::parse_workload;

fn main() -> oneloop_dse::Result<()> {
    let net = parse_workload(include_str!("../workloads/toy_cnn.txt"))?;
    let template = ArchTemplate::default();
    for seed in 0..3 {
        let mut line = format!("seed {seed}:");
        for strategy in [OrderingStrategy::None, OrderingStrategy::Iterative, OrderingStrategy::Softmax] {
            let config = SearchConfig {
                seed,
                ordering_strategy: strategy,
                ..SearchConfig::ordering_study()
            };
            let r = run_gd(&net, &template, &config)?;
            line.push_str(&format!("  {strategy} {:.4e}", r.final_edp().unwrap_or(f64::NAN)));
        }
        println!("{line}");
    }
    Ok(())
}
