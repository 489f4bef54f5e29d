//! Gradient search against random search under the same evaluation budget.

use oneloop_dse::arch::ArchTemplate;
use oneloop_dse::search::{random_search, run_gd, SearchConfig};
use oneloop_dse::workload::parse_workload;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> oneloop_dse::Result<()> {
    let template = ArchTemplate::default();
    for (name, text) in [
        ("toy_cnn", include_str!("../workloads/toy_cnn.txt")),
        ("matmul3", include_str!("../workloads/matmul3.txt")),
    ] {
        let net = parse_workload(text)?;
        for seed in 0..3 {
            let config = SearchConfig {
                seed,
                budget: Some(300),
                ..SearchConfig::default()
            };
            let gd = run_gd(&net, &template, &config)?;
            let rnd = random_search(&net, &template, 300, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let (g, r) = (gd.final_edp().unwrap(), rnd.final_best_edp().unwrap());
            println!(
                "{name} seed {seed}: gradient {g:.4e} ({} evals), random {r:.4e} ({} evals), ratio {:.2}",
                gd.trace.evaluations(),
                rnd.evaluations(),
                r / g
            );
        }
    }
    Ok(())
}
