//! Reverse-mode gradient of network EDP against central differences.

use oneloop_dse::arch::ArchTemplate;
use oneloop_dse::gradient::{fd_check, FdStep};
use oneloop_dse::mapping::{free_slots, FactorKind, LoopOrdering};
use oneloop_dse::perfmodel::{network_objective, OrderingObjective};
use oneloop_dse::workload::parse_workload;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> oneloop_dse::Result<()> {
    let net = parse_workload(include_str!("../workloads/matmul3.txt"))?;
    let template = ArchTemplate::default();
    let orderings = vec![LoopOrdering::default(); net.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // log-uniform continuous point inside each factor's range
    let mut x = Vec::new();
    for nl in net.layers() {
        for s in free_slots() {
            let mut hi = nl.shape.extent(s.dim) as f64;
            if s.kind == FactorKind::Spatial {
                hi = hi.min(template.pe_side_cap as f64);
            }
            x.push(rng.gen_range(0.0..=hi.ln()).exp());
        }
    }
    let base = network_objective(&x, &net, &template, OrderingObjective::Fixed(&orderings));
    println!("EDP {:.4e}, penalty {:.4}", base.edp, base.penalty);
    let report = fd_check(
        |v| {
            let p = network_objective(v, &net, &template, OrderingObjective::Fixed(&orderings));
            p.edp / base.edp + p.penalty
        },
        &x,
        FdStep::Relative(1e-4),
    );
    for c in report.coordinates.iter().filter(|c| !c.excluded).take(10) {
        println!("x[{:>2}] = {:>7.3}  analytic {:>13.6e}  numeric {:>13.6e}", c.index, x[c.index], c.analytic, c.numeric);
    }
    println!(
        "{} coordinates, {} straddle a max() switch, max relative error {:.2e} ({} agree only to roundoff)",
        report.coordinates.len(),
        report.excluded_count(),
        report.max_rel_error_above_noise(),
        report.noise_level_count()
    );
    Ok(())
}
