//! Closed-form model against loop-nest enumeration on random mappings.

use oneloop_dse::arch::{infer_min_hw, ArchTemplate};
use oneloop_dse::mapping::{random_mapping, LoopOrdering};
use oneloop_dse::oracle::{correlate, oracle_layer};
use oneloop_dse::perfmodel::evaluate_layer;
use oneloop_dse::workload::parse_workload;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> oneloop_dse::Result<()> {
    let net = parse_workload(include_str!("../workloads/tiny.txt"))?;
    let template = ArchTemplate::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let all = LoopOrdering::all();
    let mut worst = 0.0f64;
    let mut n = 0;
    for nl in net.layers() {
        for _ in 0..50 {
            let mut m = random_mapping(&nl.shape, 16, &mut rng);
            m.ordering = all[rng.gen_range(0..all.len())];
            let arch = infer_min_hw(&template, std::slice::from_ref(&m))?;
            let (mt, mp) = evaluate_layer(&m.factors, &m.layer, &m.ordering, &template, &arch.params());
            let (ot, op) = oracle_layer(&m, &arch)?;
            let c = correlate((&mt, &mp), (&ot, &op));
            worst = worst.max(c.max_rel_error());
            n += 1;
        }
    }
    println!("{n} mappings compared field by field, max relative error {worst:e}");
    Ok(())
}
