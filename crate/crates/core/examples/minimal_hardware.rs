//! Smallest accelerator that runs a set of mappings, and which mapping sets
//! each parameter.

use oneloop_dse::arch::{capacity_requirements, infer_min_hw, pe_side_requirement, ArchTemplate};
use oneloop_dse::mapping::random_mapping;
use oneloop_dse::workload::{parse_workload, Network};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> oneloop_dse::Result<()> {
    let net: Network = parse_workload(include_str!("../workloads/toy_cnn.txt"))?;
    let template = ArchTemplate::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mappings: Vec<_> = net.layers().iter().map(|l| random_mapping(&l.shape, 32, &mut rng)).collect();

    for (i, m) in mappings.iter().enumerate() {
        let cap = capacity_requirements(&m.factors, &m.layer, &template.bypass);
        println!(
            "layer {i}: array side {:>3}, accumulator {:>8} words, scratchpad {:>8} words",
            pe_side_requirement(&m.factors),
            cap.total[1],
            cap.total[2]
        );
    }
    let arch = infer_min_hw(&template, &mappings)?;
    println!("minimal hardware: {arch}");
    println!("  before KiB rounding: {} + {} words", arch.acc_words, arch.sp_words);
    for m in &mappings {
        arch.check_fits(m)?;
    }
    println!("every mapping fits");
    Ok(())
}
