//! Trains the latency-correction network on synthetic residuals and compares
//! rank correlation with the analytical model alone.

use oneloop_dse::arch::ArchTemplate;
use oneloop_dse::correction::{generate_synthetic, spearman, train, Dataset, Residual, TrainConfig};
use oneloop_dse::workload::parse_workload;

fn main() -> oneloop_dse::Result<()> {
    let net = parse_workload(include_str!("../workloads/toy_cnn.txt"))?;
    let template = ArchTemplate::default();
    let samples = generate_synthetic(&net, &template, 600, Residual::Structured, 0.1, 1)?;
    let dataset = Dataset { samples, rejected: vec![] };
    let report = train(&dataset, &template, &TrainConfig { epochs: 100, ..TrainConfig::default() })?;
    for e in report.curve.iter().step_by(10) {
        println!("epoch {:>3}  train {:.5}  test {:.5}", e.epoch, e.train, e.test);
    }
    let measured: Vec<f64> = report.test.iter().map(|s| s.measured_latency).collect();
    let analytical: Vec<f64> = report.test.iter().map(|s| s.analytical_latency(&template)).collect();
    let corrected: Vec<f64> = report
        .test
        .iter()
        .zip(&analytical)
        .map(|(s, &a)| report.model.corrected_latency(a, &s.features(&template)).latency)
        .collect();
    println!("held-out spearman, analytical only: {:.4}", spearman(&analytical, &measured));
    println!("held-out spearman, corrected:       {:.4}", spearman(&corrected, &measured));
    println!("parameters: {}", report.model.mlp.num_params());
    Ok(())
}
