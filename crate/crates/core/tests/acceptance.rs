//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use oneloop_dse::arch::{capacity_requirements, hardware_requirements, infer_min_hw, pe_side_requirement, ArchTemplate};
use oneloop_dse::correction::{generate_synthetic, spearman, CorrectionModel, Dataset, Residual, TrainConfig};
use oneloop_dse::gradient::{fd_check, FdStep};
use oneloop_dse::mapping::{free_slots, random_mapping, FactorKind, LoopOrdering};
use oneloop_dse::oracle::{correlate, oracle_layer};
use oneloop_dse::perfmodel::{evaluate_layer, network_objective, OrderingObjective};
use oneloop_dse::search::{random_search, run_gd, OrderingStrategy, SearchConfig, SearchResult, SearchTrace};
use oneloop_dse::workload::{parse_workload, LayerShape, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BUDGET: usize = 300;

fn workload(name: &str) -> Network {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("workloads").join(name);
    parse_workload(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn geomean(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

/// Search runs shared between criteria.
#[derive(Default)]
struct Runs {
    gd: BTreeMap<(String, OrderingStrategy, u64), SearchResult>,
    random: BTreeMap<(String, u64), SearchTrace>,
}

impl Runs {
    fn gd(&mut self, name: &str, strategy: OrderingStrategy, seed: u64) -> &SearchResult {
        self.gd.entry((name.to_string(), strategy, seed)).or_insert_with(|| {
            let config = SearchConfig {
                seed,
                ordering_strategy: strategy,
                budget: Some(BUDGET),
                ..SearchConfig::default()
            };
            run_gd(&workload(name), &ArchTemplate::default(), &config).unwrap()
        })
    }

    fn random(&mut self, name: &str, seed: u64) -> &SearchTrace {
        self.random.entry((name.to_string(), seed)).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            random_search(&workload(name), &ArchTemplate::default(), BUDGET, &mut rng).unwrap()
        })
    }
}

fn oracle_layers() -> Vec<LayerShape> {
    vec![
        LayerShape::new([1, 1, 2, 2, 2, 2, 1]),
        LayerShape::new([3, 3, 4, 4, 2, 4, 1]),
        LayerShape::new([1, 1, 8, 1, 8, 8, 1]),
        LayerShape::new([3, 1, 4, 2, 4, 2, 2]).with_strides(2, 1),
        LayerShape::new([2, 2, 4, 4, 4, 4, 1]),
        LayerShape::new([1, 3, 2, 6, 6, 4, 2]).with_strides(1, 2),
    ]
}

fn criterion_1() -> Outcome {
    let template = ArchTemplate::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let orderings = LoopOrdering::all();
    let (mut mappings, mut evaluations, mut worst) = (0, 0, 0.0f64);
    for (li, layer) in oracle_layers().iter().enumerate() {
        for _ in 0..100 {
            let mut m = random_mapping(layer, 8, &mut rng);
            m.ordering = orderings[rng.gen_range(0..orderings.len())];
            let arch = infer_min_hw(&template, std::slice::from_ref(&m)).unwrap();
            // first three layers: every ordering combination
            let cands: Vec<LoopOrdering> = if li < 3 { orderings.clone() } else { vec![m.ordering] };
            for o in cands {
                m.ordering = o;
                let (mt, mp) = evaluate_layer(&m.factors, layer, &o, &template, &arch.params());
                let (ot, op) = oracle_layer(&m, &arch).unwrap();
                worst = worst.max(correlate((&mt, &mp), (&ot, &op)).max_rel_error());
                evaluations += 1;
            }
            mappings += 1;
        }
    }
    Outcome {
        pass: worst < 1e-9 && mappings >= 500,
        detail: format!("{mappings} mappings, {evaluations} (mapping, ordering) pairs, max rel error {worst:e}"),
    }
}

fn criterion_2() -> Outcome {
    let template = ArchTemplate::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut worst, mut checked, mut excluded, mut noise) = (0.0f64, 0, 0, 0);
    for name in ["toy_cnn.txt", "matmul3.txt"] {
        let net = workload(name);
        let all = LoopOrdering::all();
        for _ in 0..20 {
            let mut x = Vec::new();
            for nl in net.layers() {
                for s in free_slots() {
                    let e = nl.shape.extent(s.dim) as f64;
                    let hi = match s.kind {
                        FactorKind::Spatial => e.min(template.pe_side_cap as f64),
                        FactorKind::Temporal => e,
                    };
                    x.push(rng.gen_range(0.0..=hi.ln()).exp());
                }
            }
            let orderings: Vec<LoopOrdering> = net.layers().iter().map(|_| all[rng.gen_range(0..all.len())]).collect();
            let scale = network_objective(&x, &net, &template, OrderingObjective::Fixed(&orderings)).edp;
            let report = fd_check(
                |v| {
                    let p = network_objective(v, &net, &template, OrderingObjective::Fixed(&orderings));
                    p.edp / scale + p.penalty
                },
                &x,
                FdStep::Relative(1e-4),
            );
            worst = worst.max(report.max_rel_error_above_noise());
            noise += report.noise_level_count();
            excluded += report.excluded_count();
            checked += report.coordinates.len() - report.excluded_count();
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!(
            "40 points, {checked} coordinates checked, {excluded} excluded at max() switches, \
             {noise} agree only to rounding noise, max rel error {worst:e}"
        ),
    }
}

fn criterion_3(runs: &mut Runs) -> Outcome {
    let mut ratios = Vec::new();
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["toy_cnn.txt", "matmul3.txt"] {
        let (mut g, mut r) = (Vec::new(), Vec::new());
        for seed in 0..3 {
            let gd = runs.gd(name, OrderingStrategy::None, seed).final_edp().unwrap();
            let rnd = runs.random(name, seed).final_best_edp().unwrap();
            g.push(gd);
            r.push(rnd);
            ratios.push(rnd / gd);
        }
        ok &= median(&g) <= median(&r);
        detail.push(format!("{name}: median gd {:.3e} vs random {:.3e}", median(&g), median(&r)));
    }
    let gm = geomean(&ratios);
    Outcome {
        pass: ok && gm >= 1.5,
        detail: format!("{}; geomean improvement {gm:.2}x", detail.join(", ")),
    }
}

fn criterion_4(runs: &mut Runs) -> Outcome {
    let imp: Vec<f64> = (0..5)
        .map(|seed| runs.gd("toy_cnn.txt", OrderingStrategy::None, seed).improvement().unwrap())
        .collect();
    let m = median(&imp);
    let shown: Vec<String> = imp.iter().map(|x| format!("{x:.2}")).collect();
    Outcome {
        pass: m >= 2.0,
        detail: format!("toy_cnn improvements over start [{}], median {m:.2}x", shown.join(", ")),
    }
}

fn criterion_5(runs: &mut Runs) -> Outcome {
    let (mut all_le, mut strict) = (true, 0);
    let mut pairs = Vec::new();
    for seed in 0..3 {
        let ws = runs.gd("toy_cnn.txt", OrderingStrategy::None, seed).final_edp().unwrap();
        let it = runs.gd("toy_cnn.txt", OrderingStrategy::Iterative, seed).final_edp().unwrap();
        all_le &= it <= ws;
        strict += usize::from(it < ws);
        pairs.push(format!("{:.3e}/{:.3e}", it, ws));
    }
    Outcome {
        pass: all_le && strict >= 1,
        detail: format!("iterative/WS per seed [{}], {strict} strict", pairs.join(", ")),
    }
}

fn criterion_6(runs: &mut Runs) -> Outcome {
    let template = ArchTemplate::default();
    let traces: Vec<&SearchTrace> = runs
        .gd
        .values()
        .map(|r| &r.trace)
        .chain(runs.random.values())
        .collect();
    let (mut entries, mut failures) = (0, Vec::new());
    for t in traces {
        for e in &t.entries {
            entries += 1;
            let arch = &e.arch;
            if let Some(m) = e.mappings.iter().find(|m| !arch.fits(m)) {
                failures.push(format!("entry {}: {}", e.index, arch.check_fits(m).unwrap_err()));
                continue;
            }
            let pairs: Vec<_> = e.mappings.iter().map(|m| (m.factors, m.layer)).collect();
            let req = hardware_requirements(&pairs, &template.bypass);
            let acc: Vec<f64> = e.mappings.iter().map(|m| capacity_requirements(&m.factors, &m.layer, &template.bypass).total[1]).collect();
            let sp: Vec<f64> = e.mappings.iter().map(|m| capacity_requirements(&m.factors, &m.layer, &template.bypass).total[2]).collect();
            let side: Vec<f64> = e.mappings.iter().map(|m| pe_side_requirement(&m.factors)).collect();
            let witness = acc.contains(&arch.acc_words) && sp.contains(&arch.sp_words) && side.contains(&(arch.pe_side as f64));
            let equal = arch.acc_words == req.acc_words && arch.sp_words == req.sp_words && arch.pe_side as f64 == req.pe_side;
            if !(witness && equal) {
                failures.push(format!("entry {}: recorded {arch} is not the requirement maximum", e.index));
            }
        }
    }
    Outcome {
        pass: failures.is_empty() && entries > 0,
        detail: match failures.first() {
            None => format!("{entries} trace entries checked, 0 failures"),
            Some(f) => format!("{entries} trace entries checked, {} failures, first: {f}", failures.len()),
        },
    }
}

fn criterion_7() -> Outcome {
    let t = ArchTemplate::default();
    let net = workload("toy_cnn.txt");
    let zero = CorrectionModel::zero();
    let probe = generate_synthetic(&net, &t, 200, Residual::Zero, 0.0, 4).unwrap();
    let identity = probe.iter().all(|s| {
        let a = s.analytical_latency(&t);
        zero.corrected_latency(a, &s.features(&t)).latency.to_bits() == a.to_bits()
    });

    let samples = generate_synthetic(&net, &t, 600, Residual::Structured, 0.1, 1).unwrap();
    let dataset = Dataset { samples, rejected: vec![] };
    let config = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    let report = oneloop_dse::correction::train(&dataset, &t, &config).unwrap();
    let measured: Vec<f64> = report.test.iter().map(|s| s.measured_latency).collect();
    let analytical: Vec<f64> = report.test.iter().map(|s| s.analytical_latency(&t)).collect();
    let corrected: Vec<f64> = report
        .test
        .iter()
        .zip(&analytical)
        .map(|(s, &a)| report.model.corrected_latency(a, &s.features(&t)).latency)
        .collect();
    let (ra, rc) = (spearman(&analytical, &measured), spearman(&corrected, &measured));
    Outcome {
        pass: identity && rc - ra >= 0.02,
        detail: format!(
            "zero model bit-exact on 200 samples: {identity}; held-out spearman analytical {ra:.4} corrected {rc:.4} (gain {:.4}, {} test samples)",
            rc - ra,
            report.test.len()
        ),
    }
}

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_oneloop"))
        .env("ONELOOP_THREADS", threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn criterion_8() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let dir = |run: &str| -> PathBuf { root.path().join(run) };
    let toy = Path::new(env!("CARGO_MANIFEST_DIR")).join("workloads/toy_cnn.txt");
    let tiny = Path::new(env!("CARGO_MANIFEST_DIR")).join("workloads/tiny.txt");
    let (toy, tiny) = (toy.to_str().unwrap(), tiny.to_str().unwrap());
    let mut files = Vec::new();
    let mut errors = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "4")] {
        let d = dir(run);
        let p = |f: &str| d.join(f).to_str().unwrap().to_string();
        let steps: Vec<(Vec<String>, Vec<&str>)> = vec![
            (
                vec!["search", "--workload", toy, "--strategy", "iterative", "--seeds", "3", "--steps", "300", "--round-every", "100", "--baseline", "random", "--seed", "7", "--out", &p("search")]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                vec!["search/search_trace.csv", "search/best_design.txt", "search/summary.txt"],
            ),
            (
                vec!["correlate", "--workload", tiny, "--samples", "100", "--seed", "7", "--out", &p("corr")]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                vec!["corr/correlation.csv", "corr/correlation_fields.csv", "corr/summary.txt"],
            ),
            (
                vec!["gen-samples", "--workload", tiny, "--n", "120", "--seed", "7", "--out", &p("samples.csv")]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                vec!["samples.csv"],
            ),
            (
                vec!["train-correction", "--samples", &p("samples.csv"), "--epochs", "10", "--seed", "7", "--out", &p("model.json")]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                vec!["model.json", "model.loss.csv"],
            ),
        ];
        for (args, outs) in steps {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            if let Err(e) = run_cli(&refs, threads) {
                errors.push(format!("{}: {e}", args[0]));
            }
            if run == "a" {
                files.extend(outs);
            }
        }
    }
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dir("a").join(f)).ok() != std::fs::read(dir("b").join(f)).ok())
        .collect();
    Outcome {
        pass: errors.is_empty() && differing.is_empty(),
        detail: format!(
            "{} output files compared across reruns (1 vs 4 threads); differing {:?}; errors {:?}",
            files.len(),
            differing,
            errors
        ),
    }
}

fn main() {
    let mut runs = Runs::default();
    type Check<'a> = Box<dyn FnMut() -> Outcome + 'a>;
    let mut failed = 0;
    {
        let runs = std::cell::RefCell::new(&mut runs);
        let criteria: Vec<(&str, Duration, Check)> = vec![
            ("1 oracle equivalence", Duration::from_secs(120), Box::new(criterion_1)),
            ("2 gradient correctness", Duration::from_secs(60), Box::new(criterion_2)),
            ("3 search beats random", Duration::from_secs(600), Box::new(|| criterion_3(&mut runs.borrow_mut()))),
            ("4 start-point improvement", Duration::from_secs(300), Box::new(|| criterion_4(&mut runs.borrow_mut()))),
            ("5 loop-ordering benefit", Duration::from_secs(600), Box::new(|| criterion_5(&mut runs.borrow_mut()))),
            ("6 minimal-hardware soundness", Duration::from_secs(60), Box::new(|| criterion_6(&mut runs.borrow_mut()))),
            ("7 correction identity and benefit", Duration::from_secs(180), Box::new(criterion_7)),
            ("8 determinism", Duration::from_secs(60), Box::new(criterion_8)),
        ];
        for (name, limit, mut check) in criteria {
            let start = Instant::now();
            let out = check();
            let took = start.elapsed();
            let pass = out.pass && took <= limit;
            failed += usize::from(!pass);
            println!(
                "[{}] criterion {name}: {} ({:.1}s, limit {}s)",
                if pass { "PASS" } else { "FAIL" },
                out.detail,
                took.as_secs_f64(),
                limit.as_secs()
            );
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
