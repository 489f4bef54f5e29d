//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on a runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::arch::{infer_min_hw, ArchTemplate};
use crate::correction::{
    self, generate_synthetic, load_samples, spearman, write_loss_curve, write_samples, CorrectionModel, Residual,
    TrainConfig,
};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::mapping::{random_mapping, LayerMapping, LoopOrdering};
use crate::oracle::{correlate, oracle_layer, write_correlation_csv, Correlation};
use crate::perfmodel::{evaluate_layer, evaluate_on_arch};
use crate::search::{random_search, run_gd, OrderingStrategy, SearchConfig, SearchTrace};
use crate::workload::{parse_workload, Network};

/// Caps the worker threads used by search and correlation.
pub const THREADS_ENV: &str = "ONELOOP_THREADS";

pub const CORRELATION_SCHEMA: &str = "# schema: oneloop-correlation/v1";

#[derive(Parser, Debug)]
#[command(name = "oneloop", version, about = "Analytical model and gradient co-search for DNN accelerators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Co-search mappings and hardware by gradient descent.
    Search(SearchArgs),
    /// Compare the analytical model with the enumeration oracle on random mappings.
    Correlate(CorrelateArgs),
    /// Evaluate a design bundle on a workload.
    Evaluate(EvaluateArgs),
    /// Train a latency-correction model from measured samples.
    TrainCorrection(TrainArgs),
    /// Write synthetic measured samples for a workload.
    GenSamples(GenSamplesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    None,
    Random,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub arch_template: Option<PathBuf>,
    /// Search configuration TOML; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<OrderingStrategy>,
    /// Gradient-descent start points.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Descent steps per start point.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub round_every: Option<usize>,
    /// Evaluation budget, shared by the baseline.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum, default_value_t = Baseline::None)]
    pub baseline: Baseline,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also evaluate every trace entry with the oracle.
    #[arg(long)]
    pub oracle_check: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub arch_template: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    /// Correction checkpoint; adds corrected latency to the report.
    #[arg(long)]
    pub correction: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub arch_template: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Checkpoint path; the loss curve goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenSamplesArgs {
    #[arg(long)]
    pub workload: PathBuf,
    #[arg(long)]
    pub arch_template: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    /// zero, structured or constant:<factor>.
    #[arg(long, default_value = "structured")]
    pub residual: Residual,
    /// Standard deviation of log-space noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seed: u64,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    outputs: Vec<OutputFile>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Recorder {
    command: &'static str,
    args: Vec<String>,
    started: u128,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    fn new(command: &'static str, args: &[OsString]) -> Self {
        Recorder {
            command,
            args: args.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
            started: now_ms(),
            outputs: Vec::new(),
        }
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(self, manifest: &Path, config: serde_json::Value, seed: u64) -> Result<()> {
        let base = manifest.parent().unwrap_or(Path::new(""));
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(OutputFile {
                    path: p.strip_prefix(base).unwrap_or(p).display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = RunManifest {
            command: self.command.to_string(),
            args: self.args,
            config,
            seed,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs,
        };
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(manifest, text).map_err(|e| Error::io(manifest, e))
    }
}

fn read_workload(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_workload(&text)
}

fn read_template(path: Option<&Path>) -> Result<ArchTemplate> {
    path.map_or_else(|| Ok(ArchTemplate::default()), ArchTemplate::load)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn show_config<T: Serialize>(config: &T) -> Result<serde_json::Value> {
    let v = serde_json::to_value(config)?;
    eprintln!("config: {v}");
    Ok(v)
}

fn trace_csv(traces: &[(&str, &SearchTrace)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    SearchTrace::write_csv(&mut buf, traces)?;
    Ok(buf)
}

fn search_config(args: &SearchArgs) -> Result<SearchConfig> {
    let mut c = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text)?
        }
        None => SearchConfig::default(),
    };
    if let Some(s) = args.strategy {
        c.ordering_strategy = s;
    }
    if let Some(n) = args.seeds {
        c.n_start_points = n;
    }
    if let Some(n) = args.steps {
        c.steps_per_start = n;
    }
    if let Some(n) = args.round_every {
        c.rounding_period = n;
    }
    if args.budget.is_some() {
        c.budget = args.budget;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    c.oracle_check |= args.oracle_check;
    c.validate()?;
    Ok(c)
}

fn cmd_search(args: &SearchArgs, argv: &[OsString]) -> Result<()> {
    let network = read_workload(&args.workload)?;
    let template = read_template(args.arch_template.as_deref())?;
    let config = search_config(args)?;
    let snapshot = show_config(&serde_json::json!({
        "search": config,
        "template": template,
        "baseline": format!("{:?}", args.baseline).to_lowercase(),
    }))?;
    create_dir(&args.out)?;
    let mut rec = Recorder::new("search", argv);

    let result = run_gd(&network, &template, &config)?;
    let best = result
        .best()
        .ok_or_else(|| Error::Validation("search recorded no evaluations".into()))?;
    let mut traces = vec![("gd", &result.trace)];
    let baseline;
    if args.baseline == Baseline::Random {
        let budget = config.budget.unwrap_or_else(|| result.trace.evaluations());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        baseline = random_search(&network, &template, budget, &mut rng)?;
        traces.push(("random", &baseline));
    }

    rec.write(args.out.join("search_trace.csv"), &trace_csv(&traces)?)?;
    let design = Design::new(best.arch.clone(), &best.mappings, Some(best.model_edp));
    rec.write(args.out.join("best_design.txt"), design.to_toml()?.as_bytes())?;

    let mut summary = String::new();
    let final_edp = result.final_edp().unwrap_or(f64::NAN);
    summary.push_str(&format!("workload: {}\n", network.name));
    summary.push_str(&format!("strategy: {}\n", config.ordering_strategy));
    summary.push_str(&format!("seed: {}\n", config.seed));
    summary.push_str(&format!("evaluations: {}\n", result.trace.evaluations()));
    summary.push_str(&format!("start_edp: {:e}\n", result.start_edp.unwrap_or(f64::NAN)));
    summary.push_str(&format!("final_edp: {final_edp:e}\n"));
    summary.push_str(&format!("improvement_vs_start: {:.3}\n", result.improvement().unwrap_or(f64::NAN)));
    summary.push_str(&format!("best_arch: {}\n", best.arch));
    if let Some((_, t)) = traces.get(1) {
        let r = t.final_best_edp().unwrap_or(f64::NAN);
        summary.push_str(&format!("random_evaluations: {}\n", t.evaluations()));
        summary.push_str(&format!("random_final_edp: {r:e}\n"));
        summary.push_str(&format!("gd_vs_random: {:.3}\n", r / final_edp));
    }
    print!("{summary}");
    rec.write(args.out.join("summary.txt"), summary.as_bytes())?;
    rec.finish(&args.out.join("manifest.json"), snapshot, config.seed)
}

struct CorrelationRow {
    layer: usize,
    ordering: LoopOrdering,
    fields: Correlation,
}

fn field_of<'a>(c: &'a Correlation, name: &str) -> &'a crate::oracle::FieldComparison {
    c.fields.iter().find(|f| f.field == name).expect("field present")
}

fn cmd_correlate(args: &CorrelateArgs, argv: &[OsString]) -> Result<()> {
    let network = read_workload(&args.workload)?;
    let template = read_template(args.arch_template.as_deref())?;
    let snapshot = show_config(&serde_json::json!({
        "samples": args.samples,
        "seed": args.seed,
        "template": template,
    }))?;
    if network.is_empty() {
        return Err(Error::Validation("workload has no layers".into()));
    }
    create_dir(&args.out)?;
    let mut rec = Recorder::new("correlate", argv);

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let orderings = LoopOrdering::all();
    let drawn: Vec<(usize, LayerMapping)> = (0..args.samples)
        .map(|i| {
            let l = i % network.len();
            let mut m = random_mapping(&network.layers()[l].shape, template.pe_side_cap, &mut rng);
            m.ordering = orderings[rng.gen_range(0..orderings.len())];
            (l, m)
        })
        .collect();
    let rows: Vec<CorrelationRow> = drawn
        .par_iter()
        .map(|(l, m)| {
            let arch = infer_min_hw(&template, std::slice::from_ref(m))?;
            let model = evaluate_layer(&m.factors, &m.layer, &m.ordering, &template, &arch.params());
            let oracle = oracle_layer(m, &arch)?;
            Ok(CorrelationRow {
                layer: *l,
                ordering: m.ordering,
                fields: correlate((&model.0, &model.1), (&oracle.0, &oracle.1)),
            })
        })
        .collect::<Result<_>>()?;

    let mut buf = Vec::new();
    writeln!(buf, "{CORRELATION_SCHEMA}").expect("write to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "mapping_id",
            "layer",
            "ordering",
            "model_latency",
            "oracle_latency",
            "model_energy",
            "oracle_energy",
            "model_edp",
            "oracle_edp",
            "max_rel_error",
        ])?;
        for (i, r) in rows.iter().enumerate() {
            let mut row = vec![i.to_string(), r.layer.to_string(), r.ordering.to_string()];
            for name in ["latency", "energy", "edp"] {
                let f = field_of(&r.fields, name);
                row.push(f.model.to_string());
                row.push(f.oracle.to_string());
            }
            row.push(r.fields.max_rel_error().to_string());
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<correlation>", e))?;
    }
    rec.write(args.out.join("correlation.csv"), &buf)?;
    let fields_path = args.out.join("correlation_fields.csv");
    let indexed: Vec<(usize, Correlation)> = rows.iter().enumerate().map(|(i, r)| (i, r.fields.clone())).collect();
    write_correlation_csv(&fields_path, &indexed)?;
    rec.outputs.push(fields_path);

    let mut summary = format!("samples: {}\n", rows.len());
    for name in ["latency", "energy", "edp"] {
        if rows.is_empty() {
            summary.push_str(&format!("{name}_mae_percent: undefined (no samples)\n"));
        } else {
            let mae = rows.iter().map(|r| field_of(&r.fields, name).rel_error).sum::<f64>() / rows.len() as f64;
            summary.push_str(&format!("{name}_mae_percent: {}\n", 100.0 * mae));
        }
    }
    let worst = rows.iter().map(|r| r.fields.max_rel_error()).fold(0.0, f64::max);
    summary.push_str(&format!("max_rel_error_any_field: {worst}\n"));
    print!("{summary}");
    rec.write(args.out.join("summary.txt"), summary.as_bytes())?;
    rec.finish(&args.out.join("manifest.json"), snapshot, args.seed)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let network = read_workload(&args.workload)?;
    let design = Design::load(&args.design)?;
    let correction = args.correction.as_deref().map(CorrectionModel::load).transpose()?;
    let mappings = design.checked_mappings(&network)?;
    let eval = evaluate_on_arch(&mappings, &network, &design.arch)?;
    let hw = design.arch.params();
    println!("arch: {}", design.arch);
    let mut corrected_total = 0.0;
    for (i, ((m, p), nl)) in mappings.iter().zip(&eval.layers).zip(network.layers()).enumerate() {
        let mut line = format!(
            "layer {i} ({}) x{}: ordering {} latency {} cycles energy {} pJ",
            m.layer, nl.repeat, m.ordering, p.latency, p.energy
        );
        if let Some(model) = &correction {
            let feats = correction::features(&m.layer, &m.factors, &m.ordering, &hw);
            let c = model.corrected_latency(p.latency, &feats);
            corrected_total += c.latency * nl.repeat as f64;
            line.push_str(&format!(" corrected_latency {} cycles", c.latency));
            if !c.in_domain {
                line.push_str(" (outside training domain)");
            }
        }
        println!("{line}");
    }
    println!("network: latency {} cycles energy {} pJ edp {}", eval.latency, eval.energy, eval.edp);
    if correction.is_some() {
        println!(
            "network corrected: latency {} cycles edp {}",
            corrected_total,
            eval.energy * corrected_total
        );
    }
    Ok(())
}

fn loss_curve_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.loss.csv"))
}

fn cmd_train(args: &TrainArgs, argv: &[OsString]) -> Result<()> {
    let template = read_template(args.arch_template.as_deref())?;
    let dataset = load_samples(&args.samples)?;
    for (line, why) in &dataset.rejected {
        eprintln!("rejected row at line {line}: {why}");
    }
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let snapshot = show_config(&serde_json::json!({
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "test_fraction": config.test_fraction,
        "hidden": config.hidden,
        "seed": config.seed,
    }))?;
    let report = correction::train(&dataset, &template, &config)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut rec = Recorder::new("train-correction", argv);
    rec.write(args.out.clone(), report.model.to_json()?.as_bytes())?;
    let mut curve = Vec::new();
    write_loss_curve(&mut curve, &report.curve)?;
    rec.write(loss_curve_path(&args.out), &curve)?;

    let measured: Vec<f64> = report.test.iter().map(|s| s.measured_latency).collect();
    let analytical: Vec<f64> = report.test.iter().map(|s| s.analytical_latency(&template)).collect();
    let corrected: Vec<f64> = report
        .test
        .iter()
        .zip(&analytical)
        .map(|(s, &a)| report.model.corrected_latency(a, &s.features(&template)).latency)
        .collect();
    println!(
        "samples: {} train, {} test, {} rejected",
        report.train.len(),
        report.test.len(),
        dataset.rejected.len()
    );
    if let Some(last) = report.curve.last() {
        println!("final loss: train {} test {}", last.train, last.test);
    }
    println!(
        "held-out spearman: analytical {:.4} corrected {:.4}",
        spearman(&analytical, &measured),
        spearman(&corrected, &measured)
    );
    let manifest = args.out.with_file_name(format!(
        "{}.manifest.json",
        args.out.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy())
    ));
    rec.finish(&manifest, snapshot, args.seed)
}

fn cmd_gen_samples(args: &GenSamplesArgs, argv: &[OsString]) -> Result<()> {
    let network = read_workload(&args.workload)?;
    let template = read_template(args.arch_template.as_deref())?;
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be non-negative, got {}", args.noise)));
    }
    let snapshot = show_config(&serde_json::json!({
        "n": args.n,
        "residual": format!("{:?}", args.residual),
        "noise": args.noise,
        "seed": args.seed,
    }))?;
    let samples = generate_synthetic(&network, &template, args.n, args.residual, args.noise, args.seed)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut rec = Recorder::new("gen-samples", argv);
    let mut buf = Vec::new();
    write_samples(&mut buf, &samples)?;
    rec.write(args.out.clone(), &buf)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    let manifest = args.out.with_file_name(format!(
        "{}.manifest.json",
        args.out.file_stem().map_or_else(|| "samples".into(), |s| s.to_string_lossy())
    ));
    rec.finish(&manifest, snapshot, args.seed)
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // A pool may already exist when `run` is called twice in one process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        _ => Err(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    let argv = &argv[1..];
    let result = match &cli.command {
        Command::Search(a) => cmd_search(a, argv),
        Command::Correlate(a) => cmd_correlate(a, argv),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::TrainCorrection(a) => cmd_train(a, argv),
        Command::GenSamples(a) => cmd_gen_samples(a, argv),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
