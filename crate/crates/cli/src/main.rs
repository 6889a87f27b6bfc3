use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use temporal_embed::analysis::{
    dominant_component, dump_signal, freq_histogram, histogram_csv, periodic_frequencies, signal_csv, snapshot_csv,
    Component, FrequencyHistogram,
};
use temporal_embed::checkpoint::Checkpoint;
use temporal_embed::config::{DataConfig, ExperimentConfig};
use temporal_embed::data::{event_mnist_from_files, gen_synthetic, save_event_jsonl, EventSequence, SyntheticPoint};
use temporal_embed::fsio::write_atomic;
use temporal_embed::gradsuite::{run_suite, SuiteConfig};
use temporal_embed::models::{match_parameters, param_count, EmbedSpec, ModelKind, ModelParams, ModelSpec, T2vInit};
use temporal_embed::time2vec::Activation;
use temporal_embed::train::{evaluate, fit, MetricReport, OptimizerConfig, OptimizerKind, TrainData, THREADS_ENV};
use temporal_embed::Error;

#[derive(Parser)]
#[command(name = "temporal-embed", version, about = "Time2Vec and time-gated LSTM experiments")]
struct Cli {
    /// Worker threads; overrides TEMPORAL_EMBED_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the day-of-week dataset as train.jsonl and test.jsonl.
    GenSynth(GenSynthArgs),
    /// Convert an IDX image/label pair into event-sequence JSONL.
    GenEventMnist(GenEventMnistArgs),
    /// Train from a config file; flags override its fields.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a config's data.
    Eval(EvalArgs),
    /// Histogram of learned frequencies and the dominant component.
    AnalyzeFreqs(AnalyzeArgs),
    /// Tabulate the learned signal of a binary-probe checkpoint.
    DumpSignal(DumpArgs),
    /// Compare every gradient against central differences.
    GradCheck(GradArgs),
    /// Itemized parameter count, optionally matched to a reference model.
    ParamCount(ParamCountArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args)]
struct GenEventMnistArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    /// Keep only the first N converted images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = serde_name::<OptimizerKind>)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Number of periodic time2vec components.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long, value_parser = serde_name::<T2vInit>)]
    init: Option<T2vInit>,
    /// Drop the linear time2vec component.
    #[arg(long)]
    no_linear: bool,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Let the gradient sharding follow the thread count.
    #[arg(long)]
    nondeterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to config.json next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    #[arg(long, default_value_t = 365.0)]
    hi: f64,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 3)]
    hidden: usize,
    #[arg(long, default_value_t = 6)]
    length: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ParamCountArgs {
    /// Model spec as JSON; the flags below build one otherwise.
    #[arg(long, conflicts_with_all = ["model", "hidden", "k"])]
    spec: Option<PathBuf>,
    #[arg(long, required_unless_present = "spec")]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    item_dim: Option<usize>,
    /// Lower the hidden size until the count does not exceed this model's.
    #[arg(long)]
    reference_model: Option<ModelKind>,
    #[arg(long, requires = "reference_model")]
    reference_hidden: Option<usize>,
    #[arg(long, requires = "reference_model")]
    reference_k: Option<usize>,
}

/// Parses a value by its config-file spelling.
fn serde_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn report(&self) {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Data(m) => ("data", m),
            Failure::Numeric(m) => ("numeric", m),
        };
        let line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        eprintln!("error[{kind}]: {line}");
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Constraint(_) => Failure::Usage(msg),
            Error::Numeric(_) => Failure::Numeric(msg),
            _ => Failure::Data(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn write(path: &Path, text: &str) -> Outcome {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn gen_synth(a: GenSynthArgs) -> Outcome {
    let split = gen_synthetic(a.noise_rate, a.alpha, a.seed)?;
    let seqs = |pts: &[SyntheticPoint]| -> Vec<EventSequence> { pts.iter().map(|p| p.to_sequence()).collect() };
    save_event_jsonl(&seqs(&split.train), &a.out.join("train.jsonl"))?;
    save_event_jsonl(&seqs(&split.test), &a.out.join("test.jsonl"))?;
    println!(
        "wrote {} train and {} test points to {}",
        split.train.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(())
}

fn gen_event_mnist(a: GenEventMnistArgs) -> Outcome {
    let mut m = event_mnist_from_files(&a.images, &a.labels, a.threshold)?;
    if let Some(n) = a.limit {
        m.sequences.truncate(n);
    }
    save_event_jsonl(&m.sequences, &a.out)?;
    println!(
        "wrote {} sequences ({} empty images dropped) to {}",
        m.sequences.len(),
        m.dropped,
        a.out.display()
    );
    Ok(())
}

fn embed_mut<'a>(spec: &'a mut ModelSpec, flag: &str) -> Result<&'a mut EmbedSpec, Failure> {
    spec.embed
        .as_mut()
        .ok_or_else(|| usage(format!("--{flag} needs a model with a time2vec layer")))
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &TrainArgs) -> Outcome {
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = Some(v);
    }
    if a.optimizer.is_some() || a.lr.is_some() {
        let base = cfg.optimizer.unwrap_or_default();
        cfg.optimizer = Some(OptimizerConfig {
            kind: a.optimizer.unwrap_or(base.kind),
            lr: a.lr.unwrap_or(base.lr),
        });
    }
    if let Some(kind) = a.model {
        cfg.model.kind = kind;
        if !kind.uses_t2v() {
            cfg.model.embed = None;
        } else if cfg.model.embed.is_none() {
            cfg.model.embed = Some(EmbedSpec::new(a.k.unwrap_or(16)));
        }
    }
    if let Some(v) = a.hidden {
        cfg.model.hidden = v;
    }
    if let Some(k) = a.k {
        embed_mut(&mut cfg.model, "k")?.k = k;
    }
    if let Some(act) = a.activation {
        embed_mut(&mut cfg.model, "activation")?.activation = act;
    }
    if let Some(init) = a.init {
        embed_mut(&mut cfg.model, "init")?.init = init;
    }
    if a.no_linear {
        embed_mut(&mut cfg.model, "no-linear")?.include_linear = false;
    }
    if a.noise_rate.is_some() || a.alpha.is_some() {
        match &mut cfg.data {
            DataConfig::Synthetic { noise_rate, alpha } => {
                *noise_rate = a.noise_rate.unwrap_or(*noise_rate);
                *alpha = a.alpha.unwrap_or(*alpha);
            }
            _ => return Err(usage("--noise-rate and --alpha need generated synthetic data")),
        }
    }
    if a.nondeterministic {
        cfg.deterministic = false;
    }
    Ok(())
}

fn summary(report: &MetricReport) -> MetricReport {
    MetricReport {
        series: Vec::new(),
        ..report.clone()
    }
}

fn train(a: TrainArgs) -> Outcome {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    apply_overrides(&mut cfg, &a)?;
    let out = fit(&cfg, Some(&a.out))?;
    print_json(&summary(&out.report));
    Ok(())
}

fn load_params(path: &Path) -> Result<ModelParams, Failure> {
    Ok(Checkpoint::load(path)?.params()?)
}

fn eval(a: EvalArgs) -> Outcome {
    let params = load_params(&a.checkpoint)?;
    let config_path = match a.config {
        Some(p) => p,
        None => a
            .checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("config.json"),
    };
    let mut cfg = ExperimentConfig::load(&config_path)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.model = params.spec.clone();
    let cfg = cfg.resolve()?;
    let data = TrainData::load(&cfg)?;
    let e = evaluate(&params, &data, cfg.eval, cfg.seed)?;
    print_json(&MetricReport::from_eval(&e));
    Ok(())
}

#[derive(Serialize)]
struct FreqReport {
    histogram: FrequencyHistogram,
    dominant: Option<Component>,
}

fn analyze_freqs(a: AnalyzeArgs) -> Outcome {
    let params = load_params(&a.checkpoint)?;
    let t2v = params
        .t2v
        .as_ref()
        .ok_or_else(|| usage(format!("{} has no time2vec layer", params.spec.kind)))?;
    let histogram = freq_histogram(periodic_frequencies(t2v));
    write(&a.out.join("histogram.csv"), &histogram_csv(&histogram))?;
    // only the binary probe's head reads the embedding directly
    let dominant = if params.spec.kind == ModelKind::T2vDense {
        let head = params.dense.theta.data();
        let d = dump_signal(t2v, &params.dense, 0.0, 0.0, 1.0)?;
        write(&a.out.join("snapshot.csv"), &snapshot_csv(&d.snapshot))?;
        Some(dominant_component(t2v, head)?)
    } else {
        None
    };
    print_json(&FreqReport { histogram, dominant });
    Ok(())
}

fn dump(a: DumpArgs) -> Outcome {
    let params = load_params(&a.checkpoint)?;
    let t2v = match (&params.t2v, params.spec.kind) {
        (Some(t), ModelKind::T2vDense) => t,
        _ => {
            return Err(usage(format!(
                "dump-signal needs a t2v-dense checkpoint, got {}",
                params.spec.kind
            )))
        }
    };
    let d = dump_signal(t2v, &params.dense, a.lo, a.hi, a.step)?;
    write(&a.out.join("signal.csv"), &signal_csv(&d.rows))?;
    write(&a.out.join("snapshot.csv"), &snapshot_csv(&d.snapshot))?;
    println!(
        "wrote {} signal rows and {} components to {}",
        d.rows.len(),
        d.snapshot.len(),
        a.out.display()
    );
    Ok(())
}

fn grad_check(a: GradArgs) -> Outcome {
    let config = SuiteConfig {
        hidden: a.hidden,
        length: a.length,
        seeds: a.seeds,
        tolerance: a.tolerance,
        ..SuiteConfig::default()
    };
    let r = run_suite(&config)?;
    for e in &r.entries {
        println!(
            "{:<24} {:.3e} {}",
            e.name,
            e.max_rel_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} checks, max relative error {:.3e}, {:.1}s",
        r.entries.len(),
        r.max_rel_error,
        r.elapsed.as_secs_f64()
    );
    if r.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = r.failures().map(|e| e.name.as_str()).collect();
        Err(Failure::Numeric(format!(
            "gradient check failed for {}",
            names.join(", ")
        )))
    }
}

fn read_spec(path: &Path) -> Result<ModelSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid model spec: {e}")))
}

fn build_spec(kind: ModelKind, hidden: usize, k: Option<usize>, a: &ParamCountArgs) -> ModelSpec {
    let embed = kind.uses_t2v().then(|| EmbedSpec::new(k.unwrap_or(16)));
    let mut spec = match (kind, a.vocab) {
        (ModelKind::T2vDense, _) => ModelSpec::t2v_dense(embed.unwrap_or_else(|| EmbedSpec::new(16))),
        (_, Some(v)) => ModelSpec::recommender(kind, hidden, embed, v),
        (_, None) => ModelSpec::classifier(kind, hidden, embed, a.classes.unwrap_or(2)),
    };
    if let Some(d) = a.item_dim {
        spec.item_embed_dim = d;
    }
    spec
}

fn print_count(label: &str, spec: &ModelSpec) -> Result<usize, Failure> {
    let c = param_count(spec)?;
    println!("{label}: {} (hidden {})", spec.kind, spec.hidden);
    for (name, n) in &c.items {
        println!("  {name:<12} {n}");
    }
    println!("  {:<12} {}", "total", c.total);
    Ok(c.total)
}

fn count(a: ParamCountArgs) -> Outcome {
    let spec = match (&a.spec, a.model) {
        (Some(p), _) => read_spec(p)?,
        (None, Some(kind)) => build_spec(kind, a.hidden, a.k, &a),
        (None, None) => return Err(usage("either --spec or --model is required")),
    };
    spec.validate()?;
    print_count("model", &spec)?;
    if let Some(kind) = a.reference_model {
        let mut reference = build_spec(kind, a.reference_hidden.unwrap_or(spec.hidden), a.reference_k, &a);
        reference.classes = spec.classes;
        reference.event_vocab = spec.event_vocab;
        reference.item_embed_dim = spec.item_embed_dim;
        let target = print_count("reference", &reference)?;
        let matched = match_parameters(&reference, &spec)?;
        let total = param_count(&matched)?.total;
        println!("parity hidden: {} ({total} <= {target})", matched.hidden);
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::GenEventMnist(a) => gen_event_mnist(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::AnalyzeFreqs(a) => analyze_freqs(a),
        Command::DumpSignal(a) => dump(a),
        Command::GradCheck(a) => grad_check(a),
        Command::ParamCount(a) => count(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            Failure::Usage(first.trim_start_matches("error: ").to_string()).report();
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        // before any pool exists, so nothing else reads the environment concurrently
        std::env::set_var(THREADS_ENV, n.to_string());
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code())
        }
    }
}
