//! The `groundkit` command line.
//!
//! Payloads go to stdout as JSON; progress goes to stderr; every failure is a
//! single-line `{"error": .., "detail": ..}` on stderr with exit code 1
//! (usage), 2 (data) or 3 (numeric).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::benchkit::{
    evaluate, render_table, synth_generate, Assignment, Baseline, EvalReport, NamedReport, SynthConfig,
};
use crate::data::{dataset_stats, read_dataset, write_dataset, Dataset};
use crate::error::{Error, ErrorKind, Result};
use crate::grounder::{
    load_model, predict_samples, prepare_all, save_model, train, ExperimentConfig, GroundingModel,
    LossKind, LossObjective, Vocab,
};
use crate::numcore::grad_check;
use crate::rulekit::{filter_sample, parse_rules, read_qa_file, run_pipeline, FilterVerdict, RuleSet, SplitSpec};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "groundkit", version, about = "Human-centric commonsense grounding toolkit")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rewrite a QA corpus into grounding samples and split it.
    Transform(TransformArgs),
    /// Drop samples that fail the post-processing filters.
    Filter(FilterArgs),
    /// Corpus statistics.
    Stats(DataArg),
    /// Generate a synthetic grounding dataset.
    Synth(SynthArgs),
    /// Train the grounding model.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a baseline.
    Eval(EvalArgs),
    /// Evaluate a heuristic baseline.
    Baseline(BaselineArgs),
    /// Finite-difference check of the model gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct DataArg {
    /// Dataset file, or a directory holding `dataset.jsonl`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// QA corpus file (JSONL with a companion `.cgf`).
    #[arg(long)]
    data: PathBuf,
    /// Rewrite rules; the built-in set when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Output directory for `{train,validation,test}.jsonl` and `report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Split hash seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    max_persons: usize,
    #[arg(long, default_value_t = 32)]
    d_vis: usize,
    #[arg(long, default_value_t = 0.5)]
    context_rate: f64,
    #[arg(long, default_value_t = SynthConfig::default().distractor_rate)]
    distractor_rate: f64,
    /// Fraction of samples held out into `test.jsonl`.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the contrastive loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Leave detected context objects out of the input sequence.
    #[arg(long)]
    no_context_objects: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; sidecars `.vocab`, `.cfg` and `.losses.jsonl` are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "name")]
    checkpoint: Option<PathBuf>,
    /// Baseline to evaluate instead of a checkpoint.
    #[arg(long)]
    name: Option<String>,
    /// Model config; defaults to the checkpoint's `.cfg` sidecar.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    /// random, big_to_small, left_to_right or left_to_right_top_k.
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Synthetic samples the check runs on.
    #[arg(long, default_value_t = 1)]
    samples: usize,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    detail: String,
}

fn emit_error(kind: &str, detail: String) {
    let line = serde_json::to_string(&ErrorLine { error: kind, detail }).expect("serializable");
    eprintln!("{line}");
}

fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            emit_error("usage", e.render().to_string());
            return 1;
        }
    };
    let result = configure_workers(cli.workers).and_then(|_| dispatch(cli.command));
    match result {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::Failed(code)) => code,
        Err(e) => {
            let kind = e.kind();
            emit_error(kind_name(kind), e.to_string());
            exit_code(kind)
        }
    }
}

enum Outcome {
    Done,
    /// Payload written, but the command's own check failed.
    Failed(i32),
}

fn configure_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Usage("--workers must be at least 1".into()));
        }
        // A second configuration in the same process (tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Usage(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Usage(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `--data` may name a file or a directory containing `dataset.jsonl`.
fn dataset_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("dataset.jsonl")
    } else {
        data.to_path_buf()
    }
}

fn load(data: &Path) -> Result<Dataset> {
    read_dataset(dataset_path(data))
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Transform(a) => cmd_transform(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Stats(a) => {
            print_json(&dataset_stats(&load(&a.data)?.samples))?;
            Ok(Outcome::Done)
        }
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => {
            let dataset = load(&a.data)?;
            print_json(&run_baseline(&a.name, &dataset, a.seed)?)?;
            Ok(Outcome::Done)
        }
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_transform(a: TransformArgs) -> Result<Outcome> {
    let corpus = read_qa_file(&a.data)?;
    let rules = match &a.rules {
        Some(p) => parse_rules(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RuleSet::default_rules(),
    };
    let split = SplitSpec {
        seed: a.seed,
        ..SplitSpec::default()
    };
    let out = run_pipeline(&corpus, &rules, &split)?;
    create_dir(&a.out)?;
    write_dataset(&out.train, a.out.join("train.jsonl"))?;
    write_dataset(&out.validation, a.out.join("validation.jsonl"))?;
    write_dataset(&out.test, a.out.join("test.jsonl"))?;
    write_json(&a.out.join("report.json"), &out.report)?;
    print_json(&out.report)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct FilterReport {
    total: usize,
    kept: usize,
    drops: Vec<FilterDrop>,
}

#[derive(Serialize)]
struct FilterDrop {
    sample_id: String,
    reason: String,
}

fn cmd_filter(a: FilterArgs) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let total = dataset.samples.len();
    let mut kept = Vec::with_capacity(total);
    let mut drops = Vec::new();
    for s in dataset.samples {
        match filter_sample(&s) {
            FilterVerdict::Keep => kept.push(s),
            FilterVerdict::Drop(r) => drops.push(FilterDrop {
                sample_id: s.sample_id,
                reason: r.to_string(),
            }),
        }
    }
    let report = FilterReport {
        total,
        kept: kept.len(),
        drops,
    };
    write_dataset(&Dataset::new(dataset.header, kept), &a.out)?;
    print_json(&report)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct SynthSummary {
    samples: usize,
    train: usize,
    test: usize,
    dataset: PathBuf,
}

fn cmd_synth(a: SynthArgs) -> Result<Outcome> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(Error::Usage(format!("--test-fraction {} outside [0, 1)", a.test_fraction)));
    }
    let cfg = SynthConfig {
        n_samples: a.n,
        max_persons: a.max_persons,
        d_vis: a.d_vis,
        context_rate: a.context_rate,
        distractor_rate: a.distractor_rate,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let dataset = synth_generate(&cfg)?;
    let (train, test) = holdout_split(&dataset, a.test_fraction, a.seed);
    create_dir(&a.out)?;
    let path = a.out.join("dataset.jsonl");
    write_dataset(&dataset, &path)?;
    write_dataset(&train, a.out.join("train.jsonl"))?;
    write_dataset(&test, a.out.join("test.jsonl"))?;
    print_json(&SynthSummary {
        samples: dataset.samples.len(),
        train: train.samples.len(),
        test: test.samples.len(),
        dataset: path,
    })?;
    Ok(Outcome::Done)
}

/// Splits by a seeded hash of each sample id.
pub fn holdout_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let spec = SplitSpec {
        train: 1.0 - test_fraction,
        validation: 0.0,
        test: test_fraction,
        seed,
    };
    let (test, train): (Vec<_>, Vec<_>) = dataset
        .samples
        .iter()
        .cloned()
        .partition(|s| spec.unit_hash(&s.sample_id) >= spec.train);
    (
        Dataset::new(dataset.header.clone(), train),
        Dataset::new(dataset.header.clone(), test),
    )
}

fn model_config(args: &ModelArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
        cfg.model.encoder.seed = seed;
        cfg.schedule.seed = seed;
    }
    if let Some(l) = args.lambda {
        cfg.model.lambda = l;
    }
    if args.no_context_objects {
        cfg.model.use_context_objects = false;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn sidecar(checkpoint: &Path, ext: &str) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(ext);
    s.into()
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    epochs: usize,
    final_loss_total: f64,
    checkpoint: PathBuf,
}

#[derive(Serialize)]
struct LossLine {
    step: usize,
    cls: f64,
    con: f64,
    total: f64,
}

fn cmd_train(a: TrainArgs) -> Result<Outcome> {
    let cfg = model_config(&a.model)?;
    let dataset = load(&a.data)?;
    if dataset.header.d_vis != cfg.model.d_vis {
        return Err(Error::DimensionMismatch {
            expected: cfg.model.d_vis,
            found: dataset.header.d_vis,
            context: "dataset d_vis vs model config".into(),
        });
    }
    let vocab = Vocab::build(&dataset.samples, &cfg.model.neutral_names);
    let mut model = GroundingModel::new(cfg.model.clone(), vocab)?;
    let log_path = sidecar(&a.out, ".losses.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut log_err = None;
    let report = train(&mut model, &dataset.samples, &cfg.schedule, &mut |step, l| {
        let line = LossLine {
            step,
            cls: l.cls,
            con: l.con,
            total: l.total,
        };
        let text = serde_json::to_string(&line).expect("serializable");
        if let Err(e) = writeln!(log, "{text}") {
            log_err.get_or_insert(e);
        }
        if (step + 1) % 100 == 0 {
            eprintln!("step {:>5}  loss {:.5}  cls {:.5}  con {:.5}", step + 1, l.total, l.cls, l.con);
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save_model(&model, &a.out)?;
    let cfg_path = sidecar(&a.out, ".cfg");
    std::fs::write(&cfg_path, cfg.render()).map_err(|e| Error::io(&cfg_path, e))?;
    print_json(&TrainSummary {
        steps: report.steps,
        epochs: report.epochs,
        final_loss_total: report.losses.last().map_or(f64::NAN, |l| l.total),
        checkpoint: a.out,
    })?;
    Ok(Outcome::Done)
}

fn run_baseline(name: &str, dataset: &Dataset, seed: u64) -> Result<EvalReport> {
    let b = Baseline::from_name(name).ok_or_else(|| {
        let names: Vec<_> = Baseline::ALL.iter().map(|b| b.name()).collect();
        Error::Usage(format!("unknown baseline {name:?}; expected one of {}", names.join(", ")))
    })?;
    let assignments: Vec<Assignment> = dataset.samples.iter().map(|s| b.assign(s, seed)).collect();
    evaluate(&assignments, &dataset.samples)
}

fn cmd_eval(a: EvalArgs) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let (name, report) = match (&a.checkpoint, &a.name) {
        (Some(ckpt), None) => {
            let cfg_path = a.config.clone().unwrap_or_else(|| sidecar(ckpt, ".cfg"));
            let cfg = ExperimentConfig::load(&cfg_path)?;
            let model = load_model(cfg.model, ckpt)?;
            let preds = predict_samples(&model, &dataset.samples)?;
            let assignments: Vec<Assignment> = dataset
                .samples
                .iter()
                .zip(&preds)
                .map(|(s, p)| Assignment::from_prediction(&s.sample_id, p))
                .collect();
            ("model".to_string(), evaluate(&assignments, &dataset.samples)?)
        }
        (None, Some(name)) => (name.clone(), run_baseline(name, &dataset, a.seed)?),
        _ => return Err(Error::Usage("eval needs exactly one of --checkpoint or --name".into())),
    };
    let table = render_table(&[NamedReport {
        name,
        report: report.clone(),
    }])?;
    eprint!("{}", table.text);
    print_json(&report)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct GradcheckSummary {
    loss: &'static str,
    max_rel_error: f64,
    worst_param: String,
    worst_index: usize,
    entries: usize,
}

#[derive(Serialize)]
struct GradcheckReportOut {
    epsilon: f64,
    tolerance: f64,
    max_rel_error: f64,
    passed: bool,
    losses: Vec<GradcheckSummary>,
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let cfg = model_config(&a.model)?;
    if a.samples == 0 {
        return Err(Error::Usage("--samples must be at least 1".into()));
    }
    let synth = SynthConfig {
        n_samples: a.samples,
        max_persons: 3,
        d_vis: cfg.model.d_vis,
        context_rate: 0.5,
        distractor_rate: 0.5,
        seed: cfg.model.seed,
        ..SynthConfig::default()
    };
    let data = synth_generate(&synth)?;
    let vocab = Vocab::build(&data.samples, &cfg.model.neutral_names);
    let model = GroundingModel::new(cfg.model.clone(), vocab)?;
    let prepared = prepare_all(&model, &data.samples)?;
    let mut losses = Vec::new();
    for (kind, label) in [(LossKind::Cls, "cls"), (LossKind::Con, "con"), (LossKind::Total, "total")] {
        let obj = LossObjective {
            config: &model.config,
            arch: &model.arch,
            samples: &prepared,
            kind,
        };
        let mut params = model.params.clone();
        let r = grad_check(&obj, &mut params, a.epsilon)?;
        losses.push(GradcheckSummary {
            loss: label,
            max_rel_error: r.max_rel_error,
            worst_param: r.worst_param,
            worst_index: r.worst_index,
            entries: r.entries,
        });
    }
    let max = losses.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let passed = max < GRADCHECK_TOLERANCE;
    print_json(&GradcheckReportOut {
        epsilon: a.epsilon,
        tolerance: GRADCHECK_TOLERANCE,
        max_rel_error: max,
        passed,
        losses,
    })?;
    if passed {
        Ok(Outcome::Done)
    } else {
        emit_error(
            "numeric",
            format!("max relative gradient error {max:e} exceeds {GRADCHECK_TOLERANCE:e}"),
        );
        Ok(Outcome::Failed(3))
    }
}
