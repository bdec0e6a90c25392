//! Command-line entry point.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::composers::ContextBudget;
use crate::error::{ConfigError, InputError};
use crate::eval::{evaluate, EvalItem};
use crate::filter::FilterPolicy;
use crate::jsonl::{write_manifest, JsonlReader, JsonlWriter, Manifest};
use crate::model::{ComposerKind, ComposerSpec, LineCategory, Mode, Modifier};
use crate::packing::{MaskMode, TruncationPolicy};
use crate::pipeline::{groups_from_records, run_compose, run_filter, run_pack, run_stats, PackFormat, TargetGroups};
use crate::rope::{frequency_report, RopeConfig};
use crate::sweep::{context_scaling_sweep, read_predictions, sweep_csv, CommandPredictor, FilePredictor, Predictor, DEFAULT_LENGTHS};
use crate::tokenizer::tokenizer_from_arg;

pub const DEFAULT_SEED: u64 = 42;
pub const LOG_ENV: &str = "REPOCOMPOSE_LOG";

#[derive(Parser, Debug)]
#[command(name = "repocompose", version, about = "Build repository-level code completion datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select completion files from raw commit records.
    Filter(FilterArgs),
    /// Build (context, completion) rows with one composer.
    Compose(ComposeArgs),
    /// Tokenize and truncate composed rows into training examples.
    Pack(PackArgs),
    /// Exact Match report for one or more prediction runs.
    Eval(EvalArgs),
    /// Exact Match over a range of maximum sequence lengths.
    Sweep(SweepArgs),
    /// Counts and character totals of raw commit records.
    Stats(StatsArgs),
    /// CSV of RoPE frequencies and wavelengths.
    RopeReport(RopeArgs),
}

#[derive(Args, Debug, Clone)]
struct Runtime {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    workers: Option<usize>,
    /// `reference` or `external:<cmd>`.
    #[arg(long, default_value = "reference")]
    tokenizer: String,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Raw commit records (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Target rows.
    #[arg(long)]
    output: PathBuf,
    /// Snapshot sidecar (default `<output>.snapshots.jsonl`).
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long, default_value_t = 2010)]
    min_year: i32,
    #[arg(long, default_value_t = 800)]
    min_chars: usize,
    #[arg(long, default_value_t = 25_000)]
    max_chars: usize,
    #[arg(long, default_value_t = 1000)]
    max_files_per_repo: usize,
    /// Repositories to exclude (comma separated, repeatable).
    #[arg(long, value_delimiter = ',')]
    holdout: Vec<String>,
    /// File with one held-out repository per line.
    #[arg(long)]
    holdout_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ComposeArgs {
    /// Target rows written by `filter`.
    #[arg(long, conflicts_with = "records")]
    targets: Option<PathBuf>,
    /// Snapshot sidecar (default `<targets>.snapshots.jsonl`).
    #[arg(long)]
    snapshots: Option<PathBuf>,
    /// Raw commit records; every completion file becomes a target.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Composer kind; an unknown name lists the valid ones.
    #[arg(long)]
    composer: String,
    /// `none`, `reversed` or `irrelevant`.
    #[arg(long, default_value = "none")]
    modifier: String,
    /// `training` or `evaluation`.
    #[arg(long, default_value = "training")]
    mode: String,
    #[arg(long, default_value_t = 16384)]
    max_context: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = crate::model::DEFAULT_DROPOUT_P)]
    dropout_p: f64,
    #[arg(long, default_value_t = crate::model::DEFAULT_MASK_P)]
    mask_p: f64,
    #[arg(long, default_value_t = crate::model::DEFAULT_LEAK_SEGMENTS)]
    leak_segments: usize,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Args, Debug)]
struct PackArgs {
    /// Composed rows.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// `jsonl` or `binary`.
    #[arg(long, default_value = "jsonl")]
    format: String,
    #[arg(long, default_value_t = 16384)]
    max_total: usize,
    #[arg(long, default_value_t = 4096)]
    max_completion: usize,
    #[arg(long, default_value_t = 3)]
    min_ratio: usize,
    /// `completion` or `full`.
    #[arg(long, default_value = "completion")]
    mask: String,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Evaluation items (JSONL).
    #[arg(long)]
    items: PathBuf,
    /// Predictions as `PATH` or `NAME=PATH`; repeat for several runs.
    #[arg(long, required = true)]
    preds: Vec<String>,
    /// Categories to report (default: all).
    #[arg(long, value_delimiter = ',')]
    categories: Vec<String>,
    /// Also write the report here (stdout always gets it).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Evaluation items (JSONL).
    #[arg(long)]
    items: PathBuf,
    /// Predictor command; receives `REPOCOMPOSE_MAX_SEQ_LEN` and JSONL prompts on stdin.
    #[arg(long, conflicts_with = "predictions")]
    predictor_cmd: Option<String>,
    /// Prediction file pattern with `{len}` placeholder.
    #[arg(long)]
    predictions: Option<String>,
    /// Comma separated maximum sequence lengths (default 1024 to 131072).
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
    /// CSV destination (default stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RopeArgs {
    #[arg(long, default_value_t = crate::rope::EXTENDED_BASE)]
    base: f64,
    #[arg(long, default_value_t = 64)]
    head_dim: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Exit code for a failed run: 2 for configuration errors, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.downcast_ref::<ConfigError>().is_some()) {
        2
    } else {
        1
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    match workers {
        Some(0) => Err(ConfigError::Invalid("--workers must be at least 1".into()).into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(f),
        None => f(),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Filter(a) => cmd_filter(a),
        Command::Compose(a) => {
            let w = a.runtime.workers;
            with_workers(w, || cmd_compose(a))
        }
        Command::Pack(a) => {
            let w = a.runtime.workers;
            with_workers(w, || cmd_pack(a))
        }
        Command::Eval(a) => {
            let w = a.workers;
            with_workers(w, || cmd_eval(a))
        }
        Command::Sweep(a) => {
            let w = a.runtime.workers;
            with_workers(w, || cmd_sweep(a))
        }
        Command::Stats(a) => cmd_stats(a),
        Command::RopeReport(a) => cmd_rope(a),
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn require_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(InputError::Invalid(format!("input {} does not exist", path.display())).into());
    }
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    require_input(&a.input)?;
    let mut holdout: BTreeSet<String> = a.holdout.iter().filter(|s| !s.is_empty()).cloned().collect();
    if let Some(path) = &a.holdout_file {
        let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        holdout.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    let policy = FilterPolicy {
        min_year: a.min_year,
        min_chars: a.min_chars,
        max_chars: a.max_chars,
        max_files_per_repo: a.max_files_per_repo,
        holdout_repos: holdout,
    };
    let snapshots = a.snapshots.clone().unwrap_or_else(|| suffixed(&a.output, ".snapshots.jsonl"));
    let counts = run_filter(&a.input, &a.output, &snapshots, &policy)?;
    let mut m = Manifest::new("filter", &a.output);
    m.inputs = vec![a.input.display().to_string()];
    m.config = json!({ "policy": policy, "snapshots": snapshots.display().to_string() });
    m.counts = serde_json::to_value(&counts)?;
    write_manifest(&m, &a.output)?;
    log::info!("filter: {counts:?}");
    Ok(())
}

fn cmd_compose(a: ComposeArgs) -> Result<()> {
    let kind: ComposerKind = a.composer.parse()?;
    let modifier: Modifier = a.modifier.parse()?;
    let mode: Mode = a.mode.parse()?;
    let spec = ComposerSpec {
        kind,
        modifier,
        mode,
        max_seq_len: a.max_context,
        seed: a.seed,
        dropout_p: a.dropout_p,
        mask_p: a.mask_p,
        leak_segments: a.leak_segments,
    };
    spec.validate()?;
    let tok = tokenizer_from_arg(&a.runtime.tokenizer)?;
    let budget = ContextBudget::new(a.max_context, tok.as_ref());
    let mut out = JsonlWriter::create(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let (inputs, counts) = match (&a.targets, &a.records) {
        (Some(targets), None) => {
            let snapshots = a.snapshots.clone().unwrap_or_else(|| suffixed(targets, ".snapshots.jsonl"));
            require_input(targets)?;
            require_input(&snapshots)?;
            let groups = TargetGroups::open(targets, &snapshots)?;
            let counts = run_compose(groups, &spec, &budget, &mut out)?;
            (vec![targets.display().to_string(), snapshots.display().to_string()], counts)
        }
        (None, Some(records)) => {
            require_input(records)?;
            let counts = run_compose(groups_from_records(records)?, &spec, &budget, &mut out)?;
            (vec![records.display().to_string()], counts)
        }
        _ => return Err(ConfigError::Invalid("compose needs exactly one of --targets or --records".into()).into()),
    };
    out.finish()?;
    let mut m = Manifest::new("compose", &a.output);
    m.inputs = inputs;
    m.seed = Some(a.seed);
    m.tokenizer = Some(tok.name().to_string());
    m.config = json!({ "spec": spec, "composer": spec.id(), "max_context": a.max_context });
    m.counts = serde_json::to_value(&counts)?;
    write_manifest(&m, &a.output)?;
    Ok(())
}

fn cmd_pack(a: PackArgs) -> Result<()> {
    require_input(&a.input)?;
    let format: PackFormat = a.format.parse()?;
    let mask: MaskMode = a.mask.parse()?;
    let policy = TruncationPolicy {
        total_max: a.max_total,
        completion_max: a.max_completion,
        min_ratio: a.min_ratio,
    };
    policy.validate()?;
    let tok = tokenizer_from_arg(&a.runtime.tokenizer)?;
    let skipped = suffixed(&a.output, ".skipped.jsonl");
    let counts = run_pack(&a.input, &a.output, &skipped, format, &policy, mask, tok.as_ref())?;
    let mut m = Manifest::new("pack", &a.output);
    m.inputs = vec![a.input.display().to_string()];
    m.tokenizer = Some(tok.name().to_string());
    m.config = json!({ "policy": policy, "mask": mask, "format": format, "skipped": skipped.display().to_string() });
    m.counts = serde_json::to_value(&counts)?;
    m.total_tokens = Some(counts.total_tokens);
    write_manifest(&m, &a.output)?;
    Ok(())
}

fn read_all<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    require_input(path)?;
    Ok(JsonlReader::<T>::open(path)?.collect::<Result<Vec<_>, _>>()?)
}

fn parse_categories(names: &[String]) -> Result<Option<BTreeSet<LineCategory>>> {
    if names.is_empty() {
        return Ok(None);
    }
    Ok(Some(names.iter().map(|n| n.trim().parse()).collect::<Result<_, _>>()?))
}

fn write_text_output(output: Option<&Path>, text: &str, manifest: impl FnOnce(&Path) -> Manifest) -> Result<()> {
    match output {
        Some(path) => {
            std::fs::write(path, text).map_err(|source| InputError::Io {
                path: path.display().to_string(),
                source,
            })?;
            write_manifest(&manifest(path), path)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let items: Vec<EvalItem> = read_all(&a.items)?;
    let categories = parse_categories(&a.categories)?;
    let mut runs: Vec<(String, HashMap<String, String>)> = Vec::new();
    let mut inputs = vec![a.items.display().to_string()];
    for spec in &a.preds {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) if !n.is_empty() => (n.to_string(), PathBuf::from(p)),
            _ => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        require_input(&path)?;
        let preds = read_predictions(&path).map_err(|e| InputError::Invalid(format!("{e:#}")))?;
        inputs.push(path.display().to_string());
        runs.push((name, preds));
    }
    let report = evaluate(&items, &runs, categories.as_ref());
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    if a.output.is_some() {
        print!("{text}");
    }
    write_text_output(a.output.as_deref(), &text, |path| {
        let mut m = Manifest::new("eval", path);
        m.inputs = inputs.clone();
        m.config = json!({ "categories": a.categories, "runs": runs.iter().map(|r| &r.0).collect::<Vec<_>>() });
        m.counts = json!({ "items": items.len(), "warnings": report.warnings.len() });
        m
    })
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let items: Vec<EvalItem> = read_all(&a.items)?;
    let predictor: Box<dyn Predictor> = match (&a.predictor_cmd, &a.predictions) {
        (Some(cmd), None) => Box::new(CommandPredictor { command: cmd.clone() }),
        (None, Some(pattern)) => Box::new(FilePredictor { pattern: pattern.clone() }),
        _ => bail!(ConfigError::Invalid("sweep needs exactly one of --predictor-cmd or --predictions".into())),
    };
    let lengths = if a.lengths.is_empty() { DEFAULT_LENGTHS.to_vec() } else { a.lengths.clone() };
    if lengths.contains(&0) {
        bail!(ConfigError::Invalid("sweep lengths must be at least 1".into()));
    }
    let tok = tokenizer_from_arg(&a.runtime.tokenizer)?;
    let rows = context_scaling_sweep(&items, predictor.as_ref(), &lengths, tok.as_ref());
    let csv = sweep_csv(&rows);
    write_text_output(a.output.as_deref(), &csv, |path| {
        let mut m = Manifest::new("sweep", path);
        m.inputs = vec![a.items.display().to_string()];
        m.tokenizer = Some(tok.name().to_string());
        m.config = json!({ "lengths": lengths, "predictor_cmd": a.predictor_cmd, "predictions": a.predictions });
        m.counts = json!({ "rows": rows.len(), "missing": rows.iter().filter(|r| r.exact_match.is_none()).count() });
        m
    })
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    require_input(&a.input)?;
    let report = run_stats(&a.input)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text_output(a.output.as_deref(), &text, |path| {
        let mut m = Manifest::new("stats", path);
        m.inputs = vec![a.input.display().to_string()];
        m.counts = serde_json::to_value(&report).unwrap_or_default();
        m
    })
}

fn cmd_rope(a: RopeArgs) -> Result<()> {
    let cfg = RopeConfig::new(a.base, a.head_dim)?;
    let csv = frequency_report(&cfg);
    write_text_output(a.output.as_deref(), &csv, |path| {
        let mut m = Manifest::new("rope-report", path);
        m.config = json!({ "base": a.base, "head_dim": a.head_dim });
        m.counts = json!({ "rows": a.head_dim / 2 });
        m
    })
}
