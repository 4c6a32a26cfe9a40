//! Command-line experiment runner.

mod config;
mod manifest;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::data::{generate_blobs, load_dataset, save_dataset, BlobSpec, DistributionShift};
use crate::error::Error;
use crate::eval::{evaluate_model, write_run_artifacts};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::training::{run_strategy, RunOutcome, Strategy, TrainConfig};

pub use config::{extract_overrides, DataSection, Experiment, Override, SplitSection};
pub use manifest::{sha256_file, Artifact, RunManifest, Timing, MANIFEST_FILE};
pub use plot::{plot_run, CONFUSION_SVG, CURVES_SVG, SCATTER_SVG};

pub const SEED_ENV: &str = "SUPERCON_SEED";
pub const CHECKPOINT_FILE: &str = "model.sckp";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } | CliError::Usage(_) => 2,
            CliError::Run(e) => match e.root() {
                Error::Config(_) => 2,
                Error::Infeasible(_) => 3,
                _ => 1,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema { .. } => "schema",
            CliError::Usage(_) => "usage",
            CliError::Run(e) => match e.root() {
                Error::Config(_) => "schema",
                Error::Infeasible(_) => "infeasible",
                Error::Load { .. } => "load",
                Error::Io(_) => "io",
                _ => "runtime",
            },
        }
    }

    fn envelope(&self) -> serde_json::Value {
        let mut body = json!({
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Schema { path, .. } = self {
            body["path"] = json!(path);
        }
        json!({ "error": body })
    }
}

#[derive(Debug, Parser)]
#[command(name = "supercon", version, about = "Two-stage contrastive training for imbalanced classification")]
pub struct Cli {
    /// Emit errors as a JSON envelope on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian-blob dataset.
    GenData(GenDataArgs),
    /// Train one strategy and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Run a grid of strategies and seeds and tabulate the results.
    Compare(CompareArgs),
    /// Render SVG plots from a run directory.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Samples per class, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Falls back to $SUPERCON_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generate images of shape CxHxW instead of vectors.
    #[arg(long)]
    pub image: Option<String>,
    /// Extra minority samples from a shifted center.
    #[arg(long, default_value_t = 0)]
    pub shift_count: usize,
    #[arg(long, default_value_t = 0.0)]
    pub shift_offset: f64,
    #[arg(short, long, default_value = "dataset")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to runs/<strategy>-seed<seed>.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Class scored by AUC; defaults to the smallest class in the data.
    #[arg(long)]
    pub positive_class: Option<usize>,
    /// Write the metrics here instead of stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Defaults to all six strategies.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(short, long, default_value = "comparison")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub run_dir: PathBuf,
    /// Defaults to the run directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn parse_image_shape(s: &str) -> Result<[usize; 3], CliError> {
    let dims: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--image expects CxHxW, got {s:?}")))?;
    <[usize; 3]>::try_from(dims).map_err(|_| CliError::Usage(format!("--image expects CxHxW, got {s:?}")))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<PathBuf, CliError> {
    let seed = args.seed.or(env_seed()?).unwrap_or(0);
    let spec = BlobSpec {
        counts: args.counts.clone(),
        dims: args.dims,
        separation: args.separation,
        spread: args.spread,
        seed,
        image_shape: args.image.as_deref().map(parse_image_shape).transpose()?,
        shift: (args.shift_count > 0).then_some(DistributionShift {
            count: args.shift_count,
            offset: args.shift_offset,
        }),
    };
    let d = generate_blobs(&spec)?;
    let manifest = save_dataset(&args.out, &d)?;
    println!("class counts: {:?}", d.class_counts());
    println!("imbalance ratio: {}", d.imbalance_ratio()?);
    println!("wrote {}", manifest.display());
    Ok(args.out.clone())
}

fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn train_overrides(mut overrides: Vec<Override>, strategy: Option<&str>, seed: Option<u64>) -> Result<Vec<Override>, CliError> {
    if let Some(s) = strategy {
        let s = parse_strategy(s)?;
        overrides.push(Override::new("strategy", Some(&json!(s.name()).to_string())));
    }
    if let Some(seed) = seed {
        overrides.push(Override::new("seed", Some(&seed.to_string())));
    }
    Ok(overrides)
}

/// Writes checkpoint, config echo, reports and manifest for one finished run.
fn write_run(dir: &Path, exp: &Experiment, outcome: &RunOutcome, started: u128, wall: f64) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let ckpt = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.stack, exp.train.seed)?;
    paths.push(ckpt);
    let echo = dir.join(CONFIG_ECHO_FILE);
    fs::write(&echo, serde_json::to_string_pretty(&exp.echo()).map_err(Error::from)? + "\n")?;
    paths.push(echo);
    paths.extend(write_run_artifacts(dir, &outcome.report, &outcome.embeddings)?);
    let manifest = RunManifest {
        code_version: format!("supercon {}", env!("CARGO_PKG_VERSION")),
        command: "train".into(),
        config_path: Some(exp.config_path.clone()),
        config_sha256: Some(exp.config_sha256.clone()),
        overrides: exp.overrides.clone(),
        seeds: vec![exp.train.seed],
        output_dir: dir.to_path_buf(),
        artifacts: RunManifest::inventory(dir, &paths)?,
        timing: Timing {
            started_unix_ms: started,
            wall_seconds: wall,
        },
    };
    manifest.write(dir)?;
    Ok(manifest)
}

pub fn cmd_train(args: &TrainArgs, overrides: Vec<Override>) -> Result<PathBuf, CliError> {
    let started = now_ms();
    let clock = Instant::now();
    let overrides = train_overrides(overrides, args.strategy.as_deref(), args.seed)?;
    let exp = Experiment::load(&args.config, &overrides, env_seed()?)?;
    let data = exp.dataset()?;
    let (train, test) = exp.split(&data, exp.train.seed)?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-seed{}", exp.train.strategy, exp.train.seed)));
    let outcome = run_strategy(&exp.train, &train, &test)?;
    write_run(&dir, &exp, &outcome, started, clock.elapsed().as_secs_f64())?;
    let m = &outcome.report.metrics;
    println!(
        "{} seed {}: macro-F1 {:.4}, AUC {}",
        exp.train.strategy,
        exp.train.seed,
        m.macro_f1,
        m.auc.map_or("undefined".into(), |a| format!("{a:.4}"))
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let (stack, _) = load_checkpoint(&args.checkpoint)?;
    let data = load_dataset(&args.data)?;
    let positive = args.positive_class.unwrap_or_else(|| data.minority_class());
    if positive >= data.num_classes() {
        return Err(CliError::Usage(format!("--positive-class {positive} is out of range")));
    }
    let ev = evaluate_model(&stack, &data, positive)?;
    let body = json!({ "metrics": ev.metrics, "separation": ev.separation });
    let text = serde_json::to_string_pretty(&body).map_err(Error::from)? + "\n";
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Outcome of one (strategy, seed) cell of a comparison.
#[derive(Clone, Debug)]
pub struct Cell {
    pub strategy: Strategy,
    pub seed: u64,
    pub result: Result<(f64, Option<f64>, f64), String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes per-seed rows followed by one mean row per strategy. Means cover
/// the successful seeds only.
pub fn write_comparison(path: &Path, strategies: &[Strategy], cells: &[Cell]) -> Result<BTreeMap<Strategy, f64>, CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Run(Error::Io(e.into())))?;
    let io = |e: csv::Error| CliError::Run(Error::Io(e.into()));
    w.write_record(["strategy", "seed", "status", "macro_f1", "auc", "accuracy", "error"]).map_err(io)?;
    for c in cells {
        let row = match &c.result {
            Ok((f1, auc, acc)) => [c.strategy.name().into(), c.seed.to_string(), "ok".into(), f1.to_string(), fmt_opt(*auc), acc.to_string(), String::new()],
            Err(msg) => [c.strategy.name().into(), c.seed.to_string(), "failed".into(), String::new(), String::new(), String::new(), msg.clone()],
        };
        w.write_record(&row).map_err(io)?;
    }
    let mut f1_means = BTreeMap::new();
    for &s in strategies {
        let ok: Vec<&(f64, Option<f64>, f64)> = cells.iter().filter(|c| c.strategy == s).filter_map(|c| c.result.as_ref().ok()).collect();
        let total = cells.iter().filter(|c| c.strategy == s).count();
        let status = match ok.len() {
            0 => "failed".to_string(),
            n if n == total => "ok".to_string(),
            n => format!("partial {n}/{total}"),
        };
        let row = if ok.is_empty() {
            [s.name().into(), "mean".into(), status, String::new(), String::new(), String::new(), String::new()]
        } else {
            let f1 = mean(&ok.iter().map(|r| r.0).collect::<Vec<_>>());
            let aucs: Option<Vec<f64>> = ok.iter().map(|r| r.1).collect();
            let acc = mean(&ok.iter().map(|r| r.2).collect::<Vec<_>>());
            f1_means.insert(s, f1);
            [s.name().into(), "mean".into(), status, f1.to_string(), fmt_opt(aucs.map(|a| mean(&a))), acc.to_string(), String::new()]
        };
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(f1_means)
}

/// Logs a warning for every adjacent pair of the expected macro-F1 ordering
/// that the means violate. Returns the violations.
pub fn ordering_warnings(means: &BTreeMap<Strategy, f64>) -> Vec<String> {
    let chain = [Strategy::SuperCon, Strategy::SuperConCe, Strategy::FocalLoss, Strategy::Vanilla];
    let present: Vec<(Strategy, f64)> = chain.iter().filter_map(|s| means.get(s).map(|&m| (*s, m))).collect();
    let mut out = Vec::new();
    for pair in present.windows(2) {
        let ((a, ma), (b, mb)) = (pair[0], pair[1]);
        if ma < mb {
            let msg = format!("expected {a} >= {b} in mean macro-F1, got {ma:.4} < {mb:.4}");
            log::warn!("{msg}");
            out.push(msg);
        }
    }
    out
}

pub fn cmd_compare(args: &CompareArgs, overrides: Vec<Override>) -> Result<PathBuf, CliError> {
    let started = now_ms();
    let clock = Instant::now();
    if args.seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let strategies: Vec<Strategy> = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies.iter().map(|s| parse_strategy(s)).collect::<Result<_, _>>()?
    };
    let exp = Experiment::load(&args.config, &overrides, env_seed()?)?;
    let data = exp.dataset()?;
    let grid: Vec<(Strategy, u64)> = strategies.iter().flat_map(|&s| args.seeds.iter().map(move |&k| (s, k))).collect();

    let run_cell = |&(strategy, seed): &(Strategy, u64)| -> Cell {
        let cfg = TrainConfig {
            strategy,
            seed,
            ..exp.train.clone()
        };
        let result = exp
            .split(&data, seed)
            .and_then(|(train, test)| run_strategy(&cfg, &train, &test))
            .map(|o| (o.report.metrics.macro_f1, o.report.metrics.auc, o.report.metrics.accuracy))
            .map_err(|e| e.to_string());
        if let Err(msg) = &result {
            log::warn!("{strategy} seed {seed} failed: {msg}");
        }
        Cell { strategy, seed, result }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} worker threads: {e}", args.jobs)))?;
    let cells: Vec<Cell> = pool.install(|| grid.par_iter().map(run_cell).collect());

    fs::create_dir_all(&args.out)?;
    let table = args.out.join(COMPARISON_FILE);
    let means = write_comparison(&table, &strategies, &cells)?;
    ordering_warnings(&means);
    let manifest = RunManifest {
        code_version: format!("supercon {}", env!("CARGO_PKG_VERSION")),
        command: "compare".into(),
        config_path: Some(exp.config_path.clone()),
        config_sha256: Some(exp.config_sha256.clone()),
        overrides: exp.overrides.clone(),
        seeds: args.seeds.clone(),
        output_dir: args.out.clone(),
        artifacts: RunManifest::inventory(&args.out, std::slice::from_ref(&table))?,
        timing: Timing {
            started_unix_ms: started,
            wall_seconds: clock.elapsed().as_secs_f64(),
        },
    };
    manifest.write(&args.out)?;
    println!("wrote {}", table.display());
    let failed = cells.iter().filter(|c| c.result.is_err()).count();
    if failed > 0 {
        return Err(CliError::Run(Error::Evaluation(format!("{failed} of {} runs failed", cells.len()))));
    }
    Ok(args.out.clone())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<Vec<PathBuf>, CliError> {
    let out = args.out.clone().unwrap_or_else(|| args.run_dir.clone());
    let written = plot_run(&args.run_dir, &out)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}

fn dispatch(cli: &Cli, overrides: Vec<Override>) -> Result<(), CliError> {
    let takes_overrides = matches!(cli.command, Command::Train(_) | Command::Compare(_));
    if !takes_overrides && !overrides.is_empty() {
        return Err(CliError::Usage(format!(
            "config overrides such as --{} only apply to train and compare",
            overrides[0].dotted()
        )));
    }
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a).map(drop),
        Command::Train(a) => cmd_train(a, overrides).map(drop),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a, overrides).map(drop),
        Command::Plot(a) => cmd_plot(a).map(drop),
    }
}

fn report(err: &CliError, json_errors: bool) {
    if json_errors {
        eprintln!("{}", err.envelope());
    } else {
        eprintln!("error: {err}");
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let raw: Vec<String> = args.into_iter().collect();
    let json_errors = raw.iter().any(|a| a == "--json-errors");
    let (rest, overrides) = extract_overrides(raw);
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if json_errors && code != 0 {
                report(&CliError::Usage(e.to_string().trim().to_string()), true);
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli, overrides) {
        Ok(()) => 0,
        Err(e) => {
            report(&e, cli.json_errors);
            e.exit_code()
        }
    }
}
