//! `malkit` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
//! usage, 3 missing or unreadable dataset or checkpoint. Diagnostics go to
//! stderr; stdout carries only the paths of written files (or, for
//! `serve`, the listening URL).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use malkit::acquisition::scores_csv;
use malkit::datagen::{save_csv, Dataset};
use malkit::engine::{run_experiment, Ablation, Checkpoint, ExperimentConfig, Strategy};
use malkit::Error;
use malkit_labelserve::{AppState, AuditLog, Session};

const OUT_DIR_ENV: &str = "MALKIT_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "results";

#[derive(Parser)]
#[command(
    name = "malkit",
    version,
    about = "Minimax active learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one acquisition strategy over every seed and write its record.
    Run(RunArgs),
    /// Run full MAL and each listed single ablation.
    Ablate(RunArgs),
    /// Write the configured dataset as train/test CSV files.
    GenData(ConfigArgs),
    /// Score the unlabeled rows of a dataset with a saved checkpoint.
    ScoreDump(ScoreArgs),
    /// Start the labeling HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory [fallback: config out_dir, then $MALKIT_OUT_DIR, then ./results].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    base: ConfigArgs,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    splits: Option<String>,
    /// Fraction of the pool (0.02) or a sample count (80).
    #[arg(long)]
    budget: Option<String>,
    /// Seed list such as `0..5` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    /// Comma-separated ablation flags.
    #[arg(long)]
    flags: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    base: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV destination [default: <out-dir>/<checkpoint name>_scores.csv].
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    base: ConfigArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Session seed [default: first configured seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Audit log; an existing log is replayed [default: <out-dir>/audit.jsonl].
    #[arg(long)]
    audit_log: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Input(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Input(m) | Failure::Runtime(m) => m,
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
        Command::GenData(a) => gen_data(a),
        Command::ScoreDump(a) => score_dump(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("malkit: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    for pair in &args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn apply_run_flags(cfg: &mut ExperimentConfig, a: &RunArgs) -> Result<(), Failure> {
    let pairs = [
        ("strategy", &a.strategy),
        ("splits", &a.splits),
        ("budget", &a.budget),
        ("seeds", &a.seeds),
        ("jobs", &a.jobs),
        ("flags", &a.flags),
    ];
    for (key, value) in pairs {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(())
}

fn out_dir(args: &ConfigArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, Failure> {
    cfg.data.load().map_err(|e| match e {
        Error::Io { .. } | Error::Parse(_) => Failure::Input(format!("dataset: {e}")),
        other => other.into(),
    })
}

fn display(paths: Vec<PathBuf>) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn run(a: RunArgs) -> Result<Vec<String>, Failure> {
    let mut cfg = load_config(&a.base)?;
    apply_run_flags(&mut cfg, &a)?;
    cfg.validate()?;
    let dataset = load_dataset(&cfg)?;
    let record = run_experiment(&cfg, &dataset)?;
    log::info!(
        "{}: final mean accuracy {:.4}",
        record.strategy,
        record.final_mean()
    );
    Ok(display(record.write(&out_dir(&a.base, &cfg))?))
}

fn ablate(a: RunArgs) -> Result<Vec<String>, Failure> {
    let mut cfg = load_config(&a.base)?;
    let flags = a.flags.clone();
    let a = RunArgs { flags: None, ..a };
    apply_run_flags(&mut cfg, &a)?;
    if cfg.train.strategy != Strategy::Mal {
        return Err(Failure::Config(format!(
            "ablations apply to mal, not {}",
            cfg.train.strategy.name()
        )));
    }
    let names: Vec<String> = match &flags {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => Ablation::NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let mut variants = vec![Ablation::default()];
    for name in &names {
        variants.push(Ablation::single(name)?);
    }
    cfg.validate()?;
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(&a.base, &cfg);
    let mut written = Vec::new();
    for ablation in variants {
        let mut c = cfg.clone();
        c.train.ablation = ablation;
        let record = run_experiment(&c, &dataset)?;
        log::info!(
            "{}: final mean accuracy {:.4}",
            record.strategy,
            record.final_mean()
        );
        written.extend(display(record.write(&dir)?));
    }
    Ok(written)
}

fn gen_data(a: ConfigArgs) -> Result<Vec<String>, Failure> {
    let cfg = load_config(&a)?;
    cfg.validate()?;
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(&a, &cfg);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    let mut parts = vec![("train.csv", dataset.train())];
    if !dataset.test_ids.is_empty() {
        parts.push(("test.csv", dataset.test()));
    }
    let mut written = Vec::new();
    for (name, part) in parts {
        let path = dir.join(name);
        save_csv(&part, &path)?;
        written.push(path.display().to_string());
    }
    Ok(written)
}

fn score_dump(a: ScoreArgs) -> Result<Vec<String>, Failure> {
    let cfg = load_config(&a.base)?;
    cfg.validate()?;
    let checkpoint = Checkpoint::load(&a.checkpoint).map_err(|e| match e {
        Error::Io { .. } => Failure::Input(format!("checkpoint: {e}")),
        other => Failure::Runtime(format!("checkpoint: {other}")),
    })?;
    let dataset = load_dataset(&cfg)?;
    let scores = checkpoint.score_unlabeled(&dataset)?;
    let output = match a.output {
        Some(p) => p,
        None => out_dir(&a.base, &cfg).join(format!("{}_scores.csv", stem(&a.checkpoint))),
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(&output, scores_csv(&scores))
        .map_err(|e| Failure::runtime(format!("{}: {e}", output.display())))?;
    Ok(vec![output.display().to_string()])
}

/// File name without every extension: `mal_seed0.ckpt.json` gives `mal_seed0`.
fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.split('.').next().unwrap_or("checkpoint").to_string()
}

fn serve(a: ServeArgs) -> Result<Vec<String>, Failure> {
    let cfg = load_config(&a.base)?;
    cfg.validate()?;
    let dataset = load_dataset(&cfg)?;
    let seed = a.seed.or(cfg.train.seeds.first().copied()).unwrap_or(0);
    let log_path = match a.audit_log {
        Some(p) => p,
        None => {
            let dir = out_dir(&a.base, &cfg);
            std::fs::create_dir_all(&dir)
                .map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
            dir.join("audit.jsonl")
        }
    };
    let audit = AuditLog::open(&log_path).map_err(Failure::runtime)?;
    let session = Session::open(cfg.train.clone(), &dataset, seed, audit).map_err(|e| match e {
        malkit_labelserve::SessionError::Engine(inner) => Failure::from(inner),
        other => Failure::runtime(other),
    })?;
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| Failure::runtime(format!("bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(Failure::runtime)?;
        println!("http://{addr}");
        eprintln!("audit log: {}", log_path.display());
        malkit_labelserve::serve(listener, AppState::new(session))
            .await
            .map_err(Failure::runtime)
    })?;
    Ok(Vec::new())
}
