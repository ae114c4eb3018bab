//! `proxyrec` command line: prepare, train, evaluate, ablate and synth.
//!
//! Settings resolve in increasing priority: built-in defaults, `--config`
//! file, `PROXYREC_*` environment variables, `--set key=value`, then the
//! dedicated flags of each subcommand.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use proxyrec::dataset::Task;
use proxyrec::parallel::Executor;
use proxyrec::synthetic::SyntheticConfig;
use proxyrec::trainer::Checkpoint;
use proxyrec::{Error, ErrorClass};
use thiserror::Error;

use commands::{EvalSplit, TrainOptions, Variant};
use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => EXIT_USAGE,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numeric => EXIT_NUMERIC,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "proxyrec", version, about = "Session recommendation with user proxies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn an interaction log into a train/valid/test manifest.
    Prepare(PrepareArgs),
    /// Train a model on a prepared manifest.
    Train(TrainArgs),
    /// Score a checkpoint on the test (or validation) split.
    Evaluate(EvaluateArgs),
    /// Train and score every ablation variant under one configuration.
    Ablate(AblateArgs),
    /// Write a synthetic interaction log with planted users.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for evaluation and gradients (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Column layout, e.g. `tsv:user=0,item=1,time=2`.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub min_item_count: Option<usize>,
    #[arg(long)]
    pub min_session_len: Option<usize>,
    #[arg(long)]
    pub max_session_len: Option<usize>,
    /// `train:valid:test`, e.g. `8:1:1`.
    #[arg(long)]
    pub split_ratios: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub known_user_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue an interrupted run from `last.ckpt` in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs, leaving a resumable run behind.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Repeatable; defaults to the task the checkpoint was trained for.
    #[arg(long)]
    pub task: Vec<Task>,
    /// Comma-separated cutoffs.
    #[arg(long)]
    pub ks: Option<String>,
    #[arg(long, default_value = "test")]
    pub split: EvalSplit,
    /// Where reports go; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated subset of the variants; all seven by default.
    #[arg(long)]
    pub variants: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
}

/// Defaults, then config file, environment, `--set`, then `flags`.
pub fn resolve_config(
    common: &CommonArgs,
    flags: &[(&str, String)],
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env(env)?;
    cfg.apply_overrides(&common.set)?;
    let mut pairs: Vec<String> = flags.iter().map(|(k, v)| format!("{k}={v}")).collect();
    if let Some(t) = common.threads {
        pairs.push(format!("threads={t}"));
    }
    cfg.apply_overrides(&pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

fn flag<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, &|k| std::env::var(k).ok())
}

pub fn run_with_env<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli, env) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, env: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "format", &a.format);
            flag(&mut flags, "min_item_count", &a.min_item_count);
            flag(&mut flags, "min_session_len", &a.min_session_len);
            flag(&mut flags, "max_session_len", &a.max_session_len);
            flag(&mut flags, "split_ratios", &a.split_ratios);
            let cfg = resolve_config(&a.common, &flags, env)?;
            let data = commands::prepare_dataset(&a.input, &a.out_dir, &cfg)?;
            print!("{}", data.stats.to_table());
            println!(
                "split           {}/{}/{}",
                data.stats.train_sessions, data.stats.valid_sessions, data.stats.test_sessions
            );
        }
        Command::Train(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "mode", &a.mode);
            flag(&mut flags, "known_user_ratio", &a.known_user_ratio);
            flag(&mut flags, "seed", &a.seed);
            flag(&mut flags, "epochs", &a.epochs);
            let cfg = resolve_config(&a.common, &flags, env)?;
            let opts = TrainOptions {
                resume: a.resume,
                stop_after: a.stop_after,
            };
            let out = commands::train(&a.data, &a.out_dir, &cfg, &opts)?;
            for r in &out.records {
                println!(
                    "epoch {:>3}  tau {:.4}  loss {:.5}  val R@20 {:.4}{}",
                    r.epoch,
                    r.tau,
                    r.mean_loss,
                    r.val_recall_20,
                    if r.improved { "  *" } else { "" }
                );
            }
            if let Some(b) = out.best() {
                println!("best epoch {} val R@20 {:.4}", b.epoch, b.val_recall);
            }
        }
        Command::Evaluate(a) => {
            let mut flags = Vec::new();
            flag(&mut flags, "ks", &a.ks);
            let cfg = resolve_config(&a.common, &flags, env)?;
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let data = proxyrec::dataset::SplitManifest::read(&a.data)?;
            let tasks = if a.task.is_empty() {
                vec![ckpt.meta_parse::<Task>("task")?]
            } else {
                a.task.clone()
            };
            let exec = Executor::with_threads(cfg.threads);
            let reports = commands::evaluate_checkpoint(&ckpt, &data, &tasks, a.split, &cfg.ks, &exec)?;
            let out_dir = a
                .out_dir
                .clone()
                .unwrap_or_else(|| a.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
            commands::write_reports(&out_dir, a.split, &reports)?;
            for r in &reports {
                print!("{}", r.to_table());
            }
        }
        Command::Ablate(a) => {
            let cfg = resolve_config(&a.common, &[], env)?;
            let variants = match &a.variants {
                None => Variant::ALL.to_vec(),
                Some(list) => list
                    .split(',')
                    .map(|v| v.trim().parse::<Variant>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(CliError::Usage)?,
            };
            let rows = commands::ablate(&a.data, &a.out_dir, &cfg, &variants)?;
            print!("{}", commands::ablation_table(&rows));
        }
        Command::Synth(a) => {
            let mut cfg = SyntheticConfig {
                seed: a.seed,
                ..SyntheticConfig::default()
            };
            if let Some(n) = a.sessions {
                cfg.sessions = n;
            }
            if let Some(n) = a.users {
                cfg.users = n;
            }
            let n = commands::write_synthetic(&a.out, &cfg)?;
            println!("wrote {n} interactions to {}", a.out.display());
        }
    }
    Ok(())
}
