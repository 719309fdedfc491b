//! The `pcpg` command line: data generation, training, evaluation, sweeps
//! and gradient self-checks.

pub mod config;
pub mod eval;
pub mod sweep;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::Seq2Seq;
use crate::selfcheck::{self, Mutation};
use crate::tasks::Dataset;
use crate::trainer::{Trainer, CSV_HEADER};

pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pcpg", version, about = "Pseudo-convolutional policy-gradient experiments")]
pub struct Cli {
    /// Experiment file (TOML, `version = 1`). Defaults apply without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test dataset files.
    GenData,
    /// Train one model, writing metrics.csv and checkpoints.
    Train {
        /// Continue from a `last.ckpt`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy and beam CER/WER of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file; the configured val split otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Beam width.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Median val CER over seeds for every kernel x lambda cell.
    Sweep,
    /// Finite-difference checks of every primitive and of the full losses.
    GradCheck {
        /// Negate the PCPG gradient; the suite must then fail.
        #[arg(long)]
        inject_sign_bug: bool,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => return Err(Error::Config(format!("{}: no such config file", p.display()))),
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    for p in [&cfg.data.train, &cfg.data.val, &cfg.data.test].into_iter().flatten() {
        if !p.exists() {
            return Err(Error::Config(format!("{}: no such dataset file", p.display())));
        }
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn refuse_overwrite(paths: &[PathBuf], force: bool) -> Result<()> {
    match paths.iter().find(|p| p.exists()) {
        Some(p) if !force => Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "exists; pass --force to overwrite"),
        )),
        _ => Ok(()),
    }
}

fn emit(out: &mut dyn Write, line: &str) {
    let _ = writeln!(out, "{line}");
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    if let Command::GradCheck { inject_sign_bug } = cli.command {
        let mutation = inject_sign_bug.then_some(Mutation::FlipPcpgSign);
        let reports = selfcheck::run_suite(cli.seed.unwrap_or(0), mutation)?;
        let failed = reports.iter().filter(|r| !r.passed()).count();
        for r in &reports {
            emit(out, &r.to_string());
        }
        emit(out, &format!("{} checks, {failed} failed", reports.len()));
        return Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERIC });
    }
    let cfg = load_config(cli)?;
    let dir = cfg.out_dir.clone();
    match &cli.command {
        Command::GenData => {
            let splits = cfg.splits()?;
            let parts = [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)];
            let paths: Vec<PathBuf> = parts.iter().map(|(n, _)| dir.join(format!("{n}.txt"))).collect();
            refuse_overwrite(&paths, cli.force)?;
            create_dir(&dir)?;
            for ((name, data), path) in parts.iter().zip(&paths) {
                data.save(path)?;
                emit(out, &format!("{name}: {} samples -> {}", data.len(), path.display()));
            }
        }
        Command::Train { resume } => {
            let splits = cfg.splits()?;
            let train = cfg.train_config();
            let mut trainer = match resume {
                Some(p) => Trainer::resume(&Checkpoint::load(p)?, train)?,
                None => {
                    refuse_overwrite(&[dir.join("metrics.csv")], cli.force)?;
                    Trainer::new(Seq2Seq::new(&cfg.model, cfg.seed)?, train)?
                }
            };
            create_dir(&dir)?;
            write_file(&dir.join("config.toml"), &cfg.to_toml())?;
            emit(out, CSV_HEADER);
            let outcome = trainer.run(&splits.train, &splits.val, Some(&dir), |row| {
                let _ = writeln!(out, "{}", row.csv_line());
            })?;
            trainer.best_model().to_checkpoint().save(&dir.join("best.ckpt"))?;
            let summary = serde_json::json!({
                "stop": format!("{:?}", outcome.stop),
                "iterations": outcome.iterations,
                "best_iter": outcome.best_iter,
                "best_val_cer": outcome.best_val_cer,
                "last_val_cer": outcome.last_val_cer,
            });
            write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("json"))?;
            emit(out, &summary.to_string());
        }
        Command::Eval { checkpoint, data, beam } => {
            let model = Seq2Seq::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
            let data = match data {
                Some(p) => Dataset::load(p)?,
                None => cfg.splits()?.val,
            };
            let mut beam_cfg = cfg.beam.clone();
            if let Some(w) = beam {
                if *w == 0 {
                    return Err(Error::Config("--beam must be at least 1".into()));
                }
                beam_cfg.width = *w;
            }
            let report = eval::evaluate(&model, &data, &beam_cfg)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            if cli.out.is_some() {
                create_dir(&dir)?;
                write_file(&dir.join("eval.json"), &text)?;
            }
            emit(out, &text);
        }
        Command::Sweep => {
            let splits = cfg.splits()?;
            let sweep_dir = dir.join("sweep");
            let rows = sweep::run_sweep(&cfg, &splits, &sweep_dir, |line| {
                let _ = writeln!(out, "{line}");
            })?;
            emit(out, sweep::TABLE_HEADER);
            for (i, r) in rows.iter().enumerate() {
                emit(out, &r.csv_line(i));
            }
        }
        Command::GradCheck { .. } => unreachable!("handled above"),
    }
    Ok(EXIT_OK)
}
