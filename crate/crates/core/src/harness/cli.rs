//! `latentguard` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::config::{fit, ExperimentConfig};
use super::eval::{evaluate, RobustnessTable, Threat};
use super::landscape::loss_landscape;
use super::seeds::derive_seed;
use super::train::EpochMetrics;
use crate::attacks::PassKind;
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint};

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "LATENTGUARD_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "latentguard",
    version,
    about = "Latent tensor dropout defenses and white-box attack evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// Flat `key = value` experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keep probability of the latent dropout.
    #[arg(long)]
    theta: Option<f64>,
    /// Comma-separated radii in schedule units.
    #[arg(long = "epsilon-list")]
    epsilon_list: Option<String>,
    /// Comma-separated attacks: fgsm, bim, pgd, bpda.
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (relative paths resolve under $LATENTGUARD_OUT when set).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes model.ckpt and metrics.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Attack the test split; writes attack.jsonl and attack.csv.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// White-box robustness sweep; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Attacks on deterministic weights judged with dropout; writes omniscient.csv.
    Omniscient {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Loss surface around one test example; writes landscape.csv.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render a robustness CSV as text; writes report.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// Robustness table CSV.
        input: PathBuf,
    },
}

/// Exit status for an error: 1 configuration/usage, 2 data, 3 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::UnknownModel(_)
        | Error::InvalidModel(_)
        | Error::InvalidEpsilon(_)
        | Error::InvalidProbability(_)
        | Error::InvalidRanks(_) => 1,
        Error::Numeric(_) | Error::Decomposition(_) => 3,
        _ => 2,
    }
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = common.theta {
            cfg.theta = t;
        }
        if let Some(l) = &common.epsilon_list {
            cfg.set("epsilons", l)?;
        }
        if let Some(a) = &common.attack {
            cfg.set("attacks", a)?;
        }
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        let out = match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if out.is_relative() => Path::new(&root).join(out),
            _ => out,
        };
        std::fs::create_dir_all(&out)?;
        Ok(Self { cfg, out })
    }

    fn checkpoint(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    stage: &'a str,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_table(path: &Path, table: &RobustnessTable) -> Result<()> {
    let mut f = create(path)?;
    table.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let ctx = Context::new(&common)?;
            ctx.cfg.validate()?;
            let splits = ctx.cfg.load_data()?;
            let mut metrics = create(&ctx.out.join("metrics.jsonl"))?;
            let mut log_err = None;
            let out = fit(&ctx.cfg, &splits, |stage, m| {
                let line = serde_json::to_string(&MetricsLine { stage, metrics: m }).expect("plain struct");
                if let Err(e) = writeln!(metrics, "{line}") {
                    log_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = log_err {
                return Err(e.into());
            }
            metrics.flush()?;
            let seeds = [("master".to_string(), ctx.cfg.seed)].into_iter().collect();
            let ckpt = ctx.out.join("model.ckpt");
            save_checkpoint(&ckpt, &out.model, out.epochs_run, &seeds)?;
            std::fs::write(ctx.out.join("config.kv"), ctx.cfg.to_kv())?;
            if let Some((stage, last)) = out.history.last() {
                writeln!(
                    stdout,
                    "{stage} epoch {}: loss {:.4}, train {:.1}%, val {:.1}%",
                    last.epoch, last.loss, last.train_accuracy, last.val_accuracy
                )?;
            }
            writeln!(stdout, "checkpoint: {}", ckpt.display())?;
        }
        Command::Attack { common, checkpoint } => {
            let ctx = Context::new(&common)?;
            let mut model = load_checkpoint(&ctx.checkpoint(&checkpoint))?.0;
            if let Some(t) = common.theta {
                let rescale = model.rescale;
                model = model.with_dropout(t, rescale)?;
            }
            let splits = ctx.cfg.load_data()?;
            let ev = evaluate(&model, &splits.test, &ctx.cfg.sweep(), Threat::WhiteBox)?;
            let mut log = create(&ctx.out.join("attack.jsonl"))?;
            for r in &ev.records {
                writeln!(log, "{}", serde_json::to_string(r)?)?;
            }
            log.flush()?;
            write_table(&ctx.out.join("attack.csv"), &ev.table)?;
            write!(stdout, "{}", ev.table.render())?;
        }
        Command::Sweep { common, checkpoint } => {
            let ctx = Context::new(&common)?;
            let mut model = load_checkpoint(&ctx.checkpoint(&checkpoint))?.0;
            if let Some(t) = common.theta {
                let rescale = model.rescale;
                model = model.with_dropout(t, rescale)?;
            }
            let splits = ctx.cfg.load_data()?;
            let table = evaluate(&model, &splits.test, &ctx.cfg.sweep(), Threat::WhiteBox)?.table;
            write_table(&ctx.out.join("sweep.csv"), &table)?;
            write!(stdout, "{}", table.render())?;
        }
        Command::Omniscient { common, checkpoint } => {
            let ctx = Context::new(&common)?;
            let model = load_checkpoint(&ctx.checkpoint(&checkpoint))?.0;
            let theta = common.theta.unwrap_or(ctx.cfg.omniscient_theta);
            let splits = ctx.cfg.load_data()?;
            let table = evaluate(
                &model,
                &splits.test,
                &ctx.cfg.sweep(),
                Threat::Omniscient { theta_defense: theta },
            )?
            .table;
            write_table(&ctx.out.join("omniscient.csv"), &table)?;
            write!(stdout, "{}", table.render())?;
        }
        Command::Landscape { common, checkpoint } => {
            let ctx = Context::new(&common)?;
            let model = load_checkpoint(&ctx.checkpoint(&checkpoint))?.0;
            let splits = ctx.cfg.load_data()?;
            if ctx.cfg.landscape_index >= splits.test.len() {
                return Err(Error::Data(format!(
                    "landscape index {} outside the {}-example test split",
                    ctx.cfg.landscape_index,
                    splits.test.len()
                )));
            }
            let (x, y) = splits.test.example(ctx.cfg.landscape_index);
            let grid = loss_landscape(
                &model,
                &x,
                y,
                ctx.cfg.landscape_n,
                ctx.cfg.landscape_range,
                PassKind::Deterministic,
                derive_seed(ctx.cfg.seed, "landscape", &[]),
            )?;
            let path = ctx.out.join("landscape.csv");
            let mut f = create(&path)?;
            grid.write_csv(&mut f)?;
            f.flush()?;
            writeln!(stdout, "{}×{} grid written to {}", grid.n, grid.n, path.display())?;
        }
        Command::Report { common, input } => {
            let ctx = Context::new(&common)?;
            let table = RobustnessTable::read_csv(File::open(&input)?)?;
            write_table(&ctx.out.join("report.csv"), &table)?;
            write!(stdout, "{}", table.render())?;
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
