//! Command-line front end: experiment runs, gradient checks and reduction
//! checks.
//!
//! Exit codes: 0 success, 1 failure (failed check, divergence, I/O), 2 usage
//! error (bad arguments or config).

pub mod config;
pub mod experiment;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use analog_bptt::gradients::grad_check;
use analog_bptt::reductions::reduce_check;
use clap::{Parser, Subcommand};

use crate::config::{load_experiment, load_gradcheck, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "analog-bptt",
    version,
    about = "Train simulated analog computers with physical backpropagation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Random seed; overrides the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a plant on a task and write log.csv, masks.csv, system.txt and
    /// summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set train.iterations=200`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare physically backpropagated gradients with finite differences
    /// on random toy systems.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Feed state errors through the untransposed feedback kernel
        /// (negative control; the check is expected to fail).
        #[arg(long)]
        break_adjoint: bool,
    },
    /// Check delta-kernel plants against dense MLP/RNN references.
    ReduceCheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(ConfigError("--threads must be at least 1".into()).into()),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(anyhow::anyhow!("thread pool: {e}")),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Run { config, overrides } => run(config, overrides, cli.seed, cli.out.as_deref()),
        Command::Gradcheck {
            config,
            overrides,
            break_adjoint,
        } => gradcheck(
            config.as_deref(),
            overrides,
            *break_adjoint,
            cli.seed,
            cli.out.as_deref(),
        ),
        Command::ReduceCheck { instances, tolerance } => {
            if *instances == 0 {
                return Err(ConfigError("--instances must be at least 1".into()).into());
            }
            let report = reduce_check(*instances, cli.seed.unwrap_or(0), *tolerance)?;
            print!("{}", report.to_text());
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

fn run(config: &Path, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> anyhow::Result<i32> {
    let mut overrides = overrides.to_vec();
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = load_experiment(config, &overrides)?;
    let out_dir = match (out, &cfg.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => o.clone(),
        (None, None) => {
            let stem = config
                .file_stem()
                .map_or("run".into(), |s| s.to_string_lossy().into_owned());
            PathBuf::from("runs").join(stem)
        }
    };
    let mut exp = experiment::build(&cfg)?;
    let outcome = experiment::execute(&mut exp)?;
    experiment::write_artifacts(&exp, &outcome, &cfg, &out_dir)?;
    match (&outcome.final_metric, &outcome.diverged) {
        (Some(m), _) => {
            println!("final_metric={m}");
            println!("metric={} (chance {})", outcome.metric_name, exp.task.chance_level());
            println!("artifacts in {}", out_dir.display());
            Ok(EXIT_OK)
        }
        (None, reason) => {
            eprintln!(
                "training diverged: {}; partial log in {}",
                reason.as_deref().unwrap_or("unknown"),
                out_dir.join("log.csv").display()
            );
            Ok(EXIT_FAILURE)
        }
    }
}

fn gradcheck(
    config: Option<&Path>,
    overrides: &[String],
    break_adjoint: bool,
    seed: Option<u64>,
    out: Option<&Path>,
) -> anyhow::Result<i32> {
    let mut cfg = load_gradcheck(config, overrides)?;
    cfg.break_adjoint |= break_adjoint;
    let report = grad_check(&cfg, seed.unwrap_or(0))?;
    print!("{}", report.to_text());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let f = File::create(dir.join("gradcheck.csv"))?;
        report.write_csv(BufWriter::new(f))?;
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}
