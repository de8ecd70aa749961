//! Command-line front end.
//!
//! Runs are described by a flat config file (see [`config`]); a few common
//! settings also have dedicated flags, and `--set key=value` overrides any
//! other key.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use commands::SplitArgs;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "osda", version, about = "Open-set domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Adapt the source to the target, classify and score.
    Adapt(RunArgs),
    /// Classify without adaptation.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        /// Training data: source, target (labeled targets) or both.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Repeat `adapt` over a grid of values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// rho, n_targets, unknown_ratio or seed.
        #[arg(long = "var")]
        var: Option<String>,
        /// Comma-separated grid values.
        #[arg(long)]
        values: Option<String>,
        /// Repetitions per grid point.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Build an open-set source/target split from labeled pools.
    Split {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        target_pool: Option<PathBuf>,
        /// Shared class positions (1-based, alphabetical), e.g. 1-10.
        #[arg(long)]
        shared: String,
        #[arg(long, default_value = "")]
        source_unknown: String,
        #[arg(long, default_value = "")]
        target_unknown: String,
        #[arg(long)]
        source_per_class: Option<usize>,
        #[arg(long)]
        target_per_class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic source/target pair.
    Synth(RunArgs),
    /// Verify a dumped assignment instance by exhaustive search.
    Check { instance: PathBuf },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config file with key = value lines.
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    svm_c: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    labeled_targets: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Also write a gnuplot-ready confusion matrix.
    #[arg(long)]
    plot_data: bool,
    /// Any other config key, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let here = Path::new(".");
        let flags = [
            ("variant", &self.variant),
            ("rho", &self.rho),
            ("epsilon", &self.epsilon),
            ("max_iter", &self.max_iter),
            ("svm_c", &self.svm_c),
            ("protocol", &self.protocol),
            ("seed", &self.seed),
            ("jobs", &self.jobs),
            ("labeled_targets", &self.labeled_targets),
            ("out_dir", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v, here)?;
            }
        }
        if self.plot_data {
            cfg.plot_data = true;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k, v, here)?;
        }
        Ok(cfg)
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Adapt(run) => print_json(&commands::cmd_adapt(&run.resolve()?)?),
        Command::Baseline { run, mode } => {
            let mut cfg = run.resolve()?;
            if let Some(m) = mode {
                cfg.set("baseline_mode", &m, Path::new("."))?;
            }
            print_json(&commands::cmd_baseline(&cfg)?)
        }
        Command::Sweep {
            run,
            var,
            values,
            seeds,
        } => {
            let mut cfg = run.resolve()?;
            let here = Path::new(".");
            if let Some(v) = var {
                cfg.set("sweep_var", &v, here)?;
            }
            if let Some(v) = values {
                cfg.set("sweep_values", &v, here)?;
            }
            if let Some(n) = seeds {
                cfg.sweep_seeds = n;
            }
            let report = commands::cmd_sweep(&cfg)?;
            print_json(&report.points)
        }
        Command::Split {
            pool,
            target_pool,
            shared,
            source_unknown,
            target_unknown,
            source_per_class,
            target_per_class,
            seed,
            out,
        } => {
            let spec = SplitSpec {
                shared: SplitSpec::parse_range(&shared)?
                    .ok_or_else(|| Error::Config("the shared range cannot be empty".into()))?,
                source_unknown: SplitSpec::parse_range(&source_unknown)?,
                target_unknown: SplitSpec::parse_range(&target_unknown)?,
                source_per_class,
                target_per_class,
            };
            let split = commands::cmd_split(&SplitArgs {
                pool,
                target_pool,
                spec,
                seed,
                out_dir: out,
            })?;
            println!(
                "source: {} samples, target: {} samples",
                split.source.len(),
                split.target.len()
            );
            Ok(())
        }
        Command::Synth(run) => commands::cmd_synth(&run.resolve()?),
        Command::Check { instance } => print_json(&commands::cmd_check(&instance)?),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
