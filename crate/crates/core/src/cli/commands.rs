//! The subcommands. Each writes its artifacts plus a manifest to the run's
//! output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::assign::{solve_locality, solve_semi_supervised, InstanceDump};
use crate::ati::{write_history, StopReason};
use crate::dataset::{
    load_features, make_open_set_split, synth_shift, write_features, write_truth, Dataset,
    LoadOptions, OpenSetSplit, Role, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{summarize, EvalReport, Summary};
use crate::oracle::brute_force_assignment;

use super::config::{DataMode, RunConfig, SweepVar};
use super::pipeline::{adapt, baseline, load_inputs, Classified};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

/// Runs `f` on a pool of `jobs` threads.
fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?
        .install(f)
}

fn write_predictions(path: &Path, target: &Dataset, predictions: &[usize]) -> Result<()> {
    let mut out = String::from("id,predicted\n");
    for (id, &c) in target.ids().iter().zip(predictions) {
        out.push_str(id);
        out.push(',');
        out.push_str(target.catalog().name(c));
        out.push('\n');
    }
    write(path, out)
}

fn write_classified(dir: &Path, cfg: &RunConfig, target: &Dataset, result: &Classified) -> Result<()> {
    result.model.save(dir.join("model.json"))?;
    write_predictions(&dir.join("predictions.csv"), target, &result.predictions)?;
    if let Some(report) = &result.report {
        report.save(dir.join("report.json"))?;
        report.write_confusion(dir.join("confusion.csv"))?;
        if cfg.plot_data {
            report.write_plot_data(dir.join("confusion.dat"))?;
        }
    }
    Ok(())
}

fn write_timing(dir: &Path, started: Instant) -> Result<()> {
    #[derive(Serialize)]
    struct Timing {
        wall_seconds: f64,
    }
    write_json(
        &dir.join("timing.json"),
        &Timing {
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    )
}

/// Prepares the output directory and writes the manifest.
fn start(cfg: &RunConfig) -> Result<RunConfig> {
    let mut cfg = cfg.clone();
    cfg.absolutize()?;
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("manifest.cfg"), cfg.manifest())?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptSummary {
    pub variant: String,
    pub iterations: usize,
    pub stop: StopReason,
    pub final_stop_metric: f64,
    /// Share of targets matched to a class in the last iteration, in percent.
    pub selected_percent: f64,
    pub report: Option<EvalReport>,
}

pub fn cmd_adapt(cfg: &RunConfig) -> Result<AdaptSummary> {
    let started = Instant::now();
    let cfg = start(cfg)?;
    let dir = &cfg.out_dir;
    let inputs = load_inputs(&cfg)?;
    let out = with_jobs(cfg.jobs, || adapt(&inputs, &cfg))?;
    let last = out.ati.history.last().expect("at least one iteration");
    let summary = AdaptSummary {
        variant: cfg.ati.variant.to_string(),
        iterations: out.ati.history.len(),
        stop: out.ati.stop,
        final_stop_metric: last.stop_metric,
        selected_percent: 100.0 * last.n_assigned as f64 / inputs.target.len() as f64,
        report: out.classified.report.clone(),
    };
    write_features(dir.join("adapted_source.csv"), &out.ati.adapted)?;
    out.ati.transform.save(dir.join("transform.json"))?;
    write_history(dir.join("history.csv"), &out.ati.history)?;
    write_classified(dir, &cfg, &inputs.target, &out.classified)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_timing(dir, started)?;
    Ok(summary)
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<Option<EvalReport>> {
    let started = Instant::now();
    let cfg = start(cfg)?;
    let inputs = load_inputs(&cfg)?;
    let result = with_jobs(cfg.jobs, || baseline(&inputs, &cfg, cfg.baseline_mode))?;
    write_classified(&cfg.out_dir, &cfg, &inputs.target, &result)?;
    write_timing(&cfg.out_dir, started)?;
    Ok(result.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_class_accuracy: f64,
    pub baseline_accuracy: f64,
    pub selected_percent: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub accuracy: Summary,
    pub baseline_accuracy: Summary,
    pub selected_percent: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub variable: String,
    pub points: Vec<SweepPoint>,
    pub runs: Vec<SweepRun>,
}

fn sweep_config(base: &RunConfig, var: SweepVar, value: f64, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    match var {
        SweepVar::Rho => cfg.ati.rho = value,
        SweepVar::NTargets => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("n_targets must be a positive integer, got {value}")));
            }
            cfg.n_targets = Some(value as usize);
        }
        SweepVar::UnknownRatio => {
            if cfg.data != DataMode::Synth {
                return Err(Error::Config("an unknown_ratio sweep needs synthetic data".into()));
            }
            cfg.synth.unknown_ratio = value;
        }
        SweepVar::Seed => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep_run(cfg: &RunConfig, value: f64) -> Result<SweepRun> {
    let inputs = load_inputs(cfg)?;
    if inputs.truth.is_none() {
        return Err(Error::Config("sweeps need ground truth to score".into()));
    }
    let out = adapt(&inputs, cfg)?;
    let base = baseline(&inputs, cfg, cfg.baseline_mode)?;
    let report = out.classified.report.expect("truth present");
    let last = out.ati.history.last().expect("at least one iteration");
    Ok(SweepRun {
        value,
        seed: cfg.seed,
        accuracy: report.overall_accuracy,
        mean_class_accuracy: report.mean_class_accuracy,
        baseline_accuracy: base.report.expect("truth present").overall_accuracy,
        selected_percent: 100.0 * last.n_assigned as f64 / inputs.target.len() as f64,
        iterations: out.ati.history.len(),
    })
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let started = Instant::now();
    let cfg = start(cfg)?;
    let var = cfg
        .sweep_var
        .ok_or_else(|| Error::Config("sweep needs sweep_var".into()))?;
    if cfg.sweep_values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut grid = Vec::new();
    for &value in &cfg.sweep_values {
        if var == SweepVar::Seed {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("seeds must be non-negative integers, got {value}")));
            }
            grid.push((value, value as u64));
        } else {
            for rep in 0..cfg.sweep_seeds as u64 {
                grid.push((value, cfg.seed.wrapping_add(rep)));
            }
        }
    }
    let runs: Vec<SweepRun> = with_jobs(cfg.jobs, || {
        grid.par_iter()
            .map(|&(value, seed)| sweep_run(&sweep_config(&cfg, var, value, seed)?, value))
            .collect()
    })?;
    let mut points = Vec::new();
    for &value in &cfg.sweep_values {
        let at: Vec<&SweepRun> = runs.iter().filter(|r| r.value == value).collect();
        if at.is_empty() || points.iter().any(|p: &SweepPoint| p.value == value) {
            continue;
        }
        let pick = |f: fn(&SweepRun) -> f64| summarize(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
        points.push(SweepPoint {
            value,
            accuracy: pick(|r| r.accuracy)?,
            baseline_accuracy: pick(|r| r.baseline_accuracy)?,
            selected_percent: pick(|r| r.selected_percent)?,
        });
    }
    let report = SweepReport {
        variable: var.to_string(),
        points,
        runs,
    };
    let dir = &cfg.out_dir;
    write_json(&dir.join("sweep.json"), &report)?;
    write(&dir.join("sweep.csv"), sweep_csv(&report))?;
    write_timing(dir, started)?;
    Ok(report)
}

fn sweep_csv(report: &SweepReport) -> String {
    let mut out = format!(
        "{},runs,accuracy_mean,accuracy_min,accuracy_max,accuracy_std,baseline_mean,selected_percent\n",
        report.variable
    );
    for p in &report.points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.value,
            p.accuracy.n,
            p.accuracy.mean,
            p.accuracy.min,
            p.accuracy.max,
            p.accuracy.std,
            p.baseline_accuracy.mean,
            p.selected_percent.mean
        ));
    }
    out
}

fn write_split(dir: &Path, source: &Dataset, target: &Dataset, truth: &crate::dataset::GroundTruth) -> Result<()> {
    ensure_dir(dir)?;
    write_features(dir.join("source.csv"), source)?;
    write_features(dir.join("target.csv"), target)?;
    write_truth(dir.join("truth.csv"), truth)
}

/// Arguments of the `split` command.
#[derive(Debug, Clone)]
pub struct SplitArgs {
    pub pool: PathBuf,
    pub target_pool: Option<PathBuf>,
    pub spec: SplitSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub fn cmd_split(args: &SplitArgs) -> Result<OpenSetSplit> {
    let fine = LoadOptions {
        role: Role::Source,
        catalog: None,
        strict: true,
    };
    let pool = load_features(&args.pool, &fine)?;
    let target_pool = args
        .target_pool
        .as_ref()
        .map(|p| load_features(p, &fine))
        .transpose()?;
    let split = make_open_set_split(&pool, target_pool.as_ref(), &args.spec, args.seed)?;
    write_split(&args.out_dir, &split.source, &split.target, &split.truth)?;
    Ok(split)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let cfg = start(cfg)?;
    let data = synth_shift(&cfg.synth, cfg.seed)?;
    write_split(&cfg.out_dir, &data.source, &data.target, &data.truth)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub optimum: f64,
    pub candidate: f64,
    /// Where the candidate came from: the dump itself or a fresh solve.
    pub candidate_source: String,
    pub agrees: bool,
}

/// Compares the optimum found by exhaustive search with the solution stored
/// in the dump, or with a fresh solve when the dump holds none.
pub fn cmd_check(path: &Path) -> Result<CheckOutcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dump: InstanceDump = serde_json::from_str(&text)?;
    let costs = dump.cost_matrix()?;
    let cfg = dump.solve_config();
    let locality = dump.locality()?;
    let optimum = brute_force_assignment(&costs, locality.as_ref().map(|(d, n)| (d, n)), &cfg)?;
    let (candidate, candidate_source) = match dump.assignment()? {
        Some(a) => (a, "dump".to_string()),
        None => {
            let a = match &locality {
                Some((dcc, nbrs)) => solve_locality(&costs, dcc, nbrs, &cfg)?,
                None => solve_semi_supervised(&costs, &cfg)?,
            };
            (a, "solver".to_string())
        }
    };
    let tol = 1e-9 * optimum.objective().abs().max(1.0);
    let outcome = CheckOutcome {
        optimum: optimum.objective(),
        candidate: candidate.objective(),
        candidate_source,
        agrees: (candidate.objective() - optimum.objective()).abs() <= tol,
    };
    if !outcome.agrees {
        return Err(Error::Check(format!(
            "candidate objective {} differs from the optimum {}",
            outcome.candidate, outcome.optimum
        )));
    }
    Ok(outcome)
}
