//! Flat `key = value` run configuration.
//!
//! Files hold one assignment per line; blank lines and lines starting with
//! `#` are ignored. Relative paths resolve against the file's directory.
//! The resolved configuration is written back as the run manifest, which can
//! be fed to the same command to reproduce a run.

use std::path::{Path, PathBuf};

use crate::assign::Backend;
use crate::ati::AtiConfig;
use crate::dataset::{AffineShift, SynthParams};
use crate::error::{Error, Result};
use crate::eval::Protocol;
use crate::svm::SvmConfig;

/// Where the source and target samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Files,
    Synth,
}

/// Training data of the non-adapted classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Source samples only.
    Source,
    /// Labeled target samples only.
    Target,
    /// Source samples plus labeled target samples.
    Both,
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(BaselineMode::Source),
            "target" => Ok(BaselineMode::Target),
            "both" => Ok(BaselineMode::Both),
            _ => Err(Error::Config(format!("unknown baseline mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineMode::Source => "source",
            BaselineMode::Target => "target",
            BaselineMode::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Rho,
    NTargets,
    UnknownRatio,
    Seed,
}

impl std::str::FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepVar::Rho),
            "n_targets" | "n-targets" => Ok(SweepVar::NTargets),
            "unknown_ratio" | "unknown-ratio" => Ok(SweepVar::UnknownRatio),
            "seed" => Ok(SweepVar::Seed),
            _ => Err(Error::Config(format!(
                "sweep variable must be rho, n_targets, unknown_ratio or seed, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for SweepVar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepVar::Rho => "rho",
            SweepVar::NTargets => "n_targets",
            SweepVar::UnknownRatio => "unknown_ratio",
            SweepVar::Seed => "seed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataMode,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub labeled_targets: Option<PathBuf>,
    pub synth: SynthParams,
    /// Random subset of this many targets.
    pub n_targets: Option<usize>,
    pub ati: AtiConfig,
    pub svm: SvmConfig,
    pub protocol: Protocol,
    pub seed: u64,
    pub jobs: usize,
    pub baseline_mode: BaselineMode,
    pub sweep_var: Option<SweepVar>,
    pub sweep_values: Vec<f64>,
    /// Repetitions per sweep point, with seeds `seed, seed + 1, ...`.
    pub sweep_seeds: usize,
    pub out_dir: PathBuf,
    pub plot_data: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataMode::Synth,
            source: None,
            target: None,
            truth: None,
            labeled_targets: None,
            synth: SynthParams {
                shift: AffineShift {
                    rotation_deg: 20.0,
                    translation: 2.0,
                    scale: 1.0,
                },
                ..SynthParams::default()
            },
            n_targets: None,
            ati: AtiConfig::default(),
            svm: SvmConfig::default(),
            protocol: Protocol::Os,
            seed: 0,
            jobs: 1,
            baseline_mode: BaselineMode::Source,
            sweep_var: None,
            sweep_values: Vec::new(),
            sweep_seeds: 1,
            out_dir: PathBuf::from("out"),
            plot_data: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key} expects true or false, got {value:?}"))),
    }
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn path(base: &Path, value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(base.join(value))
    }
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn fmt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Applies one `key = value` setting; paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "data" => {
                self.data = match v {
                    "files" => DataMode::Files,
                    "synth" => DataMode::Synth,
                    _ => return Err(Error::Config(format!("data must be files or synth, got {v:?}"))),
                }
            }
            "source" => self.source = path(base, v),
            "target" => self.target = path(base, v),
            "truth" => self.truth = path(base, v),
            "labeled_targets" => self.labeled_targets = path(base, v),
            "synth_classes" => self.synth.n_classes = parse(key, v)?,
            "synth_per_class" => self.synth.n_per_class = parse(key, v)?,
            "synth_dim" => self.synth.dim = parse(key, v)?,
            "synth_rotation" => self.synth.shift.rotation_deg = parse(key, v)?,
            "synth_translation" => self.synth.shift.translation = parse(key, v)?,
            "synth_scale" => self.synth.shift.scale = parse(key, v)?,
            "synth_unknown_ratio" => self.synth.unknown_ratio = parse(key, v)?,
            "synth_source_unknown_ratio" => self.synth.source_unknown_ratio = optional(key, v)?,
            "synth_separation" => self.synth.separation = parse(key, v)?,
            "synth_unknown_clusters" => self.synth.unknown_clusters = parse(key, v)?,
            "n_targets" => self.n_targets = optional(key, v)?,
            "variant" => self.ati.variant = v.parse()?,
            "rho" => self.ati.rho = parse(key, v)?,
            "epsilon" => self.ati.epsilon = parse(key, v)?,
            "max_iter" => self.ati.max_iterations = parse(key, v)?,
            "coverage" => self.ati.coverage = parse_bool(key, v)?,
            "coverage_skips_unknown" => self.ati.coverage_skips_unknown = parse_bool(key, v)?,
            "backend" => self.ati.backend = v.parse()?,
            "svm_c" => self.svm.c = parse(key, v)?,
            "svm_tolerance" => self.svm.tolerance = parse(key, v)?,
            "svm_max_passes" => self.svm.max_passes = parse(key, v)?,
            "svm_bias" => self.svm.include_bias = parse_bool(key, v)?,
            "protocol" => self.protocol = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "baseline_mode" => self.baseline_mode = v.parse()?,
            "sweep_var" => self.sweep_var = if v.is_empty() { None } else { Some(v.parse()?) },
            "sweep_values" => {
                self.sweep_values = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "sweep_seeds" => self.sweep_seeds = parse(key, v)?,
            "out_dir" => self.out_dir = base.join(v),
            "plot_data" => self.plot_data = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key, value, base)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse_str(&text, base)
    }

    /// Turns every relative path into an absolute one, so the manifest is
    /// valid wherever it is stored.
    pub fn absolutize(&mut self) -> Result<()> {
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
        for p in [&mut self.source, &mut self.target, &mut self.truth, &mut self.labeled_targets]
            .into_iter()
            .flatten()
        {
            *p = abs(p)?;
        }
        self.out_dir = abs(&self.out_dir)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.ati.validate()?;
        if !(self.svm.c > 0.0) {
            return Err(Error::Config("svm_c must be positive".into()));
        }
        if self.jobs == 0 || self.sweep_seeds == 0 {
            return Err(Error::Config("jobs and sweep_seeds must be >= 1".into()));
        }
        if self.data == DataMode::Files && (self.source.is_none() || self.target.is_none()) {
            return Err(Error::Config("data = files needs source and target paths".into()));
        }
        Ok(())
    }

    /// Every setting in a fixed order, readable by [`RunConfig::parse_str`].
    pub fn manifest(&self) -> String {
        let s = &self.synth;
        let entries: Vec<(&str, String)> = vec![
            ("data", if self.data == DataMode::Files { "files" } else { "synth" }.to_string()),
            ("source", fmt_path(&self.source)),
            ("target", fmt_path(&self.target)),
            ("truth", fmt_path(&self.truth)),
            ("labeled_targets", fmt_path(&self.labeled_targets)),
            ("synth_classes", s.n_classes.to_string()),
            ("synth_per_class", s.n_per_class.to_string()),
            ("synth_dim", s.dim.to_string()),
            ("synth_rotation", s.shift.rotation_deg.to_string()),
            ("synth_translation", s.shift.translation.to_string()),
            ("synth_scale", s.shift.scale.to_string()),
            ("synth_unknown_ratio", s.unknown_ratio.to_string()),
            ("synth_source_unknown_ratio", fmt_opt(&s.source_unknown_ratio)),
            ("synth_separation", s.separation.to_string()),
            ("synth_unknown_clusters", s.unknown_clusters.to_string()),
            ("n_targets", fmt_opt(&self.n_targets)),
            ("variant", self.ati.variant.to_string()),
            ("rho", self.ati.rho.to_string()),
            ("epsilon", self.ati.epsilon.to_string()),
            ("max_iter", self.ati.max_iterations.to_string()),
            ("coverage", self.ati.coverage.to_string()),
            ("coverage_skips_unknown", self.ati.coverage_skips_unknown.to_string()),
            ("backend", backend_name(self.ati.backend).to_string()),
            ("svm_c", self.svm.c.to_string()),
            ("svm_tolerance", self.svm.tolerance.to_string()),
            ("svm_max_passes", self.svm.max_passes.to_string()),
            ("svm_bias", self.svm.include_bias.to_string()),
            ("protocol", self.protocol.to_string()),
            ("seed", self.seed.to_string()),
            ("jobs", self.jobs.to_string()),
            ("baseline_mode", self.baseline_mode.to_string()),
            ("sweep_var", fmt_opt(&self.sweep_var)),
            (
                "sweep_values",
                self.sweep_values.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            ),
            ("sweep_seeds", self.sweep_seeds.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("plot_data", self.plot_data.to_string()),
        ];
        let mut out = format!("# osda {} run manifest\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Exact => "exact",
        Backend::Heuristic => "heuristic",
        Backend::Auto => "auto",
    }
}
