//! Alternating assignment and transformation.
//!
//! Every iteration labels the targets against the class means of the current
//! (already mapped) source, then refits the map on the matched pairs. The map
//! is always fitted from the original source means and warm-started at the
//! previous map, so the returned transform is the full composite map and
//! `adapted = W · source`.
//!
//! The loop stops when the matching residual
//! `√(Σ_t Σ_c x_ct ‖W S_c − T_t‖²)` drops below `epsilon`, when an
//! iteration reproduces the previous assignment (every later iteration would
//! repeat it, so the outputs are final), or at `max_iterations`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assign::{
    build_neighbors, compute_costs, lambda_from_costs, linear_objective, solve_locality,
    solve_semi_supervised, solve_unsupervised, Assignment, Backend, ClassDistanceMatrix,
    NeighborGraph, SolveConfig,
};
use crate::dataset::{class_means, Dataset, MeanTable};
use crate::error::{Error, Result};
use crate::rng;
use crate::transform::{build_pairs, estimate_transform, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// No outliers.
    Ati,
    /// Outlier rejection at `λ = ρ (max d + min d)`.
    AtiLambda,
    /// Outlier rejection plus agreement with the `k` nearest targets.
    AtiLambdaN(usize),
}

impl Variant {
    pub fn neighbor_k(&self) -> usize {
        match self {
            Variant::AtiLambdaN(k) => *k,
            _ => 0,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ati" => Ok(Variant::Ati),
            "ati-lambda" => Ok(Variant::AtiLambda),
            "ati-lambda-n1" => Ok(Variant::AtiLambdaN(1)),
            "ati-lambda-n2" => Ok(Variant::AtiLambdaN(2)),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected ati, ati-lambda, ati-lambda-n1 or ati-lambda-n2)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Ati => f.write_str("ati"),
            Variant::AtiLambda => f.write_str("ati-lambda"),
            Variant::AtiLambdaN(k) => write!(f, "ati-lambda-n{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtiConfig {
    pub variant: Variant,
    pub rho: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub coverage: bool,
    /// Leave the unknown class out of the coverage requirement.
    pub coverage_skips_unknown: bool,
    /// `(target index, catalog class)` pairs known in advance.
    pub labeled_targets: Vec<(usize, usize)>,
    /// Replaces the first iteration's assignment (catalog classes per target).
    pub initial_assignment: Option<Vec<Option<usize>>>,
    pub backend: Backend,
}

impl Default for AtiConfig {
    fn default() -> Self {
        AtiConfig {
            variant: Variant::AtiLambda,
            rho: 0.5,
            epsilon: 0.01,
            max_iterations: 10,
            coverage: true,
            coverage_skips_unknown: false,
            labeled_targets: Vec::new(),
            initial_assignment: None,
            backend: Backend::Auto,
        }
    }
}

impl AtiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        if self.variant.neighbor_k() > 2 {
            return Err(Error::Config("neighbourhood size must be 0, 1 or 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub n_assigned: usize,
    pub n_outliers: usize,
    pub objective: f64,
    pub stop_metric: f64,
    /// Share of assigned targets matched to their true class.
    pub assignment_accuracy: Option<f64>,
    /// Per target, the catalog class it was matched to.
    pub assignment: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    FixedPoint,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct AtiResult {
    pub adapted: Dataset,
    pub transform: Transform,
    pub history: Vec<IterationRecord>,
    pub stop: StopReason,
}

struct Problem<'a> {
    target: &'a Dataset,
    cfg: &'a AtiConfig,
    neighbors: Option<NeighborGraph>,
}

impl Problem<'_> {
    fn solve_config(&self, means: &MeanTable, lambda: f64) -> Result<SolveConfig> {
        let catalog = self.target.catalog();
        let mut fixed = Vec::with_capacity(self.cfg.labeled_targets.len());
        for &(t, c) in &self.cfg.labeled_targets {
            let row = means.row_of(c).ok_or_else(|| {
                Error::Config(format!(
                    "labeled target {t} has class {:?}, which the source lacks",
                    catalog.name(c)
                ))
            })?;
            fixed.push((t, row));
        }
        Ok(SolveConfig {
            lambda,
            coverage: self.cfg.coverage,
            coverage_exempt: if self.cfg.coverage_skips_unknown {
                means.row_of(catalog.unknown_index())
            } else {
                None
            },
            fixed_labels: fixed,
            neighbor_k: self.cfg.variant.neighbor_k(),
            backend: self.cfg.backend,
        })
    }

    fn assign(&self, means: &MeanTable, first: bool) -> Result<(Assignment, f64)> {
        let d = compute_costs(means, self.target)?;
        let lambda = match self.cfg.variant {
            Variant::Ati => f64::INFINITY,
            _ => lambda_from_costs(&d, self.cfg.rho),
        };
        let solve = self.solve_config(means, lambda)?;
        if first {
            if let Some(forced) = &self.cfg.initial_assignment {
                let rows = forced
                    .iter()
                    .map(|l| match l {
                        None => Ok(None),
                        Some(c) => means
                            .row_of(*c)
                            .map(Some)
                            .ok_or_else(|| Error::Config(format!("initial assignment uses absent class {c}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                if rows.len() != self.target.len() {
                    return Err(Error::Config("initial assignment length differs from the target".into()));
                }
                let objective = linear_objective(&d, &rows, lambda);
                return Ok((Assignment::new(rows, means.len(), objective)?, lambda));
            }
        }
        let a = match &self.neighbors {
            Some(nbrs) => solve_locality(&d, &ClassDistanceMatrix::from_means(means), nbrs, &solve)?,
            None if solve.fixed_labels.is_empty() => solve_unsupervised(&d, &solve)?,
            None => solve_semi_supervised(&d, &solve)?,
        };
        Ok((a, lambda))
    }
}

/// Runs the alternation. `truth` (catalog class per target) only feeds the
/// assignment accuracy in the history.
pub fn run_ati(source: &Dataset, target: &Dataset, cfg: &AtiConfig, truth: Option<&[usize]>) -> Result<AtiResult> {
    cfg.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::Dimension {
            expected: source.dim(),
            got: target.dim(),
        });
    }
    if source.catalog() != target.catalog() {
        return Err(Error::Label("source and target use different class catalogs".into()));
    }
    if truth.is_some_and(|t| t.len() != target.len()) {
        return Err(Error::Data("ground truth length differs from the target".into()));
    }
    let catalog = source.catalog();
    let neighbors = match cfg.variant.neighbor_k() {
        0 => None,
        k => Some(build_neighbors(target, k)?),
    };
    let problem = Problem {
        target,
        cfg,
        neighbors,
    };
    let original = class_means(source, catalog)?;

    let dim = source.dim();
    let mut current = source.clone();
    let mut transform = Transform::identity(dim);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut stop = StopReason::MaxIterations;
    for k in 1..=cfg.max_iterations {
        let at = |e: Error| Error::AtIteration {
            iteration: k,
            source: Box::new(e),
        };
        let means = class_means(&current, catalog).map_err(at)?;
        let (assignment, lambda) = problem.assign(&means, k == 1).map_err(at)?;
        let pairs = build_pairs(&assignment, &original, target).map_err(at)?;
        transform = if pairs.is_empty() {
            // everything rejected: nothing to fit, keep the current map
            Transform::from_matrix(transform.matrix().clone()).map_err(at)?
        } else {
            estimate_transform(&pairs, transform.matrix()).map_err(at)?
        };
        current = source.with_features(transform.matrix() * source.features()).map_err(at)?;

        let labels: Vec<Option<usize>> = assignment
            .labels()
            .iter()
            .map(|l| l.map(|row| means.classes()[row]))
            .collect();
        let accuracy = truth.and_then(|truth| {
            let assigned: Vec<(usize, usize)> = labels
                .iter()
                .enumerate()
                .filter_map(|(t, l)| l.map(|c| (t, c)))
                .collect();
            (!assigned.is_empty()).then(|| {
                assigned.iter().filter(|&&(t, c)| truth[t] == c).count() as f64 / assigned.len() as f64
            })
        });
        let metric = (2.0 * transform.residual).sqrt();
        let repeated = history.last().is_some_and(|prev| prev.assignment == labels);
        history.push(IterationRecord {
            iteration: k,
            lambda,
            n_assigned: assignment.n_assigned(),
            n_outliers: assignment.n_outliers(),
            objective: assignment.objective(),
            stop_metric: metric,
            assignment_accuracy: accuracy,
            assignment: labels,
        });
        if !metric.is_finite() {
            return Err(at(Error::Numerical("stop metric is not finite".into())));
        }
        if metric < cfg.epsilon {
            stop = StopReason::Converged;
            break;
        }
        if repeated {
            stop = StopReason::FixedPoint;
            break;
        }
    }
    Ok(AtiResult {
        adapted: current,
        transform,
        history,
        stop,
    })
}

/// First-iteration assignment with `fraction` of the targets on their true
/// class and the rest drawn uniformly from `n_classes` classes.
pub fn seed_assignments(truth: &[usize], n_classes: usize, fraction: f64, seed: u64) -> Result<Vec<Option<usize>>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if n_classes == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    let n = truth.len();
    let n_correct = (fraction * n as f64).round() as usize;
    let mut r = rng::stream(seed, "seed-assignments");
    let mut correct = vec![false; n];
    for i in rand::seq::index::sample(&mut r, n, n_correct) {
        correct[i] = true;
    }
    Ok((0..n)
        .map(|t| {
            if correct[t] && truth[t] < n_classes {
                Some(truth[t])
            } else {
                Some(r.random_range(0..n_classes))
            }
        })
        .collect())
}

fn number(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,lambda,n_assigned,n_outliers,objective,stop_metric,assign_acc\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            number(r.lambda),
            r.n_assigned,
            r.n_outliers,
            number(r.objective),
            number(r.stop_metric),
            r.assignment_accuracy.map(number).unwrap_or_default()
        );
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &[IterationRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}
