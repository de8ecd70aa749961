//! Assignment of target samples to source classes.
//!
//! Three problems share one solution type:
//!
//! * the linear problem: every target takes one class (cost `d_ct`) or is
//!   rejected as an outlier (cost `λ`), and every class receives at least
//!   one target ([`solve_unsupervised`], solved exactly as a min-cost flow);
//! * the same with some targets pinned to known labels
//!   ([`solve_semi_supervised`]);
//! * the locality-constrained problem, which adds `d_cc'` whenever a target
//!   and one of its k nearest target neighbours take classes `c` and `c'`
//!   ([`solve_locality`]).
//!
//! Rows of a [`CostMatrix`] are rows of the [`MeanTable`] it was built from,
//! not catalog indices.

mod flow;
mod locality;
mod neighbors;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MeanTable};
use crate::error::{Error, Result};

pub use flow::{solve_semi_supervised, solve_unsupervised};
pub use locality::{solve_locality, LinearizedProgram};
pub use neighbors::{build_neighbors, NeighborGraph};

/// `d_ct = ‖S_c − T_t‖²`, classes × targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(DMatrix<f64>);

impl CostMatrix {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data("costs must be finite and non-negative".into()));
        }
        Ok(CostMatrix(d))
    }

    pub fn n_classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, class: usize, target: usize) -> f64 {
        self.0[(class, target)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    pub fn max(&self) -> f64 {
        self.0.max()
    }
}

/// `d_cc' = ‖S_c − S_c'‖²` between class means.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistanceMatrix(DMatrix<f64>);

impl ClassDistanceMatrix {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: d.ncols(),
            });
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::Data("class distances need a zero diagonal".into()));
            }
            for j in 0..n {
                if !(d[(i, j)] >= 0.0 && d[(i, j)].is_finite()) || d[(i, j)] != d[(j, i)] {
                    return Err(Error::Data(
                        "class distances must be symmetric, finite and non-negative".into(),
                    ));
                }
            }
        }
        Ok(ClassDistanceMatrix(d))
    }

    pub fn from_means(means: &MeanTable) -> Self {
        let m = means.means();
        let n = means.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v = squared_distance(m.column(i).iter(), m.column(j).iter());
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        ClassDistanceMatrix(d)
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0[(a, b)]
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn squared_distance<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn compute_costs(means: &MeanTable, targets: &Dataset) -> Result<CostMatrix> {
    if means.dim() != targets.dim() {
        return Err(Error::Dimension {
            expected: means.dim(),
            got: targets.dim(),
        });
    }
    let m = means.means();
    let x = targets.features();
    let d = DMatrix::from_fn(means.len(), targets.len(), |c, t| {
        squared_distance(m.column(c).iter(), x.column(t).iter())
    });
    Ok(CostMatrix(d))
}

/// Outlier cost `ρ · (max d_ct + min d_ct)`.
pub fn lambda_from_costs(d: &CostMatrix, rho: f64) -> f64 {
    rho * (d.max() + d.min())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Heuristic,
    #[default]
    Auto,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "heuristic" => Ok(Backend::Heuristic),
            "auto" => Ok(Backend::Auto),
            _ => Err(Error::Config(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Outlier cost; `f64::INFINITY` forbids outliers.
    pub lambda: f64,
    /// Require at least one target per class.
    pub coverage: bool,
    /// Class row excluded from the coverage requirement.
    pub coverage_exempt: Option<usize>,
    /// `(target, class row)` pairs that must hold in the solution.
    pub fixed_labels: Vec<(usize, usize)>,
    pub neighbor_k: usize,
    pub backend: Backend,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            lambda: f64::INFINITY,
            coverage: true,
            coverage_exempt: None,
            fixed_labels: Vec::new(),
            neighbor_k: 0,
            backend: Backend::Auto,
        }
    }
}

impl SolveConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        SolveConfig {
            lambda,
            ..SolveConfig::default()
        }
    }

    /// Validates against an instance; returns the fixed class per target.
    pub fn fixed_per_target(&self, n_classes: usize, n_targets: usize) -> Result<Vec<Option<usize>>> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let mut fixed = vec![None; n_targets];
        for &(t, c) in &self.fixed_labels {
            if t >= n_targets || c >= n_classes {
                return Err(Error::Config(format!(
                    "fixed label ({t}, {c}) outside a {n_classes}x{n_targets} instance"
                )));
            }
            match fixed[t] {
                Some(prev) if prev != c => {
                    return Err(Error::Config(format!(
                        "target {t} fixed to both class {prev} and class {c}"
                    )))
                }
                _ => fixed[t] = Some(c),
            }
        }
        Ok(fixed)
    }

    /// Whether class row `c` must receive a target.
    pub fn requires(&self, c: usize) -> bool {
        self.coverage && self.coverage_exempt != Some(c)
    }
}

/// Solution: per target a class row or `None` (outlier), plus the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<Option<usize>>,
    n_classes: usize,
    objective: f64,
}

impl Assignment {
    pub fn new(labels: Vec<Option<usize>>, n_classes: usize, objective: f64) -> Result<Self> {
        if labels.iter().flatten().any(|&c| c >= n_classes) {
            return Err(Error::Data("assignment references a class outside the instance".into()));
        }
        Ok(Assignment {
            labels,
            n_classes,
            objective,
        })
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, t: usize) -> Option<usize> {
        self.labels[t]
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_targets(&self) -> usize {
        self.labels.len()
    }

    /// `x_ct`
    pub fn x(&self, c: usize, t: usize) -> bool {
        self.labels[t] == Some(c)
    }

    /// `o_t`
    pub fn o(&self, t: usize) -> bool {
        self.labels[t].is_none()
    }

    pub fn x_matrix(&self) -> DMatrix<u8> {
        DMatrix::from_fn(self.n_classes, self.labels.len(), |c, t| u8::from(self.x(c, t)))
    }

    pub fn n_outliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn n_assigned(&self) -> usize {
        self.labels.len() - self.n_outliers()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for c in self.labels.iter().flatten() {
            counts[*c] += 1;
        }
        counts
    }

    /// Same labels with the objective recomputed by the caller.
    pub fn with_objective(mut self, objective: f64) -> Self {
        self.objective = objective;
        self
    }
}

/// Linear objective `Σ_t Σ_c d_ct x_ct + λ o_t`.
pub fn linear_objective(d: &CostMatrix, labels: &[Option<usize>], lambda: f64) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(t, l)| match l {
            Some(c) => d.get(*c, t),
            None => lambda,
        })
        .sum()
}

/// Locality objective: the linear objective plus `d_{c_t c_t'}` for every
/// target `t` and neighbour `t' ∈ N_t` that are both assigned.
pub fn locality_objective(
    d: &CostMatrix,
    dcc: &ClassDistanceMatrix,
    nbrs: &NeighborGraph,
    labels: &[Option<usize>],
    lambda: f64,
) -> f64 {
    let mut total = linear_objective(d, labels, lambda);
    for (t, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            for &u in nbrs.neighbors(t) {
                if let Some(cu) = labels[u] {
                    total += dcc.get(*c, cu);
                }
            }
        }
    }
    total
}

/// JSON dump of an instance and its solution, read back by `osda check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDump {
    pub costs: Vec<Vec<f64>>,
    /// `null` encodes λ = ∞.
    pub lambda: Option<f64>,
    #[serde(default = "default_true")]
    pub coverage: bool,
    #[serde(default)]
    pub coverage_exempt: Option<usize>,
    #[serde(default)]
    pub fixed: Vec<(usize, usize)>,
    #[serde(default)]
    pub dcc: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub neighbors: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub x: Option<Vec<Vec<u8>>>,
    #[serde(default)]
    pub o: Option<Vec<u8>>,
    #[serde(default)]
    pub objective: Option<f64>,
}

fn default_true() -> bool {
    true
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Data("ragged matrix in instance dump".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl InstanceDump {
    pub fn new(d: &CostMatrix, cfg: &SolveConfig, solution: Option<&Assignment>) -> Self {
        InstanceDump {
            costs: matrix_to_rows(d.matrix()),
            lambda: cfg.lambda.is_finite().then_some(cfg.lambda),
            coverage: cfg.coverage,
            coverage_exempt: cfg.coverage_exempt,
            fixed: cfg.fixed_labels.clone(),
            dcc: None,
            neighbors: None,
            x: solution.map(|a| {
                let x = a.x_matrix();
                x.row_iter().map(|r| r.iter().copied().collect()).collect()
            }),
            o: solution.map(|a| (0..a.n_targets()).map(|t| u8::from(a.o(t))).collect()),
            objective: solution.map(Assignment::objective),
        }
    }

    pub fn with_locality(mut self, dcc: &ClassDistanceMatrix, nbrs: &NeighborGraph) -> Self {
        self.dcc = Some(matrix_to_rows(dcc.matrix()));
        self.neighbors = Some(nbrs.lists().to_vec());
        self
    }

    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        CostMatrix::new(rows_to_matrix(&self.costs)?)
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            lambda: self.lambda.unwrap_or(f64::INFINITY),
            coverage: self.coverage,
            coverage_exempt: self.coverage_exempt,
            fixed_labels: self.fixed.clone(),
            neighbor_k: self.neighbors.as_ref().and_then(|n| n.first()).map_or(0, Vec::len),
            backend: Backend::Auto,
        }
    }

    pub fn locality(&self) -> Result<Option<(ClassDistanceMatrix, NeighborGraph)>> {
        match (&self.dcc, &self.neighbors) {
            (Some(dcc), Some(n)) => Ok(Some((
                ClassDistanceMatrix::new(rows_to_matrix(dcc)?)?,
                NeighborGraph::from_lists(n.clone())?,
            ))),
            (None, None) => Ok(None),
            _ => Err(Error::Data("instance dump needs both dcc and neighbors".into())),
        }
    }

    /// The stored solution, if any.
    pub fn assignment(&self) -> Result<Option<Assignment>> {
        let (Some(x), Some(obj)) = (&self.x, self.objective) else {
            return Ok(None);
        };
        let n_targets = self.costs.first().map_or(0, Vec::len);
        let mut labels = vec![None; n_targets];
        for (c, row) in x.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                if v == 1 {
                    labels[t] = Some(c);
                }
            }
        }
        Assignment::new(labels, self.costs.len(), obj).map(Some)
    }
}
