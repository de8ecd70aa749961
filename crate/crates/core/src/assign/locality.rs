//! Locality-constrained assignment.
//!
//! The quadratic objective couples a target with its neighbours through the
//! class-mean distances `d_cc'`. The Kaufman–Broeckx substitution
//! `w_ct = x_ct · Σ_{t'∈N_t} Σ_c' d_cc' x_c't'` turns it into a mixed 0-1
//! linear program whose extra rows are
//! `a_ct x_ct + Σ_{t'∈N_t} Σ_c' d_cc' x_c't' − w_ct ≤ a_ct` with
//! `a_ct = Σ_{t'∈N_t} Σ_c' d_cc'`. For binary `x` the smallest feasible `w`
//! is exactly the product above, so the exact backend branches on `x`/`o`
//! only and evaluates `w` at its induced value.

use nalgebra::DMatrix;
use rand::Rng;

use super::flow::solve_linear;
use super::{
    locality_objective, Assignment, Backend, ClassDistanceMatrix, CostMatrix, NeighborGraph,
    SolveConfig,
};
use crate::error::{Error, Result};
use crate::rng;

const AUTO_EXACT_LIMIT: f64 = 1e6;
const STARTS: u64 = 8;
const PERTURB_PROB: f64 = 0.3;
const MAX_SWEEPS: usize = 1000;

/// The linearized program: constants `a_ct` and the constraint system.
#[derive(Debug, Clone)]
pub struct LinearizedProgram<'a> {
    d: &'a CostMatrix,
    dcc: &'a ClassDistanceMatrix,
    nbrs: &'a NeighborGraph,
    lambda: f64,
    big_m: DMatrix<f64>,
}

impl<'a> LinearizedProgram<'a> {
    pub fn new(
        d: &'a CostMatrix,
        dcc: &'a ClassDistanceMatrix,
        nbrs: &'a NeighborGraph,
        lambda: f64,
    ) -> Result<Self> {
        check_shapes(d, dcc, nbrs)?;
        let row_sums: Vec<f64> = (0..dcc.len())
            .map(|c| (0..dcc.len()).map(|c2| dcc.get(c, c2)).sum())
            .collect();
        let big_m = DMatrix::from_fn(d.n_classes(), d.n_targets(), |c, t| {
            nbrs.neighbors(t).len() as f64 * row_sums[c]
        });
        Ok(LinearizedProgram {
            d,
            dcc,
            nbrs,
            lambda,
            big_m,
        })
    }

    /// `a_ct`
    pub fn big_m(&self, c: usize, t: usize) -> f64 {
        self.big_m[(c, t)]
    }

    /// `Σ_{t'∈N_t} Σ_c' d_cc' x_c't'`
    pub fn neighbor_cost(&self, c: usize, t: usize, labels: &[Option<usize>]) -> f64 {
        self.nbrs
            .neighbors(t)
            .iter()
            .filter_map(|&u| labels[u].map(|cu| self.dcc.get(c, cu)))
            .sum()
    }

    /// Smallest `w ≥ 0` satisfying every linearization row for `labels`.
    pub fn induced_w(&self, labels: &[Option<usize>]) -> DMatrix<f64> {
        DMatrix::from_fn(self.d.n_classes(), self.d.n_targets(), |c, t| {
            let x = if labels[t] == Some(c) { 1.0 } else { 0.0 };
            (self.big_m(c, t) * x + self.neighbor_cost(c, t, labels) - self.big_m(c, t)).max(0.0)
        })
    }

    /// Checks the full constraint system of the linearized program.
    pub fn is_feasible(&self, labels: &[Option<usize>], w: &DMatrix<f64>, cfg: &SolveConfig) -> bool {
        let (nc, nt) = (self.d.n_classes(), self.d.n_targets());
        if labels.len() != nt || w.shape() != (nc, nt) {
            return false;
        }
        if !self.lambda.is_finite() && labels.iter().any(Option::is_none) {
            return false;
        }
        let mut counts = vec![0usize; nc];
        for c in labels.iter().flatten() {
            counts[*c] += 1;
        }
        if (0..nc).any(|c| cfg.requires(c) && counts[c] == 0) {
            return false;
        }
        if cfg.fixed_labels.iter().any(|&(t, c)| labels[t] != Some(c)) {
            return false;
        }
        for t in 0..nt {
            for c in 0..nc {
                let x = if labels[t] == Some(c) { 1.0 } else { 0.0 };
                let lhs = self.big_m(c, t) * x + self.neighbor_cost(c, t, labels) - w[(c, t)];
                let tol = 1e-9 * (1.0 + self.big_m(c, t));
                if w[(c, t)] < 0.0 || lhs > self.big_m(c, t) + tol {
                    return false;
                }
            }
        }
        true
    }

    /// `Σ_t (Σ_c d_ct x_ct + Σ_c w_ct + λ o_t)`
    pub fn objective(&self, labels: &[Option<usize>], w: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (t, l) in labels.iter().enumerate() {
            total += match l {
                Some(c) => self.d.get(*c, t),
                None => self.lambda,
            };
            total += w.column(t).sum();
        }
        total
    }
}

fn check_shapes(d: &CostMatrix, dcc: &ClassDistanceMatrix, nbrs: &NeighborGraph) -> Result<()> {
    if dcc.len() != d.n_classes() {
        return Err(Error::Dimension {
            expected: d.n_classes(),
            got: dcc.len(),
        });
    }
    if nbrs.len() != d.n_targets() {
        return Err(Error::Dimension {
            expected: d.n_targets(),
            got: nbrs.len(),
        });
    }
    Ok(())
}

/// Incremental bookkeeping shared by the local search and the branch and
/// bound.
struct Problem<'a> {
    d: &'a CostMatrix,
    dcc: &'a ClassDistanceMatrix,
    nbrs: &'a NeighborGraph,
    rev: Vec<Vec<usize>>,
    lambda: f64,
    fixed: Vec<Option<usize>>,
    required: Vec<bool>,
}

impl Problem<'_> {
    fn nc(&self) -> usize {
        self.d.n_classes()
    }

    fn nt(&self) -> usize {
        self.d.n_targets()
    }

    /// Candidate labels for `t`: classes in index order, then outlier.
    fn options(&self, t: usize) -> Vec<Option<usize>> {
        match self.fixed[t] {
            Some(c) => vec![Some(c)],
            None => {
                let mut o: Vec<Option<usize>> = (0..self.nc()).map(Some).collect();
                if self.lambda.is_finite() {
                    o.push(None);
                }
                o
            }
        }
    }

    fn linear(&self, t: usize, label: Option<usize>) -> f64 {
        match label {
            Some(c) => self.d.get(c, t),
            None => self.lambda,
        }
    }

    /// Every objective term that involves target `t` when it takes `label`,
    /// counting only neighbours for which `known(u)` holds.
    fn local_cost(
        &self,
        t: usize,
        label: Option<usize>,
        labels: &[Option<usize>],
        known: impl Fn(usize) -> bool,
    ) -> f64 {
        let mut cost = self.linear(t, label);
        if let Some(c) = label {
            for &u in self.nbrs.neighbors(t) {
                if known(u) {
                    if let Some(cu) = labels[u] {
                        cost += self.dcc.get(c, cu);
                    }
                }
            }
            for &u in &self.rev[t] {
                if known(u) {
                    if let Some(cu) = labels[u] {
                        cost += self.dcc.get(cu, c);
                    }
                }
            }
        }
        cost
    }

    fn objective(&self, labels: &[Option<usize>]) -> f64 {
        locality_objective(self.d, self.dcc, self.nbrs, labels, self.lambda)
    }

    fn counts(&self, labels: &[Option<usize>]) -> Vec<usize> {
        let mut counts = vec![0; self.nc()];
        for c in labels.iter().flatten() {
            counts[*c] += 1;
        }
        counts
    }

    /// Iterated conditional modes: move single targets to their locally
    /// best label until no move improves. Never uncovers a required class.
    fn icm(&self, labels: &mut [Option<usize>]) {
        let mut counts = self.counts(labels);
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for t in 0..self.nt() {
                if self.fixed[t].is_some() {
                    continue;
                }
                let current = labels[t];
                if let Some(c) = current {
                    if self.required[c] && counts[c] == 1 {
                        continue;
                    }
                }
                let mut best = current;
                let mut best_cost = self.local_cost(t, current, labels, |_| true);
                let tol = 1e-12 * (1.0 + best_cost.abs());
                for opt in self.options(t) {
                    let cost = self.local_cost(t, opt, labels, |_| true);
                    if cost < best_cost - tol {
                        best = opt;
                        best_cost = cost;
                    }
                }
                if best != current {
                    if let Some(c) = current {
                        counts[c] -= 1;
                    }
                    if let Some(c) = best {
                        counts[c] += 1;
                    }
                    labels[t] = best;
                    changed = true;
                }
            }
            if !changed && !self.hand_over(labels, &mut counts) {
                break;
            }
        }
    }

    /// Compound move for targets pinned by coverage: another target takes
    /// over the sole member's class, then the former member relabels.
    /// Applies the first improving move found.
    fn hand_over(&self, labels: &mut [Option<usize>], counts: &mut [usize]) -> bool {
        for t in 0..self.nt() {
            let Some(c) = labels[t] else { continue };
            if self.fixed[t].is_some() || !self.required[c] || counts[c] != 1 {
                continue;
            }
            for u in 0..self.nt() {
                let from = labels[u];
                if u == t || self.fixed[u].is_some() || from == Some(c) {
                    continue;
                }
                let first = self.local_cost(u, Some(c), labels, |_| true)
                    - self.local_cost(u, from, labels, |_| true);
                labels[u] = Some(c);
                let stay = self.local_cost(t, Some(c), labels, |_| true);
                let tol = 1e-12 * (1.0 + stay.abs());
                for opt in self.options(t) {
                    // u's old class must stay covered
                    let uncovers = from.is_some_and(|f| self.required[f] && counts[f] == 1 && opt != from);
                    if opt == Some(c) || uncovers {
                        continue;
                    }
                    let second = self.local_cost(t, opt, labels, |_| true) - stay;
                    if first + second < -tol {
                        if let Some(f) = from {
                            counts[f] -= 1;
                        }
                        if let Some(o) = opt {
                            counts[o] += 1;
                        }
                        labels[t] = opt;
                        return true;
                    }
                }
                labels[u] = from;
            }
        }
        false
    }

    /// Gives every uncovered required class its cheapest movable target.
    fn repair_coverage(&self, labels: &mut [Option<usize>]) -> bool {
        let mut counts = self.counts(labels);
        for c in 0..self.nc() {
            if !self.required[c] || counts[c] > 0 {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for t in 0..self.nt() {
                if self.fixed[t].is_some() {
                    continue;
                }
                if let Some(cur) = labels[t] {
                    if self.required[cur] && counts[cur] <= 1 {
                        continue;
                    }
                }
                let delta = self.local_cost(t, Some(c), labels, |_| true)
                    - self.local_cost(t, labels[t], labels, |_| true);
                if best.is_none_or(|(b, _)| delta < b) {
                    best = Some((delta, t));
                }
            }
            let Some((_, t)) = best else {
                return false;
            };
            if let Some(cur) = labels[t] {
                counts[cur] -= 1;
            }
            labels[t] = Some(c);
            counts[c] += 1;
        }
        true
    }

    /// Multi-start local search seeded from the linear optimum.
    fn heuristic(&self, seed_labels: &[Option<usize>]) -> (Vec<Option<usize>>, f64) {
        let mut best = seed_labels.to_vec();
        self.icm(&mut best);
        let mut best_obj = self.objective(&best);
        for start in 1..STARTS {
            let mut r = rng::substream(0x1c3, "icm-start", start);
            let mut labels = seed_labels.to_vec();
            for t in 0..self.nt() {
                if self.fixed[t].is_none() && r.random_bool(PERTURB_PROB) {
                    let opts = self.options(t);
                    labels[t] = opts[r.random_range(0..opts.len())];
                }
            }
            if !self.repair_coverage(&mut labels) {
                continue;
            }
            self.icm(&mut labels);
            let obj = self.objective(&labels);
            if obj < best_obj {
                best = labels;
                best_obj = obj;
            }
        }
        (best, best_obj)
    }
}

/// Depth-first branch and bound over per-target labels.
struct BranchAndBound<'p, 'a> {
    p: &'p Problem<'a>,
    program: &'p LinearizedProgram<'a>,
    order: Vec<usize>,
    options: Vec<Vec<Option<usize>>>,
    labels: Vec<Option<usize>>,
    decided: Vec<bool>,
    counts: Vec<usize>,
    best: Vec<Option<usize>>,
    best_obj: f64,
}

impl BranchAndBound<'_, '_> {
    fn bound(&self, depth: usize, partial: f64) -> f64 {
        let mut lb = partial;
        for &u in &self.order[depth..] {
            let m = self.options[u]
                .iter()
                .map(|&o| self.p.local_cost(u, o, &self.labels, |v| self.decided[v]))
                .fold(f64::INFINITY, f64::min);
            lb += m;
        }
        lb
    }

    fn uncovered(&self) -> usize {
        (0..self.p.nc())
            .filter(|&c| self.p.required[c] && self.counts[c] == 0)
            .count()
    }

    fn search(&mut self, depth: usize, partial: f64) {
        if depth == self.order.len() {
            if self.uncovered() == 0 && partial < self.best_obj {
                let w = self.program.induced_w(&self.labels);
                let obj = self.program.objective(&self.labels, &w);
                if obj < self.best_obj {
                    self.best_obj = obj;
                    self.best.clone_from(&self.labels);
                }
            }
            return;
        }
        if self.uncovered() > self.order.len() - depth {
            return;
        }
        if self.bound(depth, partial) >= self.best_obj {
            return;
        }
        let t = self.order[depth];
        let options = self.options[t].clone();
        for opt in options {
            let step = self.p.local_cost(t, opt, &self.labels, |v| self.decided[v]);
            self.labels[t] = opt;
            self.decided[t] = true;
            if let Some(c) = opt {
                self.counts[c] += 1;
            }
            self.search(depth + 1, partial + step);
            if let Some(c) = opt {
                self.counts[c] -= 1;
            }
            self.decided[t] = false;
            self.labels[t] = None;
        }
    }
}

/// Solves the locality-constrained problem; the returned objective is the
/// quadratic objective of the solution.
pub fn solve_locality(
    d: &CostMatrix,
    dcc: &ClassDistanceMatrix,
    nbrs: &NeighborGraph,
    cfg: &SolveConfig,
) -> Result<Assignment> {
    let program = LinearizedProgram::new(d, dcc, nbrs, cfg.lambda)?;
    let (nc, nt) = (d.n_classes(), d.n_targets());
    let linear = solve_linear(d, cfg)?;
    let p = Problem {
        d,
        dcc,
        nbrs,
        rev: nbrs.reverse(),
        lambda: cfg.lambda,
        fixed: cfg.fixed_per_target(nc, nt)?,
        required: (0..nc).map(|c| cfg.requires(c)).collect(),
    };
    let (heur, heur_obj) = p.heuristic(linear.labels());
    let exact = match cfg.backend {
        Backend::Exact => true,
        Backend::Heuristic => false,
        Backend::Auto => (nc as f64).powi(nt as i32) <= AUTO_EXACT_LIMIT,
    };
    // the quadratic term is non-negative, so the linear optimum bounds it
    // from below; a heuristic solution meeting that bound is optimal
    let root_bound = linear.objective();
    let labels = if exact && heur_obj > root_bound + 1e-12 * (1.0 + root_bound.abs()) {
        let mut order: Vec<usize> = (0..nt).collect();
        let spread = |t: usize| {
            let col = d.matrix().column(t);
            col.max() - col.min()
        };
        order.sort_by(|&a, &b| {
            p.fixed[b]
                .is_some()
                .cmp(&p.fixed[a].is_some())
                .then(spread(b).total_cmp(&spread(a)))
                .then(a.cmp(&b))
        });
        let options: Vec<Vec<Option<usize>>> = (0..nt)
            .map(|t| {
                let mut o = p.options(t);
                o.sort_by(|&x, &y| p.linear(t, x).total_cmp(&p.linear(t, y)));
                o
            })
            .collect();
        let mut bb = BranchAndBound {
            p: &p,
            program: &program,
            order,
            options,
            labels: vec![None; nt],
            decided: vec![false; nt],
            counts: vec![0; nc],
            best: heur,
            best_obj: heur_obj,
        };
        bb.search(0, 0.0);
        bb.best
    } else {
        heur
    };
    let objective = p.objective(&labels);
    Assignment::new(labels, nc, objective)
}
