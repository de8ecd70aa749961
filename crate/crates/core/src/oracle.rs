//! Slow reference implementations for cross-checking the solvers.
//!
//! Nothing here calls into the production assignment, transform or SVM
//! code; only the plain data containers are shared.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::assign::{Assignment, ClassDistanceMatrix, CostMatrix, NeighborGraph, SolveConfig};
use crate::error::{Error, Result};

/// Largest number of labellings [`brute_force_assignment`] will enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Exhaustive search over every class-or-outlier labelling.
///
/// Labellings are visited with target 0 as the most significant digit and,
/// per target, classes in index order followed by the outlier option; the
/// first labelling reaching the optimum wins.
pub fn brute_force_assignment(
    costs: &CostMatrix,
    locality: Option<(&ClassDistanceMatrix, &NeighborGraph)>,
    cfg: &SolveConfig,
) -> Result<Assignment> {
    let nc = costs.n_classes();
    let nt = costs.n_targets();
    let lambda = cfg.lambda;
    let options_per_target = nc as f64 + f64::from(u8::from(lambda.is_finite()));
    if options_per_target.powi(nt as i32) > ENUMERATION_LIMIT {
        return Err(Error::TooLarge(format!(
            "{nc} classes and {nt} targets exceed the enumeration limit"
        )));
    }
    if let Some((dcc, nbrs)) = locality {
        if dcc.len() != nc || nbrs.len() != nt {
            return Err(Error::Data("locality data does not match the cost matrix".into()));
        }
    }

    let mut pinned: Vec<Option<usize>> = vec![None; nt];
    for &(t, c) in &cfg.fixed_labels {
        if t >= nt || c >= nc || pinned[t].is_some_and(|p| p != c) {
            return Err(Error::Config(format!("unusable fixed label ({t}, {c})")));
        }
        pinned[t] = Some(c);
    }
    let options: Vec<Vec<Option<usize>>> = (0..nt)
        .map(|t| match pinned[t] {
            Some(c) => vec![Some(c)],
            None => {
                let mut o: Vec<Option<usize>> = (0..nc).map(Some).collect();
                if lambda.is_finite() {
                    o.push(None);
                }
                o
            }
        })
        .collect();

    let mut digits = vec![0usize; nt];
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    let mut labels = vec![None; nt];
    loop {
        for t in 0..nt {
            labels[t] = options[t][digits[t]];
        }
        if covered(&labels, nc, cfg) {
            let value = evaluate(costs, locality, &labels, lambda);
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, labels.clone()));
            }
        }
        // odometer: the last target turns fastest
        let mut pos = nt;
        loop {
            if pos == 0 {
                return match best {
                    Some((value, labels)) => Assignment::new(labels, nc, value),
                    None => Err(Error::Infeasible("no labelling is feasible".into())),
                };
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < options[pos].len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

fn covered(labels: &[Option<usize>], nc: usize, cfg: &SolveConfig) -> bool {
    if !cfg.coverage {
        return true;
    }
    let mut hit = vec![false; nc];
    for c in labels.iter().flatten() {
        hit[*c] = true;
    }
    (0..nc).all(|c| hit[c] || cfg.coverage_exempt == Some(c))
}

fn evaluate(
    costs: &CostMatrix,
    locality: Option<(&ClassDistanceMatrix, &NeighborGraph)>,
    labels: &[Option<usize>],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for (t, l) in labels.iter().enumerate() {
        match l {
            None => total += lambda,
            Some(c) => {
                total += costs.get(*c, t);
                if let Some((dcc, nbrs)) = locality {
                    for &u in nbrs.neighbors(t) {
                        if let Some(cu) = labels[u] {
                            total += dcc.get(*c, cu);
                        }
                    }
                }
            }
        }
    }
    total
}

/// `½ ‖W P_S − P_T‖²_F` with explicit loops.
fn mapping_loss(ps: &DMatrix<f64>, pt: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let (d, l) = ps.shape();
    let mut total = 0.0;
    for j in 0..l {
        for r in 0..d {
            let mut v = -pt[(r, j)];
            for k in 0..d {
                v += w[(r, k)] * ps[(k, j)];
            }
            total += v * v;
        }
    }
    0.5 * total
}

/// Central differences of the mapping loss, one entry of `W` at a time.
pub fn finite_diff_gradient(ps: &DMatrix<f64>, pt: &DMatrix<f64>, w: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let d = w.nrows();
    let mut grad = DMatrix::zeros(d, d);
    let mut probe = w.clone();
    for r in 0..d {
        for k in 0..d {
            let orig = probe[(r, k)];
            probe[(r, k)] = orig + h;
            let up = mapping_loss(ps, pt, &probe);
            probe[(r, k)] = orig - h;
            let down = mapping_loss(ps, pt, &probe);
            probe[(r, k)] = orig;
            grad[(r, k)] = (up - down) / (2.0 * h);
        }
    }
    grad
}

/// Binary SVM dual solution from a dense solver.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// `Σα − ½ αᵀQα`, to be maximised.
    pub objective: f64,
}

/// Solves `max Σα − ½ αᵀQα, 0 ≤ α ≤ c` with `Q_ij = y_i y_j x_i·x_j` by
/// accelerated projected gradient on the dense `Q`. Columns of `x` are
/// samples; any bias feature must already be appended.
pub fn svm_dual_qp(x: &DMatrix<f64>, y: &[f64], c: f64) -> DualSolution {
    let n = x.ncols();
    let gram = x.transpose() * x;
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * gram[(i, j)]);
    let top = SymmetricEigen::new(q.clone()).eigenvalues.max().max(1e-12);
    let step = 1.0 / top;
    let clip = |v: f64| v.clamp(0.0, c);
    let dual = |a: &[f64]| {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * q[(i, j)] * a[j];
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    };

    let mut alpha = vec![0.0; n];
    let mut momentum = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        // gradient of the minimisation form ½αᵀQα − Σα
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q[(i, j)] * momentum[j]).sum::<f64>() - 1.0)
            .collect();
        let next: Vec<f64> = (0..n).map(|i| clip(momentum[i] - step * grad[i])).collect();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved: f64 = next.iter().zip(&alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        momentum = (0..n)
            .map(|i| next[i] + (t - 1.0) / t_next * (next[i] - alpha[i]))
            .collect();
        alpha = next;
        t = t_next;
        if moved < 1e-14 * c.max(1e-300) {
            break;
        }
    }
    let objective = dual(&alpha);
    DualSolution { alpha, objective }
}
