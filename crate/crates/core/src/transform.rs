//! Linear map from source to target feature space.
//!
//! `f(W) = ½ ‖W P_S − P_T‖²_F` where column `j` of `P_S` is the mean of the
//! class that target column `j` of `P_T` was assigned to. The gradient is
//! `W (P_S P_Sᵀ) − P_T P_Sᵀ`.
//!
//! With `G = P_S P_Sᵀ` well conditioned the normal equations `W G = P_T P_Sᵀ`
//! are solved directly. Otherwise (in particular whenever the class means do
//! not span the feature space) conjugate gradients run from `W_init`; all
//! updates stay in the row space of `P_Sᵀ`, so the result is the least-squares
//! solution closest to `W_init`, and the minimum-norm solution when
//! `W_init = 0`.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::assign::Assignment;
use crate::dataset::{Dataset, MeanTable};
use crate::error::{Error, Result};

/// Largest condition number of `G` handled by the direct solve.
pub const CONDITION_LIMIT: f64 = 1e8;
pub const MAX_ITERATIONS: usize = 10_000;
const DIRECT_TOL: f64 = 1e-8;
const ITERATIVE_TOL: f64 = 1e-6;
/// Eigenvalues of `G` below this fraction of the largest span its null space.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    #[serde(with = "rows")]
    w: DMatrix<f64>,
    /// `f(W)` on the pairs it was fitted to.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("transform must be a square matrix"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

impl Transform {
    pub fn identity(dim: usize) -> Self {
        Transform {
            w: DMatrix::identity(dim, dim),
            residual: 0.0,
            iterations: 0,
            converged: true,
        }
    }

    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::Dimension {
                expected: w.nrows(),
                got: w.ncols(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("transform has non-finite entries".into()));
        }
        Ok(Transform {
            w,
            residual: 0.0,
            iterations: 0,
            converged: true,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Transform = serde_json::from_str(&text)?;
        Transform::from_matrix(t.w.clone())?;
        Ok(t)
    }
}

/// Matched pairs in matrix form, both `D × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrices {
    pub ps: DMatrix<f64>,
    pub pt: DMatrix<f64>,
}

impl AssignmentMatrices {
    pub fn new(ps: DMatrix<f64>, pt: DMatrix<f64>) -> Result<Self> {
        if ps.shape() != pt.shape() {
            return Err(Error::Dimension {
                expected: ps.ncols(),
                got: pt.ncols(),
            });
        }
        Ok(AssignmentMatrices { ps, pt })
    }

    pub fn len(&self) -> usize {
        self.ps.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.ps.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.ps.nrows()
    }
}

/// One column per assigned target, in ascending target order; outliers are
/// skipped. Assignment rows index `means` rows.
pub fn build_pairs(
    assignment: &Assignment,
    means: &MeanTable,
    targets: &Dataset,
) -> Result<AssignmentMatrices> {
    if means.dim() != targets.dim() {
        return Err(Error::Dimension {
            expected: means.dim(),
            got: targets.dim(),
        });
    }
    if assignment.n_targets() != targets.len() || assignment.n_classes() != means.len() {
        return Err(Error::Data("assignment does not match the means and targets".into()));
    }
    let assigned: Vec<(usize, usize)> = assignment
        .labels()
        .iter()
        .enumerate()
        .filter_map(|(t, l)| l.map(|c| (c, t)))
        .collect();
    let d = targets.dim();
    let ps = DMatrix::from_fn(d, assigned.len(), |r, j| means.means()[(r, assigned[j].0)]);
    let pt = DMatrix::from_fn(d, assigned.len(), |r, j| targets.features()[(r, assigned[j].1)]);
    Ok(AssignmentMatrices { ps, pt })
}

/// `½ ‖W P_S − P_T‖²_F`
pub fn loss(pairs: &AssignmentMatrices, w: &DMatrix<f64>) -> f64 {
    0.5 * (w * &pairs.ps - &pairs.pt).norm_squared()
}

/// `W (P_S P_Sᵀ) − P_T P_Sᵀ`
pub fn gradient(pairs: &AssignmentMatrices, w: &DMatrix<f64>) -> DMatrix<f64> {
    let g = &pairs.ps * pairs.ps.transpose();
    let b = &pairs.pt * pairs.ps.transpose();
    w * g - b
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

/// Fits `W`; see the module docs for which solution is returned.
pub fn estimate_transform(pairs: &AssignmentMatrices, w_init: &DMatrix<f64>) -> Result<Transform> {
    let d = pairs.dim();
    if d == 0 || pairs.is_empty() {
        return Err(Error::Data("need at least one matched pair".into()));
    }
    if w_init.shape() != (d, d) {
        return Err(Error::Dimension {
            expected: d,
            got: w_init.nrows(),
        });
    }
    check_finite(&pairs.ps, "source means")?;
    check_finite(&pairs.pt, "targets")?;
    check_finite(w_init, "initial transform")?;

    let g = &pairs.ps * pairs.ps.transpose();
    let b = &pairs.pt * pairs.ps.transpose();
    let b_norm = b.norm();
    let eig = SymmetricEigen::new(g.clone());
    let l_max = eig.eigenvalues.max();
    let l_min = eig.eigenvalues.min();
    let condition = if l_min > 0.0 { l_max / l_min } else { f64::INFINITY };

    let (mut w, iterations, converged) = if condition < CONDITION_LIMIT {
        direct(&g, &b, b_norm)?
    } else {
        conjugate_gradient(&g, &b, b_norm, w_init, &eig)?
    };
    check_finite(&w, "transform")?;
    let mut residual = loss(pairs, &w);
    let start = loss(pairs, w_init);
    if residual > start {
        w = w_init.clone();
        residual = start;
    }
    Ok(Transform {
        w,
        residual,
        iterations,
        converged,
    })
}

fn direct(g: &DMatrix<f64>, b: &DMatrix<f64>, b_norm: f64) -> Result<(DMatrix<f64>, usize, bool)> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal equations are not positive definite".into()))?;
    let bound = DIRECT_TOL * (1.0 + b_norm);
    let mut w = chol.solve(&b.transpose()).transpose();
    let mut steps = 0;
    // iterative refinement
    loop {
        let r = b - &w * g;
        if r.norm() <= bound || steps == 3 {
            return Ok((w, steps, r.norm() <= bound));
        }
        w += chol.solve(&r.transpose()).transpose();
        steps += 1;
    }
}

fn conjugate_gradient(
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    b_norm: f64,
    w_init: &DMatrix<f64>,
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
) -> Result<(DMatrix<f64>, usize, bool)> {
    let d = g.nrows();
    let bound = ITERATIVE_TOL * (1.0 + b_norm);
    let l_max = eig.eigenvalues.max().max(0.0);
    let range: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > RANK_TOL * l_max)
        .collect();
    let basis = eig.eigenvectors.select_columns(&range);
    let proj = &basis * basis.transpose();

    let mut w = w_init.clone();
    let mut r = b - &w * g;
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut iterations = 0;
    let mut converged = rr.sqrt() <= bound;
    while !converged && iterations < MAX_ITERATIONS {
        let ap = &p * g;
        let curvature = frob_dot(&p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            break;
        }
        let alpha = rr / curvature;
        w += alpha * &p;
        iterations += 1;
        if iterations % d == 0 {
            r = b - &w * g;
        } else {
            r -= alpha * &ap;
        }
        let rr_new = r.norm_squared();
        check_finite(&r, "gradient")?;
        converged = rr_new.sqrt() <= bound;
        let beta = if iterations % d == 0 { 0.0 } else { rr_new / rr };
        p = &r + beta * &p;
        rr = rr_new;
    }
    // drop rounding drift out of the row space
    let identity = DMatrix::<f64>::identity(d, d);
    let w = w_init * (identity - &proj) + &w * &proj;
    let converged = (b - &w * g).norm() <= bound;
    Ok((w, iterations, converged))
}

/// Replaces every source sample `x` by `W x`; labels are kept.
pub fn apply_transform(transform: &Transform, source: &Dataset) -> Result<Dataset> {
    if transform.dim() != source.dim() {
        return Err(Error::Dimension {
            expected: transform.dim(),
            got: source.dim(),
        });
    }
    source.with_features(transform.matrix() * source.features())
}
