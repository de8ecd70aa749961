//! One-vs-one linear SVMs.
//!
//! Each pairwise model is an L2-regularised hinge-loss SVM trained by dual
//! coordinate descent over samples in dataset order. With `include_bias`
//! every sample gets a constant trailing feature of 1, so the bias is
//! regularised together with the weights.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassCatalog, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Misclassification weight `C`.
    pub c: f64,
    pub max_passes: usize,
    pub tolerance: f64,
    pub include_bias: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 0.001,
            max_passes: 10_000,
            tolerance: 1e-6,
            include_bias: true,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svm C must be positive, got {}", self.c)));
        }
        if self.max_passes == 0 || !(self.tolerance > 0.0) {
            return Err(Error::Config("svm needs max_passes >= 1 and tolerance > 0".into()));
        }
        Ok(())
    }
}

/// Decision `w·x + b > 0` votes for `positive`, anything else for `negative`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub positive: usize,
    pub negative: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Dual variables in training-sample order (positive class samples and
    /// negative class samples interleaved as they appear in the data).
    #[serde(skip)]
    pub alpha: Vec<f64>,
    pub passes: usize,
    pub converged: bool,
}

impl PairModel {
    pub fn decision(&self, x: impl Iterator<Item = f64>) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvoModel {
    pub catalog: ClassCatalog,
    /// Catalog indices of the classes seen in training, ascending.
    pub classes: Vec<usize>,
    pub dim: usize,
    /// Pairs `(classes[i], classes[j])` for `i < j`, row-major.
    pub pairs: Vec<PairModel>,
}

impl OvoModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Votes per entry of `classes` for one sample.
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut votes = vec![0; self.classes.len()];
        let slot = |c: usize| self.classes.iter().position(|&k| k == c).unwrap_or(0);
        for p in &self.pairs {
            let winner = if p.decision(x.iter().copied()) > 0.0 {
                p.positive
            } else {
                p.negative
            };
            votes[slot(winner)] += 1;
        }
        votes
    }
}

/// Result of one binary problem.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    /// Largest projected-gradient magnitude at the returned `alpha`.
    pub kkt_violation: f64,
    pub passes: usize,
    pub converged: bool,
}

/// Trains one binary SVM. Columns of `x` are samples, `y` holds ±1.
pub fn train_binary(x: &DMatrix<f64>, y: &[f64], cfg: &SvmConfig) -> Result<BinaryFit> {
    cfg.validate()?;
    let n = x.ncols();
    if y.len() != n || n == 0 {
        return Err(Error::Data("binary svm needs one ±1 label per sample".into()));
    }
    let d = x.nrows();
    let bias_feature = if cfg.include_bias { 1.0 } else { 0.0 };
    let dd = d + usize::from(cfg.include_bias);
    let sample = |i: usize, k: usize| if k < d { x[(k, i)] } else { bias_feature };
    let q_diag: Vec<f64> = (0..n)
        .map(|i| (0..dd).map(|k| sample(i, k) * sample(i, k)).sum())
        .collect();
    let c = cfg.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dd];
    let margin = |w: &[f64], i: usize| -> f64 { (0..dd).map(|k| w[k] * sample(i, k)).sum() };
    let projected = |g: f64, a: f64| -> f64 {
        if a <= 0.0 {
            g.min(0.0)
        } else if a >= c {
            g.max(0.0)
        } else {
            g
        }
    };

    let mut passes = 0;
    let mut converged = false;
    let (mut primal, mut dual, mut violation) = (0.0, 0.0, f64::INFINITY);
    while passes < cfg.max_passes {
        passes += 1;
        for i in 0..n {
            if q_diag[i] <= 0.0 {
                continue;
            }
            let g = y[i] * margin(&w, i) - 1.0;
            if projected(g, alpha[i]) == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / q_diag[i]).clamp(0.0, c);
            let step = (alpha[i] - old) * y[i];
            if step != 0.0 {
                for (k, wk) in w.iter_mut().enumerate() {
                    *wk += step * sample(i, k);
                }
            }
        }
        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        let mut hinge = 0.0;
        violation = 0.0;
        for i in 0..n {
            let m = y[i] * margin(&w, i);
            hinge += (1.0 - m).max(0.0);
            let pg = if q_diag[i] > 0.0 { projected(m - 1.0, alpha[i]).abs() } else { 0.0 };
            violation = f64::max(violation, pg);
        }
        primal = 0.5 * w_sq + c * hinge;
        dual = alpha.iter().sum::<f64>() - 0.5 * w_sq;
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::Numerical("svm objective diverged".into()));
        }
        if primal - dual <= cfg.tolerance * (1.0 + primal.abs()) && violation <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    let bias = if cfg.include_bias { w[d] } else { 0.0 };
    w.truncate(d);
    Ok(BinaryFit {
        weights: w,
        bias,
        alpha,
        primal,
        dual,
        kkt_violation: violation,
        passes,
        converged,
    })
}

/// Trains one model per pair of classes present in `data`.
///
/// Every shared class needs at least one sample; the unknown class takes
/// part only when it has samples.
pub fn train_ovo(data: &Dataset, cfg: &SvmConfig) -> Result<OvoModel> {
    cfg.validate()?;
    let catalog = data.catalog().clone();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); catalog.len()];
    for (i, l) in data.labels().iter().enumerate() {
        let c = l.ok_or_else(|| Error::Label(format!("training sample {:?} is unlabeled", data.ids()[i])))?;
        members[c].push(i);
    }
    for c in 0..catalog.shared_len() {
        if members[c].is_empty() {
            return Err(Error::Coverage(catalog.name(c).to_string()));
        }
    }
    let classes: Vec<usize> = (0..catalog.len()).filter(|&c| !members[c].is_empty()).collect();
    if classes.len() < 2 {
        return Err(Error::Data("svm training needs at least two classes".into()));
    }
    let mut jobs = Vec::new();
    for (a, &ci) in classes.iter().enumerate() {
        for &cj in &classes[a + 1..] {
            jobs.push((ci, cj));
        }
    }
    let x = data.features();
    let pairs = jobs
        .par_iter()
        .map(|&(ci, cj)| {
            let idx: Vec<usize> = (0..data.len())
                .filter(|&i| matches!(data.labels()[i], Some(l) if l == ci || l == cj))
                .collect();
            let sub = x.select_columns(&idx);
            let y: Vec<f64> = idx
                .iter()
                .map(|&i| if data.labels()[i] == Some(ci) { 1.0 } else { -1.0 })
                .collect();
            let fit = train_binary(&sub, &y, cfg)?;
            Ok(PairModel {
                positive: ci,
                negative: cj,
                weights: fit.weights,
                bias: fit.bias,
                alpha: fit.alpha,
                passes: fit.passes,
                converged: fit.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvoModel {
        catalog,
        classes,
        dim: data.dim(),
        pairs,
    })
}

/// Majority vote; ties go to the lowest catalog index.
pub fn predict(model: &OvoModel, samples: &Dataset) -> Result<Vec<usize>> {
    if samples.dim() != model.dim {
        return Err(Error::Dimension {
            expected: model.dim,
            got: samples.dim(),
        });
    }
    let x = samples.features();
    Ok((0..samples.len())
        .map(|i| {
            let col: Vec<f64> = x.column(i).iter().copied().collect();
            let votes = model.votes(&col);
            let mut best = 0;
            for (k, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = k;
                }
            }
            model.classes[best]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Role;
    use crate::oracle;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, centers: &[(f64, f64)], per: usize) -> Dataset {
        let mut r = rng::stream(seed, "test");
        let mut cols = Vec::new();
        let mut labels = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per {
                let dx: f64 = r.sample(StandardNormal);
                let dy: f64 = r.sample(StandardNormal);
                cols.push(cx + 0.3 * dx);
                cols.push(cy + 0.3 * dy);
                labels.push(Some(c));
            }
        }
        let n = labels.len();
        let names: Vec<String> = (0..centers.len()).map(|c| format!("c{c}")).collect();
        Dataset::new(
            Role::Source,
            ClassCatalog::new(names).unwrap(),
            (0..n).map(|i| i.to_string()).collect(),
            DMatrix::from_column_slice(2, n, &cols),
            labels,
        )
        .unwrap()
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let ds = blobs(1, &[(-20.0, 0.0), (20.0, 0.0), (0.0, 25.0)], 30);
        let model = train_ovo(&ds, &SvmConfig::default()).unwrap();
        assert_eq!(model.pairs.len(), 3);
        let pred = predict(&model, &ds).unwrap();
        let truth: Vec<usize> = ds.labels().iter().map(|l| l.unwrap()).collect();
        assert_eq!(pred, truth);
    }

    #[test]
    fn dual_matches_dense_oracle() {
        let mut r = rng::stream(3, "test");
        let x = DMatrix::from_fn(3, 25, |_, _| r.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..25).map(|i| if x[(0, i)] + 0.3 * x[(1, i)] > 0.1 { 1.0 } else { -1.0 }).collect();
        let cfg = SvmConfig {
            c: 0.5,
            ..SvmConfig::default()
        };
        let fit = train_binary(&x, &y, &cfg).unwrap();
        assert!(fit.converged);
        assert!(fit.kkt_violation <= cfg.tolerance);
        let aug = x.clone().insert_row(3, 1.0);
        let reference = oracle::svm_dual_qp(&aug, &y, cfg.c);
        assert!((fit.dual - reference.objective).abs() <= 1e-6 * reference.objective.abs());
    }

    #[test]
    fn vote_cycle_goes_to_lowest_index() {
        let catalog = ClassCatalog::new(["a", "b", "c"]).unwrap();
        // a beats b, b beats c, c beats a
        let pair = |positive, negative, bias| PairModel {
            positive,
            negative,
            weights: vec![0.0],
            bias,
            alpha: Vec::new(),
            passes: 0,
            converged: true,
        };
        let model = OvoModel {
            catalog,
            classes: vec![0, 1, 2],
            dim: 1,
            pairs: vec![pair(0, 1, 1.0), pair(0, 2, -1.0), pair(1, 2, 1.0)],
        };
        assert_eq!(model.votes(&[0.0]), vec![1, 1, 1]);
        let ds = Dataset::new(
            Role::Target,
            model.catalog.clone(),
            vec!["p".into()],
            DMatrix::zeros(1, 1),
            vec![None],
        )
        .unwrap();
        assert_eq!(predict(&model, &ds).unwrap(), vec![0]);
    }

    #[test]
    fn retraining_is_bit_identical() {
        let ds = blobs(5, &[(0.0, 0.0), (1.0, 0.5)], 40);
        let a = train_ovo(&ds, &SvmConfig::default()).unwrap();
        let b = train_ovo(&ds, &SvmConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_shared_class_is_an_error() {
        let ds = blobs(1, &[(0.0, 0.0), (1.0, 1.0)], 5);
        let only_first = ds.select(&(0..5).collect::<Vec<_>>());
        assert!(matches!(
            train_ovo(&only_first, &SvmConfig::default()),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let ds = blobs(2, &[(-3.0, 0.0), (3.0, 0.0)], 10);
        let model = train_ovo(&ds, &SvmConfig::default()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        model.save(f.path()).unwrap();
        let back = OvoModel::load(f.path()).unwrap();
        assert_eq!(predict(&back, &ds).unwrap(), predict(&model, &ds).unwrap());
    }
}
