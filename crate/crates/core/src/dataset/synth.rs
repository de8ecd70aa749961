//! Synthetic source/target pairs with a known affine domain shift.
//!
//! Class centers sit on the vertices of a scaled simplex (`separation · e_c`);
//! samples are unit-variance isotropic Gaussians around them. Target samples
//! are source-distributed samples pushed through `x ↦ scale·R·x + b`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ClassCatalog, Dataset, GroundTruth, Role, UNKNOWN_TOKEN};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// `x ↦ scale · R(θ) · x + translation · 1/√D`, where `R(θ)` rotates every
/// coordinate plane `(2i, 2i+1)` by `rotation_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineShift {
    pub rotation_deg: f64,
    pub translation: f64,
    pub scale: f64,
}

impl AffineShift {
    pub fn identity() -> Self {
        AffineShift {
            rotation_deg: 0.0,
            translation: 0.0,
            scale: 1.0,
        }
    }

    pub fn linear(&self, dim: usize) -> DMatrix<f64> {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let mut a = DMatrix::identity(dim, dim);
        for p in 0..dim / 2 {
            let (i, j) = (2 * p, 2 * p + 1);
            a[(i, i)] = c;
            a[(i, j)] = -s;
            a[(j, i)] = s;
            a[(j, j)] = c;
        }
        a * self.scale
    }

    pub fn offset(&self, dim: usize) -> DVector<f64> {
        DVector::from_element(dim, self.translation / (dim as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub shift: AffineShift,
    /// Target unknown samples per known target sample.
    pub unknown_ratio: f64,
    /// Source unknown samples per known source sample; defaults to
    /// `unknown_ratio`.
    pub source_unknown_ratio: Option<f64>,
    /// Distance of every class center from the origin.
    pub separation: f64,
    /// Clusters making up the unknown class, per domain.
    pub unknown_clusters: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_classes: 3,
            n_per_class: 100,
            dim: 10,
            shift: AffineShift::identity(),
            unknown_ratio: 0.0,
            source_unknown_ratio: None,
            separation: 6.0,
            unknown_clusters: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub source: Dataset,
    pub target: Dataset,
    pub truth: GroundTruth,
    /// Known-class centers in source space, one column per class.
    pub source_centers: DMatrix<f64>,
    /// The same centers after the shift.
    pub target_centers: DMatrix<f64>,
}

fn gaussian(dim: usize, rng: &mut StreamRng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Center of the `k`-th cluster: a simplex vertex while coordinates last,
/// afterwards a random direction at the same distance.
fn center(k: usize, dim: usize, separation: f64, rng: &mut StreamRng) -> DVector<f64> {
    if k < dim {
        let mut v = DVector::zeros(dim);
        v[k] = separation;
        v
    } else {
        let g = gaussian(dim, rng);
        g.normalize() * separation
    }
}

fn count(ratio: f64, known: usize) -> usize {
    (ratio * known as f64).round() as usize
}

pub fn synth_shift(params: &SynthParams, seed: u64) -> Result<SynthData> {
    let p = params;
    if p.dim < 2 {
        return Err(Error::Config("synthetic data needs dim >= 2".into()));
    }
    if p.n_classes < 2 || p.n_per_class == 0 {
        return Err(Error::Config("synthetic data needs >= 2 classes with samples".into()));
    }
    let src_ratio = p.source_unknown_ratio.unwrap_or(p.unknown_ratio);
    if !(p.unknown_ratio >= 0.0 && src_ratio >= 0.0 && p.separation.is_finite()) {
        return Err(Error::Config("unknown ratios must be non-negative".into()));
    }
    let n_known = p.n_classes * p.n_per_class;
    let n_src_unknown = count(src_ratio, n_known);
    let n_tgt_unknown = count(p.unknown_ratio, n_known);
    if (n_src_unknown > 0 || n_tgt_unknown > 0) && p.unknown_clusters == 0 {
        return Err(Error::Config("unknown samples need at least one cluster".into()));
    }

    let mut layout_rng = rng::stream(seed, "synth-layout");
    let dim = p.dim;
    let known: Vec<DVector<f64>> = (0..p.n_classes)
        .map(|k| center(k, dim, p.separation, &mut layout_rng))
        .collect();
    let src_unknown: Vec<DVector<f64>> = (0..p.unknown_clusters)
        .map(|j| center(p.n_classes + j, dim, p.separation, &mut layout_rng))
        .collect();
    let tgt_unknown: Vec<DVector<f64>> = (0..p.unknown_clusters)
        .map(|j| center(p.n_classes + p.unknown_clusters + j, dim, p.separation, &mut layout_rng))
        .collect();

    let a = p.shift.linear(dim);
    let b = p.shift.offset(dim);
    let catalog = ClassCatalog::new((0..p.n_classes).map(|c| format!("class{c}")))?;

    let mut rng = rng::stream(seed, "synth-samples");
    let mut src_cols = Vec::with_capacity(n_known + n_src_unknown);
    let mut src_labels = Vec::new();
    for (c, mu) in known.iter().enumerate() {
        for _ in 0..p.n_per_class {
            src_cols.push(mu + gaussian(dim, &mut rng));
            src_labels.push(Some(c));
        }
    }
    for k in 0..n_src_unknown {
        let mu = &src_unknown[k % src_unknown.len()];
        src_cols.push(mu + gaussian(dim, &mut rng));
        src_labels.push(Some(catalog.unknown_index()));
    }

    let mut tgt_cols = Vec::with_capacity(n_known + n_tgt_unknown);
    let mut truth = GroundTruth::default();
    for (c, mu) in known.iter().enumerate() {
        for _ in 0..p.n_per_class {
            tgt_cols.push(&a * (mu + gaussian(dim, &mut rng)) + &b);
            truth.push(format!("t{}", tgt_cols.len() - 1), catalog.name(c));
        }
    }
    for k in 0..n_tgt_unknown {
        let j = k % tgt_unknown.len();
        tgt_cols.push(&a * (&tgt_unknown[j] + gaussian(dim, &mut rng)) + &b);
        truth.push(format!("t{}", tgt_cols.len() - 1), format!("target_unknown{j}"));
    }

    let source = Dataset::new(
        Role::Source,
        catalog.clone(),
        (0..src_cols.len()).map(|i| format!("s{i}")).collect(),
        DMatrix::from_columns(&src_cols),
        src_labels,
    )?;
    let target = Dataset::new(
        Role::Target,
        catalog,
        truth.ids.clone(),
        DMatrix::from_columns(&tgt_cols),
        vec![None; tgt_cols.len()],
    )?;
    debug_assert!(truth.labels.iter().all(|l| l != UNKNOWN_TOKEN));
    let source_centers = DMatrix::from_columns(&known);
    let target_centers = DMatrix::from_columns(
        &known.iter().map(|mu| &a * mu + &b).collect::<Vec<_>>(),
    );
    Ok(SynthData {
        source,
        target,
        truth,
        source_centers,
        target_centers,
    })
}
