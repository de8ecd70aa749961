//! Feature datasets, the class catalog and per-class source means.
//!
//! Features are stored column-major as a `D × N` matrix so that a linear map
//! `W` acts on the whole set as `W * X`.

mod io;
mod split;
mod synth;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVectorView};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use io::{
    load_features, load_labeled_targets, load_truth, write_features, write_truth, GroundTruth,
    LoadOptions,
};
pub use split::{make_open_set_split, OpenSetSplit, SplitSpec};
pub use synth::{synth_shift, AffineShift, SynthData, SynthParams};

/// Reserved label token for the unknown class in feature files.
pub const UNKNOWN_TOKEN: &str = "__unknown__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

/// Shared classes in a fixed order, followed by the unknown class.
///
/// Class indices are `0..shared_len()` for shared classes and
/// `unknown_index() == shared_len()` for the unknown class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    shared: Vec<String>,
    unknown: String,
}

impl ClassCatalog {
    pub fn new<S: Into<String>>(shared: impl IntoIterator<Item = S>) -> Result<Self> {
        let shared: Vec<String> = shared.into_iter().map(Into::into).collect();
        for (i, name) in shared.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Label("empty class name".into()));
            }
            if name == UNKNOWN_TOKEN {
                return Err(Error::Label(format!("{UNKNOWN_TOKEN} cannot be a shared class")));
            }
            if shared[..i].contains(name) {
                return Err(Error::Label(format!("duplicate class {name:?}")));
            }
        }
        Ok(ClassCatalog {
            shared,
            unknown: UNKNOWN_TOKEN.to_string(),
        })
    }

    /// Number of classes including the unknown class.
    pub fn len(&self) -> usize {
        self.shared.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shared_len(&self) -> usize {
        self.shared.len()
    }

    pub fn unknown_index(&self) -> usize {
        self.shared.len()
    }

    pub fn is_unknown(&self, class: usize) -> bool {
        class == self.unknown_index()
    }

    pub fn shared(&self) -> &[String] {
        &self.shared
    }

    pub fn name(&self, class: usize) -> &str {
        if class == self.unknown_index() {
            &self.unknown
        } else {
            &self.shared[class]
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        if name == self.unknown {
            Some(self.unknown_index())
        } else {
            self.shared.iter().position(|s| s == name)
        }
    }

    /// Maps a fine-grained label to a catalog class: shared names map to
    /// themselves, everything else is unknown.
    pub fn map_open(&self, name: &str) -> usize {
        self.index_of(name).unwrap_or(self.unknown_index())
    }
}

/// Feature matrix (`D × N`, one column per sample) with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    role: Role,
    catalog: ClassCatalog,
    ids: Vec<String>,
    features: DMatrix<f64>,
    labels: Vec<Option<usize>>,
}

impl Dataset {
    pub fn new(
        role: Role,
        catalog: ClassCatalog,
        ids: Vec<String>,
        features: DMatrix<f64>,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        let ds = Dataset {
            role,
            catalog,
            ids,
            features,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks every type invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.features.ncols();
        if self.features.nrows() == 0 {
            return Err(Error::Data("dimensionality must be at least 1".into()));
        }
        if self.ids.len() != n || self.labels.len() != n {
            return Err(Error::Data(format!(
                "{} samples but {} ids and {} labels",
                n,
                self.ids.len(),
                self.labels.len()
            )));
        }
        if let Some((pos, _)) = self.features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (pos % self.features.nrows(), pos / self.features.nrows());
            return Err(Error::Data(format!(
                "non-finite value in sample {:?}, feature {}",
                self.ids[c],
                r + 1
            )));
        }
        for (i, label) in self.labels.iter().enumerate() {
            match label {
                Some(c) if *c >= self.catalog.len() => {
                    return Err(Error::Label(format!(
                        "sample {:?} has class index {c} outside the catalog",
                        self.ids[i]
                    )))
                }
                None if self.role == Role::Source => {
                    return Err(Error::Label(format!(
                        "source sample {:?} is unlabeled",
                        self.ids[i]
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        self.features.column(i)
    }

    /// Indices of labeled samples (the set L for a target dataset).
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Number of samples per catalog class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.catalog.len()];
        for c in self.labels.iter().flatten() {
            counts[*c] += 1;
        }
        counts
    }

    /// Same samples and labels with new features (e.g. after a transform).
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        if features.ncols() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: features.ncols(),
            });
        }
        Dataset::new(
            self.role,
            self.catalog.clone(),
            self.ids.clone(),
            features,
            self.labels.clone(),
        )
    }

    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Self> {
        Dataset::new(
            self.role,
            self.catalog.clone(),
            self.ids.clone(),
            self.features.clone(),
            labels,
        )
    }

    pub fn with_role(&self, role: Role) -> Result<Self> {
        Dataset::new(
            role,
            self.catalog.clone(),
            self.ids.clone(),
            self.features.clone(),
            self.labels.clone(),
        )
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Dataset {
            role: self.role,
            catalog: self.catalog.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select_columns(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Appends `other` (same catalog and dimensionality) after `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        if other.catalog != self.catalog {
            return Err(Error::Label("cannot merge datasets with different catalogs".into()));
        }
        let mut features = DMatrix::zeros(self.dim(), self.len() + other.len());
        features.columns_mut(0, self.len()).copy_from(&self.features);
        features
            .columns_mut(self.len(), other.len())
            .copy_from(&other.features);
        let mut ids = self.ids.clone();
        ids.extend(other.ids.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().copied());
        Dataset::new(self.role, self.catalog.clone(), ids, features, labels)
    }
}

/// Per-class means of a labeled dataset, one column per class.
///
/// `classes[j]` is the catalog index of column `j`. Every shared class is
/// present; the unknown class is present iff the data contains unknown
/// samples (it is absent in closed-set runs).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTable {
    classes: Vec<usize>,
    means: DMatrix<f64>,
}

impl MeanTable {
    pub fn new(classes: Vec<usize>, means: DMatrix<f64>) -> Result<Self> {
        if classes.len() != means.ncols() {
            return Err(Error::Dimension {
                expected: classes.len(),
                got: means.ncols(),
            });
        }
        Ok(MeanTable { classes, means })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.nrows()
    }

    pub fn mean(&self, row: usize) -> DVectorView<'_, f64> {
        self.means.column(row)
    }

    /// Row of a catalog class, if present.
    pub fn row_of(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }
}

/// Pairwise (cascade) summation; error grows as O(log n) instead of O(n).
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Exact per-class arithmetic means of `source`.
///
/// Values are sorted before the pairwise summation, so the result does not
/// depend on sample order.
pub fn class_means(source: &Dataset, catalog: &ClassCatalog) -> Result<MeanTable> {
    if source.catalog() != catalog {
        return Err(Error::Label("dataset catalog differs from the requested catalog".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); catalog.len()];
    for (i, label) in source.labels().iter().enumerate() {
        match label {
            Some(c) => members[*c].push(i),
            None => {
                return Err(Error::Label(format!(
                    "sample {:?} is unlabeled",
                    source.ids()[i]
                )))
            }
        }
    }
    for (c, m) in members.iter().enumerate().take(catalog.shared_len()) {
        if m.is_empty() {
            return Err(Error::Coverage(catalog.name(c).to_string()));
        }
    }
    let classes: Vec<usize> = (0..catalog.len()).filter(|&c| !members[c].is_empty()).collect();
    let d = source.dim();
    let x = source.features();
    let mut means = DMatrix::zeros(d, classes.len());
    let mut buf = Vec::new();
    for (j, &c) in classes.iter().enumerate() {
        let idx = &members[c];
        for r in 0..d {
            buf.clear();
            buf.extend(idx.iter().map(|&i| x[(r, i)]));
            buf.sort_by(f64::total_cmp);
            means[(r, j)] = pairwise_sum(&buf) / idx.len() as f64;
        }
    }
    MeanTable::new(classes, means)
}

/// How many rows [`subsample`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSize {
    /// `n` rows from every label group (unlabeled rows form their own group).
    PerClass(usize),
    /// `n` rows overall.
    Total(usize),
}

/// Draws `n` indices without replacement from `pool`, returned in pool order.
pub(crate) fn draw(pool: &[usize], n: usize, rng: &mut rng::StreamRng) -> Result<Vec<usize>> {
    if n > pool.len() {
        return Err(Error::Sampling(format!(
            "requested {n} samples but only {} available",
            pool.len()
        )));
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), n).into_iter().collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|k| pool[k]).collect())
}

/// Uniform random subset without replacement; rows keep their original
/// relative order. Pure function of `(ds, size, seed)`.
pub fn subsample(ds: &Dataset, size: SampleSize, seed: u64) -> Result<Dataset> {
    let mut rng = rng::stream(seed, "sample");
    let keep = match size {
        SampleSize::Total(n) => {
            let all: Vec<usize> = (0..ds.len()).collect();
            draw(&all, n, &mut rng)?
        }
        SampleSize::PerClass(n) => {
            let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
            for (i, l) in ds.labels().iter().enumerate() {
                groups.entry(*l).or_default().push(i);
            }
            let mut keep = Vec::new();
            for (label, pool) in &groups {
                let picked = draw(pool, n, &mut rng).map_err(|e| match label {
                    Some(c) => Error::Sampling(format!("class {:?}: {e}", ds.catalog().name(*c))),
                    None => Error::Sampling(format!("unlabeled rows: {e}")),
                })?;
                keep.extend(picked);
            }
            keep.sort_unstable();
            keep
        }
    };
    Ok(ds.select(&keep))
}
