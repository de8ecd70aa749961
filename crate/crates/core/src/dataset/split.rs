//! Open-set split protocol: class positions (1-based, alphabetical order)
//! are partitioned into shared classes, source-only unknowns and
//! target-only unknowns.

use std::collections::HashSet;
use std::ops::RangeInclusive;

use super::{draw, ClassCatalog, Dataset, GroundTruth, Role};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub shared: RangeInclusive<usize>,
    pub source_unknown: Option<RangeInclusive<usize>>,
    pub target_unknown: Option<RangeInclusive<usize>>,
    /// Source samples per class; unknown classes are sampled per
    /// fine-grained class. `None` keeps all.
    pub source_per_class: Option<usize>,
    pub target_per_class: Option<usize>,
}

impl SplitSpec {
    /// Parses `"11-20"`, `"11..20"` or a single position; empty means none.
    pub fn parse_range(s: &str) -> Result<Option<RangeInclusive<usize>>> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(None);
        }
        let bad = || Error::Config(format!("invalid class range {s:?}"));
        let (a, b) = match s.split_once("..").or_else(|| s.split_once('-')) {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (s, s),
        };
        let a: usize = a.parse().map_err(|_| bad())?;
        let b: usize = b.parse().map_err(|_| bad())?;
        Ok(Some(a..=b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetSplit {
    pub source: Dataset,
    /// Unlabeled target set.
    pub target: Dataset,
    /// Original labels of the target samples.
    pub truth: GroundTruth,
}

fn check_range(r: &RangeInclusive<usize>, n: usize, what: &str) -> Result<()> {
    if *r.start() == 0 || r.start() > r.end() || *r.end() > n {
        return Err(Error::Protocol(format!(
            "{what} range {}..{} is not within 1..{n}",
            r.start(),
            r.end()
        )));
    }
    Ok(())
}

fn overlaps(a: &RangeInclusive<usize>, b: &RangeInclusive<usize>) -> bool {
    a.start() <= b.end() && b.start() <= a.end()
}

/// Rows of `pool` whose label is `name`, in pool order.
fn rows_of(pool: &Dataset, name: &str) -> Vec<usize> {
    let Some(class) = pool.catalog().index_of(name) else {
        return Vec::new();
    };
    (0..pool.len())
        .filter(|&i| pool.labels()[i] == Some(class))
        .collect()
}

/// Builds an open-set source/target pair.
///
/// When `target_pool` is `None` the target is drawn from the rows of
/// `source_pool` not used for the source, which requires
/// `source_per_class`.
pub fn make_open_set_split(
    source_pool: &Dataset,
    target_pool: Option<&Dataset>,
    spec: &SplitSpec,
    seed: u64,
) -> Result<OpenSetSplit> {
    let mut names: Vec<String> = source_pool.catalog().shared().to_vec();
    names.sort();
    let n = names.len();
    check_range(&spec.shared, n, "shared")?;
    let mut ranges = vec![("shared", &spec.shared)];
    if let Some(r) = &spec.source_unknown {
        check_range(r, n, "source unknown")?;
        ranges.push(("source unknown", r));
    }
    if let Some(r) = &spec.target_unknown {
        check_range(r, n, "target unknown")?;
        ranges.push(("target unknown", r));
    }
    for i in 0..ranges.len() {
        for j in i + 1..ranges.len() {
            if overlaps(ranges[i].1, ranges[j].1) {
                return Err(Error::Protocol(format!(
                    "{} and {} ranges overlap",
                    ranges[i].0, ranges[j].0
                )));
            }
        }
    }
    if target_pool.is_none() && spec.source_per_class.is_none() {
        return Err(Error::Protocol(
            "a single pool needs a per-class source size to leave samples for the target".into(),
        ));
    }
    if let Some(tp) = target_pool {
        if tp.dim() != source_pool.dim() {
            return Err(Error::Dimension {
                expected: source_pool.dim(),
                got: tp.dim(),
            });
        }
    }

    let pick = |r: &RangeInclusive<usize>| names[r.start() - 1..*r.end()].to_vec();
    let shared = pick(&spec.shared);
    let src_unknown = spec.source_unknown.as_ref().map(pick).unwrap_or_default();
    let tgt_unknown = spec.target_unknown.as_ref().map(pick).unwrap_or_default();
    let catalog = ClassCatalog::new(shared.iter().cloned())?;

    let mut rng = rng::stream(seed, "split");
    let mut source_rows = Vec::new();
    let mut source_labels = Vec::new();
    for (name, class) in shared
        .iter()
        .enumerate()
        .map(|(c, s)| (s, c))
        .chain(src_unknown.iter().map(|s| (s, catalog.unknown_index())))
    {
        let rows = rows_of(source_pool, name);
        let rows = match spec.source_per_class {
            Some(k) => draw(&rows, k, &mut rng)
                .map_err(|e| Error::Sampling(format!("source class {name:?}: {e}")))?,
            None => rows,
        };
        if rows.is_empty() {
            return Err(Error::Sampling(format!("source class {name:?} has no samples")));
        }
        source_labels.extend(std::iter::repeat_n(Some(class), rows.len()));
        source_rows.extend(rows);
    }
    let mut order: Vec<usize> = (0..source_rows.len()).collect();
    order.sort_by_key(|&k| source_rows[k]);
    let src = source_pool.select(&order.iter().map(|&k| source_rows[k]).collect::<Vec<_>>());
    let source = Dataset::new(
        Role::Source,
        catalog.clone(),
        src.ids().to_vec(),
        src.features().clone(),
        order.iter().map(|&k| source_labels[k]).collect(),
    )?;

    let used: HashSet<usize> = if target_pool.is_none() {
        source_rows.iter().copied().collect()
    } else {
        HashSet::new()
    };
    let tpool = target_pool.unwrap_or(source_pool);
    let mut target_rows = Vec::new();
    for name in shared.iter().chain(&tgt_unknown) {
        let rows: Vec<usize> = rows_of(tpool, name)
            .into_iter()
            .filter(|i| !used.contains(i))
            .collect();
        let rows = match spec.target_per_class {
            Some(k) => draw(&rows, k, &mut rng)
                .map_err(|e| Error::Sampling(format!("target class {name:?}: {e}")))?,
            None => rows,
        };
        if rows.is_empty() {
            return Err(Error::Sampling(format!("target class {name:?} has no samples")));
        }
        target_rows.extend(rows);
    }
    target_rows.sort_unstable();
    let tgt = tpool.select(&target_rows);
    let mut truth = GroundTruth::default();
    for &i in &target_rows {
        let label = tpool.labels()[i].expect("pool rows are labeled");
        truth.push(tpool.ids()[i].clone(), tpool.catalog().name(label));
    }
    let target = Dataset::new(
        Role::Target,
        catalog,
        tgt.ids().to_vec(),
        tgt.features().clone(),
        vec![None; target_rows.len()],
    )?;
    Ok(OpenSetSplit {
        source,
        target,
        truth,
    })
}
