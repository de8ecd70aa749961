use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// For each target, its k nearest other targets (Euclidean, raw target
/// features), nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    lists: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn from_lists(lists: Vec<Vec<usize>>) -> Result<Self> {
        let k = lists.first().map_or(0, Vec::len);
        let n = lists.len();
        for (t, l) in lists.iter().enumerate() {
            if l.len() != k {
                return Err(Error::Data("all neighbour lists must have the same length".into()));
            }
            if l.iter().any(|&u| u == t || u >= n) {
                return Err(Error::Data(format!("invalid neighbour list for target {t}")));
            }
            let mut sorted = l.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != k {
                return Err(Error::Data(format!("duplicate neighbour for target {t}")));
            }
        }
        Ok(NeighborGraph { k, lists })
    }

    /// Graph without edges over `n` targets.
    pub fn empty(n: usize) -> Self {
        NeighborGraph {
            k: 0,
            lists: vec![Vec::new(); n],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn neighbors(&self, t: usize) -> &[usize] {
        &self.lists[t]
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }

    /// `u` such that `t ∈ N_u`, for every `t`.
    pub fn reverse(&self) -> Vec<Vec<usize>> {
        let mut rev = vec![Vec::new(); self.lists.len()];
        for (u, l) in self.lists.iter().enumerate() {
            for &t in l {
                rev[t].push(u);
            }
        }
        rev
    }
}

/// Exact k-NN by brute force; ties go to the lower index.
pub fn build_neighbors(targets: &Dataset, k: usize) -> Result<NeighborGraph> {
    let n = targets.len();
    if k >= n {
        return Err(Error::Config(format!(
            "k = {k} neighbours needs more than {n} targets"
        )));
    }
    let x = targets.features();
    let mut lists = Vec::with_capacity(n);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for t in 0..n {
        dist.clear();
        let xt = x.column(t);
        for u in (0..n).filter(|&u| u != t) {
            let d: f64 = xt
                .iter()
                .zip(x.column(u).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist.push((d, u));
        }
        if k > 0 {
            dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut near = dist[..k].to_vec();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            lists.push(near.into_iter().map(|(_, u)| u).collect());
        } else {
            lists.push(Vec::new());
        }
    }
    Ok(NeighborGraph { k, lists })
}
