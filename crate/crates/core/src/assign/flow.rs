//! Exact linear assignment as a min-cost flow.
//!
//! Network: `s → c` (lower bound 1 when class `c` must be covered, capacity
//! |T|, cost 0), `c → t` (capacity 1, cost `d_ct`), an outlier bypass
//! `s → t` (capacity 1, cost λ), and `t → z` (capacity 1). Every target
//! demands one unit. Lower bounds are removed with a super source that
//! feeds each covered class its one mandatory unit directly.
//!
//! Pinned targets keep only their `ĉ_t → t` arc. The LP is a
//! transportation problem, so successive shortest paths return an integral
//! optimum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{linear_objective, Assignment, CostMatrix, SolveConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
}

/// Residual graph; arc `2k` is the forward arc, `2k + 1` its reverse.
#[derive(Debug, Default)]
pub(crate) struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node)
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FlowNetwork {
    pub(crate) fn new(nodes: usize) -> Self {
        FlowNetwork {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    /// Adds `from → to`; costs must be non-negative. Returns the arc id.
    pub(crate) fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        debug_assert!(cost >= 0.0);
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Flow currently on forward arc `id`.
    pub(crate) fn flow(&self, id: usize) -> i64 {
        self.arcs[id + 1].cap
    }

    /// Successive shortest paths with Johnson potentials. Pushes up to
    /// `amount` units from `s` to `z`; returns the amount pushed.
    pub(crate) fn min_cost_flow(&mut self, s: usize, z: usize, amount: i64) -> i64 {
        let n = self.adj.len();
        let mut potential = vec![0.0f64; n];
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut pushed = 0;
        while pushed < amount {
            dist.fill(f64::INFINITY);
            via.fill(usize::MAX);
            done.fill(false);
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem { dist: 0.0, node: s });
            while let Some(HeapItem { dist: du, node: u }) = heap.pop() {
                if done[u] {
                    continue;
                }
                done[u] = true;
                if u == z {
                    break;
                }
                for &id in &self.adj[u] {
                    let arc = self.arcs[id];
                    if arc.cap <= 0 || done[arc.to] {
                        continue;
                    }
                    // rounding can leave reduced costs a hair below zero
                    let reduced = (arc.cost + potential[u] - potential[arc.to]).max(0.0);
                    let nd = du + reduced;
                    if nd < dist[arc.to] {
                        dist[arc.to] = nd;
                        via[arc.to] = id;
                        heap.push(HeapItem {
                            dist: nd,
                            node: arc.to,
                        });
                    }
                }
            }
            if !dist[z].is_finite() {
                break;
            }
            // capping at the sink distance keeps every reduced cost >= 0
            let cap = dist[z];
            for v in 0..n {
                potential[v] += if done[v] { dist[v] } else { cap };
            }
            let mut bottleneck = amount - pushed;
            let mut v = z;
            while v != s {
                let id = via[v];
                bottleneck = bottleneck.min(self.arcs[id].cap);
                v = self.arcs[id ^ 1].to;
            }
            let mut v = z;
            while v != s {
                let id = via[v];
                self.arcs[id].cap -= bottleneck;
                self.arcs[id ^ 1].cap += bottleneck;
                v = self.arcs[id ^ 1].to;
            }
            pushed += bottleneck;
        }
        pushed
    }
}

/// Shared implementation for the unsupervised and semi-supervised problems.
pub(crate) fn solve_linear(d: &CostMatrix, cfg: &SolveConfig) -> Result<Assignment> {
    let (nc, nt) = (d.n_classes(), d.n_targets());
    if nc == 0 {
        return Err(Error::Infeasible("no classes".into()));
    }
    let fixed = cfg.fixed_per_target(nc, nt)?;
    let required: Vec<bool> = (0..nc).map(|c| cfg.requires(c)).collect();
    let n_required = required.iter().filter(|&&r| r).count();
    if n_required > nt {
        return Err(Error::Infeasible(format!(
            "{nt} targets cannot cover {n_required} classes"
        )));
    }

    // nodes: super source, s, classes, targets, sink
    let super_source = 0;
    let s = 1;
    let class_node = |c: usize| 2 + c;
    let target_node = |t: usize| 2 + nc + t;
    let z = 2 + nc + nt;
    let mut net = FlowNetwork::new(z + 1);
    let total = nt as i64;
    net.add_arc(super_source, s, total - n_required as i64, 0.0);
    for (c, &req) in required.iter().enumerate() {
        if req {
            net.add_arc(super_source, class_node(c), 1, 0.0);
        }
        net.add_arc(s, class_node(c), total - i64::from(req), 0.0);
    }
    let mut class_arcs = Vec::with_capacity(nc * nt);
    let mut outlier_arcs = vec![None; nt];
    for t in 0..nt {
        for c in 0..nc {
            if fixed[t].is_none_or(|f| f == c) {
                class_arcs.push((c, t, net.add_arc(class_node(c), target_node(t), 1, d.get(c, t))));
            }
        }
        if fixed[t].is_none() && cfg.lambda.is_finite() {
            outlier_arcs[t] = Some(net.add_arc(s, target_node(t), 1, cfg.lambda));
        }
        net.add_arc(target_node(t), z, 1, 0.0);
    }

    let pushed = net.min_cost_flow(super_source, z, total);
    if pushed < total {
        return Err(Error::Infeasible(
            "no labelling satisfies the coverage and fixed-label constraints".into(),
        ));
    }
    let mut labels = vec![None; nt];
    for &(c, t, id) in &class_arcs {
        if net.flow(id) == 1 {
            labels[t] = Some(c);
        }
    }
    debug_assert!(outlier_arcs
        .iter()
        .enumerate()
        .all(|(t, a)| a.map_or(labels[t].is_some(), |id| (net.flow(id) == 1) == labels[t].is_none())));
    let objective = linear_objective(d, &labels, cfg.lambda);
    Assignment::new(labels, nc, objective)
}

/// Optimal labelling with outlier rejection and class coverage. Fixed
/// labels in `cfg` are ignored.
pub fn solve_unsupervised(d: &CostMatrix, cfg: &SolveConfig) -> Result<Assignment> {
    if cfg.fixed_labels.is_empty() {
        solve_linear(d, cfg)
    } else {
        let cfg = SolveConfig {
            fixed_labels: Vec::new(),
            ..cfg.clone()
        };
        solve_linear(d, &cfg)
    }
}

/// Optimal labelling subject to `x_{ĉ_t t} = 1` for every fixed pair.
pub fn solve_semi_supervised(d: &CostMatrix, cfg: &SolveConfig) -> Result<Assignment> {
    solve_linear(d, cfg)
}
