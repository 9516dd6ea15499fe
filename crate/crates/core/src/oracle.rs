//! Independent reference computations used to cross-check the fast paths.
//!
//! Each routine here takes a different algorithmic route from the code it
//! checks: sorting instead of fixpoint iteration for the simplex projection,
//! a min-cost-flow solve instead of the CDF formula for EMD, and explicit
//! enumeration of the mechanism's random choices instead of sampling for
//! report probabilities. They favour clarity over speed and are meant for
//! small inputs.

use std::collections::BTreeMap;

use crate::protocols::{ProtocolKind, ProtocolSpec, Report};

/// Euclidean projection onto the probability simplex by sorting
/// (no degenerate-input fallback).
pub fn simplex_projection_sorted(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    x.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// Scalar `tau` with `sum max(x - tau, 0) = 1`, by bisection.
pub fn projection_threshold_bisection(x: &[f64]) -> f64 {
    let mass = |t: f64| x.iter().map(|&v| (v - t).max(0.0)).sum::<f64>();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (max - 1.0, max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Norm-Cut threshold by trying every candidate and summing from scratch.
pub fn norm_cut_threshold_brute_force(x: &[f64]) -> f64 {
    let kept = |theta: f64| x.iter().filter(|&&v| v > theta).sum::<f64>();
    if kept(0.0) <= 1.0 {
        return 0.0;
    }
    let mut candidates: Vec<f64> = x.iter().copied().filter(|&v| v > 0.0).collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::INFINITY, 0.0);
    for theta in candidates {
        let gap = (kept(theta) - 1.0).abs();
        if gap < best.0 {
            best = (gap, theta);
        }
    }
    best.1
}

/// Mass moved between points of a 1-D domain: `flow[i][j]` from `i` to `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub flow: Vec<Vec<f64>>,
}

impl TransportPlan {
    pub fn cost(&self) -> f64 {
        self.flow
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(j, &m)| m * (i as f64 - j as f64).abs())
            })
            .sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.flow.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.flow.len())
            .map(|j| self.flow.iter().map(|r| r[j]).sum())
            .collect()
    }
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Optimal transport between two distributions on `0..d` with ground cost
/// `|i - j|`, solved as a min-cost flow by successive shortest paths.
/// Inputs must be non-negative with equal totals.
pub fn transport_lp(source: &[f64], target: &[f64]) -> TransportPlan {
    let d = source.len();
    assert_eq!(d, target.len());
    let (s, t) = (2 * d, 2 * d + 1);
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 2 * d + 2];
    let add = |edges: &mut Vec<Edge>,
               adj: &mut Vec<Vec<usize>>,
               from: usize,
               to: usize,
               cap: f64,
               cost: f64| {
        adj[from].push(edges.len());
        edges.push(Edge { to, cap, cost });
        adj[to].push(edges.len());
        edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    };
    for i in 0..d {
        add(&mut edges, &mut adj, s, i, source[i], 0.0);
        add(&mut edges, &mut adj, d + i, t, target[i], 0.0);
    }
    let mut pair_edge = vec![vec![0usize; d]; d];
    for i in 0..d {
        for j in 0..d {
            pair_edge[i][j] = edges.len();
            add(
                &mut edges,
                &mut adj,
                i,
                d + j,
                f64::INFINITY,
                (i as f64 - j as f64).abs(),
            );
        }
    }

    const EPS: f64 = 1e-15;
    loop {
        // Bellman-Ford over the residual graph
        let n = 2 * d + 2;
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![usize::MAX; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > EPS && dist[u] + edge.cost < dist[edge.to] - 1e-12 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[t].is_infinite() {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while v != s {
            let e = via[v];
            bottleneck = bottleneck.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = t;
        while v != s {
            let e = via[v];
            edges[e].cap -= bottleneck;
            edges[e ^ 1].cap += bottleneck;
            v = edges[e ^ 1].to;
        }
    }

    let flow = (0..d)
        .map(|i| (0..d).map(|j| edges[pair_edge[i][j] ^ 1].cap).collect())
        .collect();
    TransportPlan { flow }
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exact output distribution of the mechanism for true value `v`, built by
/// enumerating its random choices. Unsupported for the hashing protocols
/// (use [`hashed_bucket_distribution`]) and intended for small domains.
pub fn report_distribution(spec: &ProtocolSpec, v: usize) -> BTreeMap<Report, f64> {
    let d = spec.d();
    let p = spec.p();
    let mut dist: BTreeMap<Report, f64> = BTreeMap::new();
    match spec.kind() {
        ProtocolKind::Grr => {
            // keep with p, otherwise uniform over the other d - 1 values
            *dist.entry(Report::Value(v as u32)).or_default() += p;
            for y in (0..d).filter(|&y| y != v) {
                *dist.entry(Report::Value(y as u32)).or_default() += (1.0 - p) / (d - 1) as f64;
            }
        }
        ProtocolKind::Rappor | ProtocolKind::Oue => {
            let q = spec.q();
            for mask in 0u64..(1 << d) {
                let bits: Vec<bool> = (0..d).map(|i| mask >> i & 1 == 1).collect();
                let prob: f64 = bits
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| {
                        let one = if i == v { p } else { q };
                        if b {
                            one
                        } else {
                            1.0 - one
                        }
                    })
                    .product();
                dist.insert(Report::Bits(bits), prob);
            }
        }
        ProtocolKind::Ss => {
            let k = spec.k().expect("SS has a subset size");
            let others: Vec<usize> = (0..d).filter(|&u| u != v).collect();
            let with_v = combinations(&others, k - 1);
            for mut c in with_v.iter().cloned() {
                c.push(v);
                c.sort_unstable();
                *dist
                    .entry(Report::Subset(c.iter().map(|&x| x as u32).collect()))
                    .or_default() += p / with_v.len() as f64;
            }
            let without_v = combinations(&others, k);
            for c in &without_v {
                *dist
                    .entry(Report::Subset(c.iter().map(|&x| x as u32).collect()))
                    .or_default() += (1.0 - p) / without_v.len() as f64;
            }
        }
        ProtocolKind::Blh | ProtocolKind::Olh => {
            panic!("hashing protocols have a per-seed distribution; use hashed_bucket_distribution")
        }
    }
    dist
}

/// Distribution of the reported bucket for value `v` given the hash seed `(a, b)`.
pub fn hashed_bucket_distribution(spec: &ProtocolSpec, a: u64, b: u64, v: usize) -> Vec<f64> {
    let g = spec.g().expect("hashing protocol") as usize;
    let prime = spec.prime().expect("hashing protocol");
    let h = ((a as u128 * v as u128 + b as u128) % prime as u128 % g as u128) as usize;
    (0..g)
        .map(|y| {
            if y == h {
                spec.p()
            } else {
                (1.0 - spec.p()) / (g - 1) as f64
            }
        })
        .collect()
}

/// Largest `Pr[y | v1] / Pr[y | v2]` over all outputs and value pairs, given
/// each value's output distribution.
pub fn max_privacy_ratio<K: Ord>(dists: &[BTreeMap<K, f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for d1 in dists {
        for d2 in dists {
            for (y, &p1) in d1 {
                let p2 = d2.get(y).copied().unwrap_or(0.0);
                if p1 > 0.0 {
                    worst = worst.max(if p2 > 0.0 { p1 / p2 } else { f64::INFINITY });
                }
            }
        }
    }
    worst
}

/// Per-method win counts by direct comparison of every pair of methods in
/// every run: a method wins a run when no other method is strictly smaller.
pub fn recount_wins(values: &[Vec<f64>]) -> Vec<usize> {
    let runs = values.first().map_or(0, Vec::len);
    (0..values.len())
        .map(|m| {
            (0..runs)
                .filter(|&r| values.iter().all(|other| !(other[r] < values[m][r])))
                .count()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::build_protocol;

    #[test]
    fn projection_examples() {
        let out = simplex_projection_sorted(&[0.9, 0.4, -0.3]);
        assert!((out[0] - 0.75).abs() < 1e-12 && (out[1] - 0.25).abs() < 1e-12 && out[2] == 0.0);
        assert!((projection_threshold_bisection(&[0.9, 0.4, -0.3]) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn brute_force_cut() {
        assert_eq!(norm_cut_threshold_brute_force(&[0.6, 0.5, 0.3, -0.1]), 0.3);
        assert_eq!(norm_cut_threshold_brute_force(&[0.3, 0.4, -0.2]), 0.0);
    }

    #[test]
    fn transport_plan_is_feasible_and_optimal_on_examples() {
        let plan = transport_lp(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]);
        assert!((plan.cost() - 2.0).abs() < 1e-12);
        let plan = transport_lp(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]);
        assert!((plan.cost() - 1.0).abs() < 1e-12);
        for (r, e) in plan.row_sums().iter().zip([0.5, 0.5, 0.0]) {
            assert!((r - e).abs() < 1e-12);
        }
        for (c, e) in plan.column_sums().iter().zip([0.0, 0.5, 0.5]) {
            assert!((c - e).abs() < 1e-12);
        }
    }

    #[test]
    fn enumerated_distributions_sum_to_one() {
        for kind in [
            ProtocolKind::Grr,
            ProtocolKind::Rappor,
            ProtocolKind::Oue,
            ProtocolKind::Ss,
        ] {
            let spec = build_protocol(kind, 5, 0.3).unwrap();
            for v in 0..5 {
                let total: f64 = report_distribution(&spec, v).values().sum();
                assert!((total - 1.0).abs() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn win_recount() {
        let wins = recount_wins(&[vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 4.0]]);
        assert_eq!(wins, vec![2, 2]);
    }
}
