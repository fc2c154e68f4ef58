//! Brute-force reference implementations and random instance generators.
//!
//! Every oracle here recomputes its quantity from the definition, the slow
//! way, without calling the library routine it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use pseudoscore::data::AppUsage;
use pseudoscore::eval::ProfitParams;
use pseudoscore::network::{UnipartiteNetwork, WeightedGraph};
use pseudoscore::seed;
use rand::Rng as _;

pub fn rng(s: u64) -> seed::Rng {
    seed::rng(s)
}

/// Erdős–Rényi graph; weights are 1 or uniform in [0.5, 3).
pub fn random_graph(rng: &mut seed::Rng, n: usize, p: f64, weighted: bool) -> UnipartiteNetwork {
    let ids = (0..n).map(|i| format!("n{i:03}")).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                let w = if weighted { rng.random_range(0.5..3.0) } else { 1.0 };
                edges.push((a, b, w));
            }
        }
    }
    UnipartiteNetwork::from_edges(ids, edges).unwrap()
}

pub fn random_usage(rng: &mut seed::Rng, users: usize, apps: usize) -> Vec<AppUsage> {
    let mut rows = Vec::new();
    for u in 0..users {
        for a in 0..apps {
            if rng.random::<f64>() < 0.25 {
                rows.push(AppUsage {
                    user_id: format!("u{u:03}"),
                    app_id: format!("a{a:02}"),
                    app_category: "tools".into(),
                    uses_per_week: f64::from(rng.random_range(0..6u8)),
                    days_since_last_use: f64::from(rng.random_range(0..30u8)),
                });
            }
        }
    }
    rows
}

/// Shared-app counts of every user pair, from per-user app sets.
pub fn projection_oracle(usage: &[AppUsage], threshold: f64) -> BTreeMap<(String, String), f64> {
    let mut apps: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in usage {
        let set = apps.entry(r.user_id.as_str()).or_default();
        if r.uses_per_week >= threshold {
            set.insert(r.app_id.as_str());
        }
    }
    let users: Vec<&str> = apps.keys().copied().collect();
    let mut out = BTreeMap::new();
    for (i, a) in users.iter().enumerate() {
        for b in &users[i + 1..] {
            let shared = apps[a].intersection(&apps[b]).count();
            if shared > 0 {
                out.insert((a.to_string(), b.to_string()), shared as f64);
            }
        }
    }
    out
}

/// All-pairs hop distances by Floyd–Warshall over the adjacency matrix.
pub fn hop_distances<G: WeightedGraph>(g: &G) -> Vec<Vec<Option<usize>>> {
    let n = g.node_count();
    let mut d = vec![vec![None; n]; n];
    for u in 0..n {
        d[u][u] = Some(0);
        for v in 0..n {
            if u != v && g.is_adjacent(u, v) {
                d[u][v] = Some(1);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

/// (mean distance to reachable others, reachable count) per node.
pub fn closeness_oracle<G: WeightedGraph>(g: &G) -> Vec<(Option<f64>, usize)> {
    hop_distances(g)
        .iter()
        .enumerate()
        .map(|(u, row)| {
            let reach: Vec<usize> = row.iter().enumerate().filter(|(v, _)| *v != u).filter_map(|(_, d)| *d).collect();
            let mean = (!reach.is_empty()).then(|| reach.iter().sum::<usize>() as f64 / reach.len() as f64);
            (mean, reach.len())
        })
        .collect()
}

/// Lists every shortest path from `s` to `t` explicitly.
fn shortest_paths(adj: &[Vec<usize>], dist: &[Vec<Option<usize>>], s: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![vec![s]];
    while let Some(path) = stack.pop() {
        let v = *path.last().unwrap();
        if v == t {
            out.push(path);
            continue;
        }
        let left = dist[v][t].unwrap();
        for &w in &adj[v] {
            if dist[w][t] == Some(left - 1) {
                let mut next = path.clone();
                next.push(w);
                stack.push(next);
            }
        }
    }
    out
}

/// Σ over unordered pairs {s, t} of the share of shortest s–t paths through v.
pub fn betweenness_oracle<G: WeightedGraph>(g: &G) -> Vec<f64> {
    let n = g.node_count();
    let dist = hop_distances(g);
    let adj: Vec<Vec<usize>> = (0..n).map(|u| g.neighbors(u).iter().map(|(v, _)| *v).collect()).collect();
    let mut bc = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            if dist[s][t].is_none() {
                continue;
            }
            let paths = shortest_paths(&adj, &dist, s, t);
            let total = paths.len() as f64;
            for v in 0..n {
                if v != s && v != t {
                    let through = paths.iter().filter(|p| p.contains(&v)).count() as f64;
                    bc[v] += through / total;
                }
            }
        }
    }
    bc
}

/// PageRank with dangling mass restarted, solved as a dense linear system.
pub fn pagerank_oracle<G: WeightedGraph>(g: &G, alpha: f64, restart: &[f64]) -> Vec<f64> {
    let n = g.node_count();
    let mut m = DMatrix::<f64>::identity(n, n);
    for u in 0..n {
        let strength: f64 = g.neighbors(u).iter().map(|(_, w)| w).sum();
        if strength == 0.0 {
            for v in 0..n {
                m[(v, u)] -= alpha * restart[v];
            }
        } else {
            for &(v, w) in g.neighbors(u) {
                m[(v, u)] -= alpha * w / strength;
            }
        }
    }
    let rhs = DVector::from_iterator(n, restart.iter().map(|e| (1.0 - alpha) * e));
    m.lu().solve(&rhs).unwrap().iter().copied().collect()
}

/// node2vec step distribution from the bias definition.
pub fn transition_oracle<G: WeightedGraph>(g: &G, prev: Option<usize>, curr: usize, p: f64, q: f64) -> BTreeMap<usize, f64> {
    let mut raw = BTreeMap::new();
    for &(x, w) in g.neighbors(curr) {
        let bias = match prev {
            None => 1.0,
            Some(t) if x == t => 1.0 / p,
            Some(t) if g.is_adjacent(t, x) => 1.0,
            Some(_) => 1.0 / q,
        };
        raw.insert(x, bias * w);
    }
    let z: f64 = raw.values().sum();
    raw.values_mut().for_each(|v| *v /= z);
    raw
}

/// Pair-counting AUC: Bad above Good counts 1, ties count 1/2.
pub fn auc_oracle(scores: &[f64], bad: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if bad[i] && !bad[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Expected maximum profit by brute force over every (cutoff, λ) pair of a
/// grid: `lambda_points` uniform λ values plus every λ where two cutoffs tie,
/// so the trapezoid rule is exact for the piecewise-linear maximum. Every
/// distinct score is tried as a cutoff (reject scores ≥ t), as is rejecting
/// nobody.
pub fn emp_oracle(scores: &[f64], bad: &[bool], params: &ProfitParams, lambda_points: usize) -> f64 {
    let n_bad = bad.iter().filter(|b| **b).count() as f64;
    let n_good = bad.len() as f64 - n_bad;
    let pi_bad = params.prior_bad.unwrap_or(n_bad / bad.len() as f64);
    let pi_good = 1.0 - pi_bad;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    let lines: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let rb = scores.iter().zip(bad).filter(|(s, b)| **b && **s >= t).count() as f64;
            let rg = scores.iter().zip(bad).filter(|(s, b)| !**b && **s >= t).count() as f64;
            (pi_bad * rb / n_bad, params.roi * pi_good * rg / n_good)
        })
        .collect();
    let best = |lambda: f64| lines.iter().map(|(m, c)| lambda * m - c).fold(f64::NEG_INFINITY, f64::max);
    let mut grid: Vec<f64> = (0..lambda_points).map(|i| i as f64 / (lambda_points - 1) as f64).collect();
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            if a.0 != b.0 {
                let x = (b.1 - a.1) / (b.0 - a.0);
                if x > 0.0 && x < 1.0 {
                    grid.push(x);
                }
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    let integral: f64 = grid.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (best(w[0]) + best(w[1]))).sum();
    let middle = 1.0 - params.p0 - params.p1;
    params.p0 * best(0.0) + params.p1 * best(1.0) + middle * integral
}

/// Two-sided exact sign-flip permutation p-value for a zero mean difference.
pub fn sign_flip_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>().abs();
    let mut extreme = 0u64;
    for mask in 0..1u64 << n {
        let s: f64 = diffs
            .iter()
            .enumerate()
            .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
            .sum();
        if s.abs() >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[k] += h;
            down[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error, with magnitudes below `floor` treated as `floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Exhaustive best Gini split of `rows`: (feature, midpoint threshold, impurity).
pub fn best_gini_split(x: &[Vec<f64>], bad: &[bool], rows: &[usize], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let gini = |rs: &[usize]| {
        if rs.is_empty() {
            return 0.0;
        }
        let p = rs.iter().filter(|&&r| bad[r]).count() as f64 / rs.len() as f64;
        rs.len() as f64 * 2.0 * p * (1.0 - p)
    };
    let parent = gini(rows);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x[0].len() {
        let values: BTreeSet<u64> = rows.iter().map(|&r| x[r][f].to_bits()).collect();
        let mut values: Vec<f64> = values.into_iter().map(f64::from_bits).collect();
        values.sort_by(f64::total_cmp);
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let imp = gini(&l) + gini(&r);
            if imp < parent - 1e-12 && best.is_none_or(|b| imp < b.2) {
                best = Some((f, t, imp));
            }
        }
    }
    best
}

/// Node of a tree grown by repeated exhaustive split search.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<OracleNode>, right: Box<OracleNode> },
}

/// Unweighted tree over all features: stop at `max_depth`, on pure nodes,
/// below `2 * min_leaf` rows, or when no split lowers the impurity.
pub fn oracle_tree(x: &[Vec<f64>], bad: &[bool], rows: &[usize], depth: usize, max_depth: usize, min_leaf: usize) -> OracleNode {
    let n_bad = rows.iter().filter(|&&r| bad[r]).count();
    let leaf = OracleNode::Leaf(n_bad as f64 / rows.len() as f64);
    if depth >= max_depth || rows.len() < 2 * min_leaf || n_bad == 0 || n_bad == rows.len() {
        return leaf;
    }
    let Some((feature, threshold, _)) = best_gini_split(x, bad, rows, min_leaf) else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
    OracleNode::Split {
        feature,
        threshold,
        left: Box::new(oracle_tree(x, bad, &l, depth + 1, max_depth, min_leaf)),
        right: Box::new(oracle_tree(x, bad, &r, depth + 1, max_depth, min_leaf)),
    }
}
