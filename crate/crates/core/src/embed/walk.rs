use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::{EmbedError, Node2VecConfig};
use crate::network::WeightedGraph;
use crate::seed;

/// Next-step distribution of a second-order walk currently at `curr`, having
/// arrived from `prev`.
///
/// Each neighbor `x` gets weight `w(curr, x) · β` with β = 1/p when `x` is
/// `prev`, 1 when `x` is adjacent to `prev`, and 1/q otherwise. Without a
/// previous node (first step) the weights are used as they are. Returns an
/// empty list when `curr` has no neighbors.
pub fn walk_transition_probs<G: WeightedGraph + ?Sized>(
    g: &G,
    prev: Option<usize>,
    curr: usize,
    cfg: &Node2VecConfig,
) -> Vec<(usize, f64)> {
    let mut probs: Vec<(usize, f64)> = g
        .neighbors(curr)
        .iter()
        .map(|&(x, w)| {
            let bias = match prev {
                None => 1.0,
                Some(t) if x == t => 1.0 / cfg.p,
                Some(t) if g.is_adjacent(t, x) => 1.0,
                Some(_) => 1.0 / cfg.q,
            };
            (x, w * bias)
        })
        .collect();
    let total: f64 = probs.iter().map(|(_, w)| w).sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|(_, w)| *w /= total);
    }
    probs
}

fn sample(probs: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(x, p) in probs {
        acc += p;
        if u < acc {
            return x;
        }
    }
    probs.last().expect("nonempty distribution").0
}

fn walk_from<G: WeightedGraph + ?Sized>(g: &G, start: usize, cfg: &Node2VecConfig, rng: &mut seed::Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(cfg.walk_length);
    walk.push(start);
    let mut prev = None;
    while walk.len() < cfg.walk_length {
        let curr = *walk.last().unwrap();
        let probs = walk_transition_probs(g, prev, curr, cfg);
        if probs.is_empty() {
            break;
        }
        let next = sample(&probs, rng.random::<f64>());
        walk.push(next);
        prev = Some(curr);
    }
    walk
}

/// `walks_per_node` rounds; each round visits every node once as a start, in
/// an order shuffled from the seeded stream.
///
/// Each walk draws from its own stream derived from (seed, round, start), so
/// the corpus is identical whatever the thread count.
pub fn generate_walks<G: WeightedGraph + Sync + ?Sized>(g: &G, cfg: &Node2VecConfig) -> Result<Vec<Vec<usize>>, EmbedError> {
    cfg.validate()?;
    let n = g.node_count();
    let mut order_rng = seed::rng(seed::derive(cfg.seed, "walk-order"));
    let mut walks = Vec::with_capacity(n * cfg.walks_per_node);
    for round in 0..cfg.walks_per_node {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut order_rng);
        let batch: Vec<Vec<usize>> = order
            .par_iter()
            .map(|&start| {
                let mut rng = seed::rng(seed::derive_indexed(cfg.seed, &[round as u64, start as u64]));
                walk_from(g, start, cfg, &mut rng)
            })
            .collect();
        walks.extend(batch);
    }
    Ok(walks)
}
