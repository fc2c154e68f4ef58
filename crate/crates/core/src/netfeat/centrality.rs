//! Hop-distance centralities. Edge weights are similarities, not costs, so
//! both measures ignore them.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NetFeatError;
use crate::network::WeightedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Closeness {
    /// Mean hop distance to the reachable nodes; `None` for an isolated node.
    pub avg_distance: Option<f64>,
    pub reachable: usize,
}

/// BFS distances from `source`; `usize::MAX` marks unreachable nodes.
fn bfs_distances<G: WeightedGraph + ?Sized>(g: &G, source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    let mut queue = VecDeque::new();
    dist[source] = 0;
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        for &(w, _) in g.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Average hop distance from `node` to every other node it can reach.
pub fn closeness<G: WeightedGraph + ?Sized>(g: &G, node: usize) -> Result<Closeness, NetFeatError> {
    if node >= g.node_count() {
        return Err(NetFeatError::UnknownNode(node));
    }
    let dist = bfs_distances(g, node);
    let (mut total, mut reachable) = (0usize, 0usize);
    for (v, &d) in dist.iter().enumerate() {
        if v != node && d != usize::MAX {
            total += d;
            reachable += 1;
        }
    }
    let avg_distance = (reachable > 0).then(|| total as f64 / reachable as f64);
    Ok(Closeness {
        avg_distance,
        reachable,
    })
}

pub fn closeness_all<G: WeightedGraph + Sync + ?Sized>(g: &G) -> Vec<Closeness> {
    (0..g.node_count())
        .into_par_iter()
        .map(|u| closeness(g, u).expect("node in range"))
        .collect()
}

/// Sources handled per parallel task; partial sums are added in chunk order,
/// so the result does not depend on the thread count.
const SOURCES_PER_TASK: usize = 64;

/// Shortest-path betweenness of every node (Brandes accumulation over BFS
/// trees). Each unordered pair of endpoints is counted once.
pub fn betweenness<G: WeightedGraph + Sync + ?Sized>(g: &G) -> Vec<f64> {
    let n = g.node_count();
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCES_PER_TASK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            let mut state = BrandesState::new(n);
            for &s in chunk {
                state.accumulate(g, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    // every unordered pair was reached from both endpoints
    total.iter_mut().for_each(|b| *b /= 2.0);
    total
}

struct BrandesState {
    stack: Vec<usize>,
    queue: VecDeque<usize>,
    predecessors: Vec<Vec<usize>>,
    sigma: Vec<f64>,
    dist: Vec<usize>,
    delta: Vec<f64>,
}

impl BrandesState {
    fn new(n: usize) -> Self {
        BrandesState {
            stack: Vec::with_capacity(n),
            queue: VecDeque::with_capacity(n),
            predecessors: vec![Vec::new(); n],
            sigma: vec![0.0; n],
            dist: vec![usize::MAX; n],
            delta: vec![0.0; n],
        }
    }

    fn accumulate<G: WeightedGraph + ?Sized>(&mut self, g: &G, s: usize, acc: &mut [f64]) {
        // reset only what the previous source touched
        for &v in &self.stack {
            self.predecessors[v].clear();
            self.sigma[v] = 0.0;
            self.dist[v] = usize::MAX;
            self.delta[v] = 0.0;
        }
        self.stack.clear();

        self.sigma[s] = 1.0;
        self.dist[s] = 0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.stack.push(v);
            for &(w, _) in g.neighbors(v) {
                if self.dist[w] == usize::MAX {
                    self.dist[w] = self.dist[v] + 1;
                    self.queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1 {
                    self.sigma[w] += self.sigma[v];
                    self.predecessors[w].push(v);
                }
            }
        }
        for i in (0..self.stack.len()).rev() {
            let w = self.stack[i];
            let coeff = (1.0 + self.delta[w]) / self.sigma[w];
            for j in 0..self.predecessors[w].len() {
                let v = self.predecessors[w][j];
                self.delta[v] += self.sigma[v] * coeff;
            }
            if w != s {
                acc[w] += self.delta[w];
            }
        }
    }
}
