//! node2vec: second-order biased random walks fed to a skip-gram model with
//! negative sampling.

mod skipgram;
mod walk;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use skipgram::{pair_gradients, pair_loss, train_skipgram, PairGradients, TrainingReport};
pub use walk::{generate_walks, walk_transition_probs};

use crate::network::{BipartiteNetwork, WeightedGraph};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("invalid node2vec configuration: {0}")]
    InvalidConfig(String),
    #[error("empty walk corpus")]
    EmptyCorpus,
    #[error("walk refers to node {node} but the graph has {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Single-threaded and bit-reproducible for a given seed.
    #[default]
    Deterministic,
    /// Lock-free shared updates across threads; results vary between runs.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Node2VecConfig {
    pub dimensions: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub context_window: usize,
    /// Return parameter: weight 1/p for stepping back to the previous node.
    pub p: f64,
    /// In-out parameter: weight 1/q for moving away from the previous node.
    pub q: f64,
    pub negative_samples: usize,
    pub epochs: usize,
    /// Initial rate, decayed linearly towards zero over training.
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: TrainingMode,
}

impl Default for Node2VecConfig {
    fn default() -> Self {
        Node2VecConfig {
            dimensions: 64,
            walks_per_node: 10,
            walk_length: 80,
            context_window: 10,
            p: 1.0,
            q: 1.0,
            negative_samples: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
            mode: TrainingMode::Deterministic,
        }
    }
}

impl Node2VecConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let positive = [
            ("dimensions", self.dimensions),
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("context_window", self.context_window),
            ("negative_samples", self.negative_samples),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EmbedError::InvalidConfig(format!("{name} must be positive")));
        }
        for (name, v) in [("p", self.p), ("q", self.q), ("learning_rate", self.learning_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EmbedError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.context_window >= self.walk_length {
            return Err(EmbedError::InvalidConfig("context_window must be below walk_length".into()));
        }
        Ok(())
    }
}

/// One vector of `dimensions` entries per node, in node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub dimensions: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl Embedding {
    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (&self.vectors[a], &self.vectors[b]);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    }

    /// Writes `id v1 ... vd` per line, space-separated.
    pub fn write_text(&self, ids: &[String], path: &Path) -> Result<(), EmbedError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, v) in ids.iter().zip(&self.vectors) {
            write!(out, "{id}")?;
            for x in v {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Walks plus skip-gram training on any weighted graph.
pub fn embed<G: WeightedGraph + Sync + ?Sized>(g: &G, cfg: &Node2VecConfig) -> Result<Embedding, EmbedError> {
    cfg.validate()?;
    let walks = generate_walks(g, cfg)?;
    let (embedding, report) = train_skipgram(&walks, g.node_count(), cfg)?;
    if let (Some(first), Some(last)) = (report.epoch_losses.first(), report.epoch_losses.last()) {
        log::debug!(target: "embed", "skip-gram loss {first:.4} -> {last:.4} over {} epochs", report.epoch_losses.len());
    }
    Ok(embedding)
}

/// Embeds the combined user–app graph and keeps the user rows only.
pub fn embed_bipartite_users(nb: &BipartiteNetwork, cfg: &Node2VecConfig) -> Result<Embedding, EmbedError> {
    let mut embedding = embed(&nb.combined_graph(), cfg)?;
    embedding.vectors.truncate(nb.user_ids().len());
    Ok(embedding)
}
