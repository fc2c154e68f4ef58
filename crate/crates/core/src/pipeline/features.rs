//! Feature columns for every user of the network, and the label-dependent
//! columns recomputed per evaluation view with held-out labels hidden.

use serde::{Deserialize, Serialize};

use super::config::{EmbedGraph, PipelineConfig};
use super::StageError;
use crate::data::{Dataset, Label};
use crate::embed::{embed, embed_bipartite_users, Embedding};
use crate::netfeat::{
    betweenness, bipartite_user_influence, closeness_all, egonet_all, personalized_pagerank, restart_from_app_rfm,
    restart_from_bad_users, NetFeatError, PageRankConfig,
};
use crate::network::{BipartiteNetwork, LabeledNetwork, UnipartiteNetwork, WeightedGraph};
use crate::scoring::{build_behavior_features, build_sociodemographic_features, first_grant_dates, Column, FeatureMatrix, Group};

pub const HAS_LABELED_NEIGHBOR: &str = "has_labeled_neighbor";

/// Rows whose labels a view hides from the label-dependent features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepColumns {
    pub dimensions: usize,
    pub columns: Vec<Column>,
}

/// Output of the featurize stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    /// Row ids, in network node order.
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    /// Columns that do not depend on any label.
    pub base: FeatureMatrix,
    /// Test rows of each cross-validation fold.
    pub folds: Vec<Vec<usize>>,
    /// Split used to fit and probe the importance models.
    pub holdout: Holdout,
    /// Label-dependent columns per fold, followed by those of the holdout split.
    pub views: Vec<Vec<Column>>,
    pub sweep: Vec<SweepColumns>,
}

impl FeatureSet {
    /// Base columns plus the label-dependent columns of view `v`.
    pub fn view_matrix(&self, v: usize) -> Result<FeatureMatrix, StageError> {
        let mut m = self.base.clone();
        m.extend(self.views[v].iter().cloned())?;
        Ok(m)
    }

    pub fn holdout_view(&self) -> usize {
        self.folds.len()
    }

    pub fn sweep_matrix(&self, s: usize) -> Result<FeatureMatrix, StageError> {
        let mut m = FeatureMatrix::new(self.ids.clone())?;
        m.extend(self.sweep[s].columns.iter().cloned())?;
        Ok(m)
    }
}

pub fn pagerank_config(cfg: &PipelineConfig, restart: Vec<f64>) -> PageRankConfig {
    PageRankConfig {
        alpha: cfg.pagerank.alpha,
        restart,
        tolerance: cfg.pagerank.tolerance,
        max_iterations: cfg.pagerank.max_iterations,
    }
}

fn counts(values: impl IntoIterator<Item = usize>) -> Vec<f64> {
    values.into_iter().map(|v| v as f64).collect()
}

/// Every column that does not read labels, for the enabled groups.
pub fn label_free_columns(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    nb: &BipartiteNetwork,
    net: &UnipartiteNetwork,
    embedding_seed: u64,
) -> Result<Vec<Column>, StageError> {
    let ids = net.ids();
    let f = &cfg.features;
    let mut out = Vec::new();
    if f.sociodemographic {
        out.extend(build_sociodemographic_features(&dataset.users, ids));
    }
    if f.behavior {
        let cutoff = first_grant_dates(&dataset.loans);
        out.extend(build_behavior_features(&dataset.calls, ids, &cutoff, &f.buckets)?);
    }
    if f.neighborhood {
        let n = net.node_count();
        out.push(Column::complete("degree", Group::Neighborhood, counts((0..n).map(|u| net.degree(u)))));
        out.push(Column::complete("weighted_degree", Group::Neighborhood, (0..n).map(|u| net.strength(u)).collect()));
        let unlabeled = LabeledNetwork::from_node_labels(net, vec![Label::Unlabeled; n]);
        let ego = egonet_all(&unlabeled);
        out.push(Column::complete("triangle_count", Group::Neighborhood, counts(ego.iter().map(|e| e.triangle_count))));
        out.push(Column::complete("transitivity", Group::Neighborhood, ego.iter().map(|e| e.transitivity).collect()));
    }
    if f.centrality {
        log::info!(target: "features", "closeness and betweenness over {} nodes", net.node_count());
        let close = closeness_all(net);
        out.push(Column::optional(
            "closeness_avg_distance",
            Group::Centrality,
            close.iter().map(|c| c.avg_distance),
        ));
        out.push(Column::complete("closeness_reachable", Group::Centrality, counts(close.iter().map(|c| c.reachable))));
        out.push(Column::complete("betweenness", Group::Centrality, betweenness(net)));
    }
    if f.influence {
        let restart = restart_from_app_rfm(nb, &dataset.app_usage, cfg.pagerank.rfm_half_life_days)?;
        let scores = bipartite_user_influence(nb, &pagerank_config(cfg, restart))?;
        out.push(Column::complete("app_rfm_influence", Group::Influence, scores));
    }
    if f.embedding {
        let e = embedding(cfg, nb, net, cfg.node2vec.dimensions, embedding_seed)?;
        out.extend(embedding_columns(&e));
    }
    Ok(out)
}

pub fn embedding(
    cfg: &PipelineConfig,
    nb: &BipartiteNetwork,
    net: &UnipartiteNetwork,
    dimensions: usize,
    seed: u64,
) -> Result<Embedding, StageError> {
    log::info!(target: "features", "node2vec with {dimensions} dimensions on the {:?} graph", cfg.node2vec.graph);
    let ncfg = cfg.node2vec.embed_config(dimensions, seed);
    Ok(match cfg.node2vec.graph {
        EmbedGraph::Unipartite => embed(net, &ncfg)?,
        EmbedGraph::Bipartite => embed_bipartite_users(nb, &ncfg)?,
    })
}

pub fn embedding_columns(e: &Embedding) -> Vec<Column> {
    (0..e.dimensions)
        .map(|k| Column::complete(format!("embedding_{k}"), Group::Embedding, e.vectors.iter().map(|v| v[k]).collect()))
        .collect()
}

/// Label-dependent columns computed from `labels`, in which every held-out
/// user is already Unlabeled.
pub fn label_columns(cfg: &PipelineConfig, net: &UnipartiteNetwork, labels: Vec<Label>) -> Result<Vec<Column>, StageError> {
    let g = LabeledNetwork::from_node_labels(net, labels);
    let mut out = Vec::new();
    if cfg.features.neighborhood {
        let ego = egonet_all(&g);
        out.push(Column::complete("good_degree", Group::Neighborhood, counts(ego.iter().map(|e| e.good_degree))));
        out.push(Column::complete("bad_degree", Group::Neighborhood, counts(ego.iter().map(|e| e.bad_degree))));
        out.push(
            Column::optional("relational_neighbor", Group::Neighborhood, ego.iter().map(|e| e.relational_neighbor))
                .with_companion(HAS_LABELED_NEIGHBOR),
        );
        out.push(Column::complete(
            HAS_LABELED_NEIGHBOR,
            Group::Neighborhood,
            ego.iter().map(|e| if e.relational_neighbor.is_some() { 1.0 } else { 0.0 }).collect(),
        ));
    }
    if cfg.features.influence {
        out.push(Column::complete("bad_influence", Group::Influence, bad_influence(cfg, &g)?));
    }
    Ok(out)
}

/// PageRank mass flowing into each node from its neighbors when restarting
/// at the Bad users.
///
/// A Bad user's own restart share is left out; otherwise training rows would
/// carry their label in this column while masked rows could not.
fn bad_influence(cfg: &PipelineConfig, g: &LabeledNetwork<'_>) -> Result<Vec<f64>, StageError> {
    let net = g.network();
    let restart = match restart_from_bad_users(g) {
        Ok(restart) => restart,
        Err(NetFeatError::NoBadNodes) => {
            log::warn!(target: "features", "no visible Bad users; bad_influence is zero");
            return Ok(vec![0.0; net.node_count()]);
        }
        Err(e) => return Err(e.into()),
    };
    let r = personalized_pagerank(net, &pagerank_config(cfg, restart))?.scores;
    let alpha = cfg.pagerank.alpha;
    let strength: Vec<f64> = (0..net.node_count()).map(|u| net.strength(u)).collect();
    Ok((0..net.node_count())
        .map(|u| {
            net.neighbors(u)
                .iter()
                .map(|&(v, w)| alpha * r[v] * w / strength[v])
                .sum::<f64>()
        })
        .collect())
}

/// `labels` with the given rows hidden.
pub fn mask(labels: &[Label], hidden: &[usize]) -> Vec<Label> {
    let mut out = labels.to_vec();
    for &r in hidden {
        out[r] = Label::Unlabeled;
    }
    out
}
