//! Neighborhood, centrality and influence features of the pseudo-social network.

mod centrality;
mod egonet;
mod pagerank;

pub use centrality::{betweenness, closeness, closeness_all, Closeness};
pub use egonet::{egonet_all, egonet_features, EgonetFeatures};
pub use pagerank::{
    bipartite_user_influence, personalized_pagerank, restart_from_app_rfm, restart_from_bad_users,
    PageRankConfig, PageRankScores,
};

#[derive(Debug, thiserror::Error)]
pub enum NetFeatError {
    #[error("node index {0} is not in the network")]
    UnknownNode(usize),
    #[error("invalid PageRank configuration: {0}")]
    InvalidConfig(String),
    #[error("no Bad users to use as the restart set")]
    NoBadNodes,
    #[error("restart weights are all zero")]
    ZeroRestart,
    #[error("usage table does not cover bipartite edge ({user}, {app})")]
    MissingUsage { user: String, app: String },
    #[error("PageRank did not converge after {iterations} iterations (L1 residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}
