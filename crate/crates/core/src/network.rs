//! User–app bipartite networks, their one-mode projection onto users, and
//! label attachment.
//!
//! Adjacency is kept as sorted neighbor lists per node: the graphs are sparse
//! and every downstream algorithm iterates neighbors rather than doing matrix
//! algebra.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AppUsage, Label};

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("frequency threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(String, String),
    #[error("self-loop on node {0}")]
    SelfLoop(String),
    #[error("edge ({0}, {1}) has invalid weight {2}")]
    InvalidWeight(String, String, f64),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Read access to a weighted undirected graph over dense node indices.
pub trait WeightedGraph {
    fn node_count(&self) -> usize;
    /// Neighbors of `node` with edge weights, sorted by neighbor index.
    fn neighbors(&self, node: usize) -> &[(usize, f64)];

    fn degree(&self, node: usize) -> usize {
        self.neighbors(node).len()
    }

    fn strength(&self, node: usize) -> f64 {
        self.neighbors(node).iter().map(|(_, w)| w).sum()
    }

    fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search_by_key(&b, |(n, _)| *n).is_ok()
    }

    fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let list = self.neighbors(a);
        list.binary_search_by_key(&b, |(n, _)| *n).ok().map(|i| list[i].1)
    }
}

/// Plain sorted adjacency lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Builds an undirected graph from edges given once per unordered pair.
    /// Callers are responsible for rejecting self-loops and duplicates.
    fn from_unique_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (a, b, w) in edges {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        for list in &mut adj {
            list.sort_by_key(|(n, _)| *n);
        }
        Graph { adj }
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

impl WeightedGraph for Graph {
    fn node_count(&self) -> usize {
        self.adj.len()
    }

    fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adj[node]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeighting {
    /// Every retained user–app link has weight 1.
    #[default]
    Unweighted,
    /// Links carry the usage intensity (uses per week).
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BipartiteOptions {
    /// Minimum uses per week for a user–app link.
    pub frequency_threshold: f64,
    pub weighting: EdgeWeighting,
}

impl Default for BipartiteOptions {
    fn default() -> Self {
        BipartiteOptions {
            frequency_threshold: 1.0,
            weighting: EdgeWeighting::Unweighted,
        }
    }
}

/// Users linked to the apps they use frequently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteNetwork {
    users: Vec<String>,
    apps: Vec<String>,
    /// Per user: (app index, weight), sorted by app.
    user_adj: Vec<Vec<(usize, f64)>>,
    /// Per app: (user index, weight), sorted by user.
    app_adj: Vec<Vec<(usize, f64)>>,
}

impl BipartiteNetwork {
    pub fn user_ids(&self) -> &[String] {
        &self.users
    }

    pub fn app_ids(&self) -> &[String] {
        &self.apps
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.as_str().cmp(id)).ok()
    }

    pub fn app_index(&self, id: &str) -> Option<usize> {
        self.apps.binary_search_by(|a| a.as_str().cmp(id)).ok()
    }

    pub fn apps_of(&self, user: usize) -> &[(usize, f64)] {
        &self.user_adj[user]
    }

    pub fn users_of(&self, app: usize) -> &[(usize, f64)] {
        &self.app_adj[app]
    }

    pub fn edge_count(&self) -> usize {
        self.user_adj.iter().map(Vec::len).sum()
    }

    /// All (user, app, weight) edges in user-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.user_adj
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().map(move |&(a, w)| (u, a, w)))
    }

    /// Both node classes in one index space: users first, then apps at
    /// `user_count + app`.
    pub fn combined_graph(&self) -> Graph {
        let offset = self.users.len();
        Graph::from_unique_edges(
            offset + self.apps.len(),
            self.edges().map(|(u, a, w)| (u, offset + a, w)),
        )
    }
}

/// Links users to apps with `uses_per_week >= frequency_threshold`.
///
/// Every user and app in `usage` becomes a node, even without any retained
/// link. Use [`build_bipartite_with_users`] to add users absent from `usage`.
pub fn build_bipartite(usage: &[AppUsage], options: &BipartiteOptions) -> Result<BipartiteNetwork, NetworkError> {
    build_bipartite_with_users(std::iter::empty::<&str>(), usage, options)
}

pub fn build_bipartite_with_users<'a>(
    users: impl IntoIterator<Item = &'a str>,
    usage: &[AppUsage],
    options: &BipartiteOptions,
) -> Result<BipartiteNetwork, NetworkError> {
    let threshold = options.frequency_threshold;
    if threshold.is_nan() || threshold < 0.0 {
        return Err(NetworkError::NegativeThreshold(threshold));
    }
    let mut user_set: BTreeSet<String> = users.into_iter().map(str::to_string).collect();
    let mut app_set = BTreeSet::new();
    for row in usage {
        user_set.insert(row.user_id.clone());
        app_set.insert(row.app_id.clone());
    }
    let users: Vec<String> = user_set.into_iter().collect();
    let apps: Vec<String> = app_set.into_iter().collect();
    let user_idx: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let app_idx: HashMap<&str, usize> = apps.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();

    let mut user_adj = vec![Vec::new(); users.len()];
    let mut app_adj = vec![Vec::new(); apps.len()];
    for row in usage {
        if row.uses_per_week < threshold {
            continue;
        }
        let weight = match options.weighting {
            EdgeWeighting::Unweighted => 1.0,
            EdgeWeighting::Intensity => row.uses_per_week,
        };
        if weight <= 0.0 {
            // a zero-intensity link at threshold 0 carries no usage
            continue;
        }
        let u = user_idx[row.user_id.as_str()];
        let a = app_idx[row.app_id.as_str()];
        user_adj[u].push((a, weight));
        app_adj[a].push((u, weight));
    }
    for (u, list) in user_adj.iter_mut().enumerate() {
        list.sort_by_key(|(a, _)| *a);
        if let Some(w) = list.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(NetworkError::DuplicateEdge(users[u].clone(), apps[w[0].0].clone()));
        }
    }
    for list in &mut app_adj {
        list.sort_by_key(|(u, _)| *u);
    }
    Ok(BipartiteNetwork {
        users,
        apps,
        user_adj,
        app_adj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRule {
    /// Number of shared apps.
    #[default]
    SharedCount,
    /// Sum over shared apps of the smaller of the two link weights.
    MinIntensity,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionOptions {
    pub rule: ProjectionRule,
    /// Apps linked to more than this fraction of users are left out of the
    /// projection. `None` keeps every app.
    pub dense_app_fraction: Option<f64>,
}

/// Weighted user–user similarity network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoredNetwork", into = "StoredNetwork")]
pub struct UnipartiteNetwork {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    graph: Graph,
}

#[derive(Serialize, Deserialize)]
struct StoredNetwork {
    ids: Vec<String>,
    graph: Graph,
}

impl From<StoredNetwork> for UnipartiteNetwork {
    fn from(s: StoredNetwork) -> Self {
        UnipartiteNetwork::from_parts(s.ids, s.graph)
    }
}

impl From<UnipartiteNetwork> for StoredNetwork {
    fn from(n: UnipartiteNetwork) -> Self {
        StoredNetwork { ids: n.ids, graph: n.graph }
    }
}

impl UnipartiteNetwork {
    /// Builds a network from node ids and edges listed once per unordered pair.
    pub fn from_edges(
        ids: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, NetworkError> {
        let n = ids.len();
        let mut seen = BTreeMap::new();
        for (a, b, w) in edges {
            if a >= n || b >= n {
                return Err(NetworkError::UnknownNode(format!("index {}", a.max(b))));
            }
            if a == b {
                return Err(NetworkError::SelfLoop(ids[a].clone()));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(NetworkError::InvalidWeight(ids[a].clone(), ids[b].clone(), w));
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key, w).is_some() {
                return Err(NetworkError::DuplicateEdge(ids[key.0].clone(), ids[key.1].clone()));
            }
        }
        let graph = Graph::from_unique_edges(n, seen.into_iter().map(|((a, b), w)| (a, b, w)));
        Ok(Self::from_parts(ids, graph))
    }

    fn from_parts(ids: Vec<String>, graph: Graph) -> Self {
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        UnipartiteNetwork { ids, index, graph }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// Each undirected edge once, as (a, b, weight) with a < b.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ids.len()).flat_map(move |a| {
            self.graph.adj[a]
                .iter()
                .filter(move |(b, _)| *b > a)
                .map(move |&(b, w)| (a, b, w))
        })
    }

    pub fn density(&self) -> f64 {
        let n = self.ids.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        2.0 * self.edge_count() as f64 / (n * (n - 1.0))
    }
}

impl WeightedGraph for UnipartiteNetwork {
    fn node_count(&self) -> usize {
        self.ids.len()
    }

    fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        self.graph.neighbors(node)
    }
}

/// Links two users iff they share at least one app.
///
/// Node order follows the bipartite user order; users without retained apps
/// stay in the network as isolated nodes.
pub fn project_to_unipartite(nb: &BipartiteNetwork, options: &ProjectionOptions) -> UnipartiteNetwork {
    let n_users = nb.users.len();
    let max_users = options
        .dense_app_fraction
        .map(|f| (f * n_users as f64).floor() as usize);
    let mut pairs: Vec<(u32, u32, f64)> = Vec::new();
    for (app, members) in nb.app_adj.iter().enumerate() {
        if max_users.is_some_and(|m| members.len() > m) {
            log::debug!(target: "network", "app {} shared by {} users left out of projection", nb.apps[app], members.len());
            continue;
        }
        for (i, &(a, wa)) in members.iter().enumerate() {
            for &(b, wb) in &members[i + 1..] {
                let w = match options.rule {
                    ProjectionRule::SharedCount => 1.0,
                    ProjectionRule::MinIntensity => wa.min(wb),
                };
                pairs.push((a as u32, b as u32, w));
            }
        }
    }
    // stable sort keeps per-pair contributions in app order, so sums are reproducible
    pairs.sort_by_key(|&(a, b, _)| (a, b));
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (a, b, w) in pairs {
        match edges.last_mut() {
            Some(last) if last.0 == a as usize && last.1 == b as usize => last.2 += w,
            _ => edges.push((a as usize, b as usize, w)),
        }
    }
    let graph = Graph::from_unique_edges(n_users, edges);
    UnipartiteNetwork::from_parts(nb.users.clone(), graph)
}

/// A similarity network with a label per node.
#[derive(Debug, Clone)]
pub struct LabeledNetwork<'a> {
    network: &'a UnipartiteNetwork,
    labels: Vec<Label>,
}

impl<'a> LabeledNetwork<'a> {
    /// Labels indexed like the network's nodes.
    pub fn from_node_labels(network: &'a UnipartiteNetwork, labels: Vec<Label>) -> Self {
        assert_eq!(labels.len(), network.node_count(), "one label per node");
        LabeledNetwork { network, labels }
    }

    pub fn network(&self) -> &'a UnipartiteNetwork {
        self.network
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Label {
        self.labels[node]
    }
}

/// Attaches labels by user id. Nodes missing from the map are Unlabeled;
/// returns the network and the number of map entries naming absent users.
pub fn attach_labels<'a>(
    network: &'a UnipartiteNetwork,
    labels: &BTreeMap<String, Label>,
) -> (LabeledNetwork<'a>, usize) {
    let node_labels = network
        .ids()
        .iter()
        .map(|id| labels.get(id).copied().unwrap_or(Label::Unlabeled))
        .collect();
    let ignored = labels.keys().filter(|id| network.index_of(id).is_none()).count();
    if ignored > 0 {
        log::warn!(target: "network", "{ignored} labels refer to users outside the network");
    }
    (LabeledNetwork::from_node_labels(network, node_labels), ignored)
}

/// Writes `node<TAB>node<TAB>weight` per edge; isolated nodes get a line with
/// the id alone.
pub fn write_edge_list(network: &UnipartiteNetwork, path: &Path) -> Result<(), NetworkError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for (a, b, w) in network.edges() {
        writeln!(out, "{}\t{}\t{}", network.id(a), network.id(b), w)?;
    }
    for node in 0..network.node_count() {
        if network.degree(node) == 0 {
            writeln!(out, "{}", network.id(node))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the format of [`write_edge_list`]. Nodes are ordered by id.
pub fn read_edge_list(path: &Path) -> Result<UnipartiteNetwork, NetworkError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut ids = BTreeSet::new();
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            [id] => {
                ids.insert(id.to_string());
            }
            [a, b, w] => {
                let w: f64 = w.parse().map_err(|_| NetworkError::Parse {
                    line: i + 1,
                    message: format!("bad weight '{w}'"),
                })?;
                ids.insert(a.to_string());
                ids.insert(b.to_string());
                raw.push((a.to_string(), b.to_string(), w));
            }
            _ => {
                return Err(NetworkError::Parse {
                    line: i + 1,
                    message: "expected 1 or 3 tab-separated fields".into(),
                })
            }
        }
    }
    let ids: Vec<String> = ids.into_iter().collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let edges: Vec<_> = raw
        .iter()
        .map(|(a, b, w)| (index[a.as_str()], index[b.as_str()], *w))
        .collect();
    UnipartiteNetwork::from_edges(ids.clone(), edges)
}
