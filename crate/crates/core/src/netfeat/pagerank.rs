//! Personalized PageRank: the fixed point of `r = α·A·r + (1 − α)·e`.
//!
//! `A` is the column-stochastic form of the weighted adjacency: node `u`
//! spreads its score to neighbor `v` in proportion to `w(u, v) / strength(u)`.
//! Nodes without edges hand their mass back to the restart vector `e`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::NetFeatError;
use crate::data::{AppUsage, Label};
use crate::network::{BipartiteNetwork, LabeledNetwork, WeightedGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct PageRankConfig {
    /// Damping factor, strictly inside (0, 1).
    pub alpha: f64,
    /// Restart distribution over node indices; sums to 1.
    pub restart: Vec<f64>,
    /// Stop once the L1 change between iterates falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl PageRankConfig {
    /// Defaults: α = 0.85, tolerance 1e-9, at most 200 iterations.
    pub fn new(restart: Vec<f64>) -> Self {
        PageRankConfig {
            alpha: 0.85,
            restart,
            tolerance: 1e-9,
            max_iterations: 200,
        }
    }

    pub fn validate(&self, node_count: usize) -> Result<(), NetFeatError> {
        let bad = |m: String| Err(NetFeatError::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return bad("tolerance and max_iterations must be positive".into());
        }
        if self.restart.len() != node_count {
            return bad(format!("restart has {} entries for {node_count} nodes", self.restart.len()));
        }
        if self.restart.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("restart entries must be finite and nonnegative".into());
        }
        let sum: f64 = self.restart.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("restart sums to {sum}, not 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRankScores {
    pub scores: Vec<f64>,
    pub iterations: usize,
    /// L1 change of the last iteration.
    pub residual: f64,
}

pub fn personalized_pagerank<G: WeightedGraph + ?Sized>(
    g: &G,
    cfg: &PageRankConfig,
) -> Result<PageRankScores, NetFeatError> {
    let n = g.node_count();
    cfg.validate(n)?;
    let alpha = cfg.alpha;
    let e = &cfg.restart;
    let strength: Vec<f64> = (0..n).map(|u| g.strength(u)).collect();

    let mut r = e.clone();
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iteration in 1..=cfg.max_iterations {
        let dangling: f64 = (0..n).filter(|&u| strength[u] == 0.0).map(|u| r[u]).sum();
        let restart_mass = (1.0 - alpha) + alpha * dangling;
        for (x, ev) in next.iter_mut().zip(e) {
            *x = restart_mass * ev;
        }
        for u in 0..n {
            if strength[u] > 0.0 {
                let share = alpha * r[u] / strength[u];
                for &(v, w) in g.neighbors(u) {
                    next[v] += share * w;
                }
            }
        }
        residual = r.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut r, &mut next);
        if residual < cfg.tolerance {
            return Ok(PageRankScores {
                scores: r,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(NetFeatError::NotConverged {
        iterations: cfg.max_iterations,
        residual,
    })
}

/// Uniform restart mass over the Bad nodes.
pub fn restart_from_bad_users(g: &LabeledNetwork<'_>) -> Result<Vec<f64>, NetFeatError> {
    let bad = g.labels().iter().filter(|l| **l == Label::Bad).count();
    if bad == 0 {
        return Err(NetFeatError::NoBadNodes);
    }
    let mass = 1.0 / bad as f64;
    Ok(g
        .labels()
        .iter()
        .map(|l| if *l == Label::Bad { mass } else { 0.0 })
        .collect())
}

/// Restart vector over the combined bipartite index space (users first, then
/// apps) that favours frequently and recently used apps.
///
/// For each app, over the usage rows behind its bipartite links:
/// frequency = Σ uses per week, recency = min days since last use, and
/// weight = (frequency / max frequency) · exp(−recency / half_life).
/// User entries are zero; the vector is normalized to sum to 1.
pub fn restart_from_app_rfm(
    nb: &BipartiteNetwork,
    usage: &[AppUsage],
    half_life_days: f64,
) -> Result<Vec<f64>, NetFeatError> {
    if !(half_life_days > 0.0) {
        return Err(NetFeatError::InvalidConfig(format!("half-life {half_life_days} must be positive")));
    }
    let rows: HashMap<(&str, &str), &AppUsage> = usage
        .iter()
        .map(|r| ((r.user_id.as_str(), r.app_id.as_str()), r))
        .collect();
    let n_users = nb.user_ids().len();
    let n_apps = nb.app_ids().len();
    let mut frequency = vec![0.0; n_apps];
    let mut recency = vec![f64::INFINITY; n_apps];
    for (u, a, _) in nb.edges() {
        let (user, app) = (&nb.user_ids()[u], &nb.app_ids()[a]);
        let row = rows
            .get(&(user.as_str(), app.as_str()))
            .ok_or_else(|| NetFeatError::MissingUsage {
                user: user.clone(),
                app: app.clone(),
            })?;
        frequency[a] += row.uses_per_week;
        recency[a] = f64::min(recency[a], row.days_since_last_use);
    }
    let max_frequency = frequency.iter().cloned().fold(0.0, f64::max);
    if max_frequency <= 0.0 {
        return Err(NetFeatError::ZeroRestart);
    }
    let mut restart = vec![0.0; n_users + n_apps];
    for a in 0..n_apps {
        if frequency[a] > 0.0 {
            restart[n_users + a] = frequency[a] / max_frequency * (-recency[a] / half_life_days).exp();
        }
    }
    let total: f64 = restart.iter().sum();
    if total <= 0.0 {
        return Err(NetFeatError::ZeroRestart);
    }
    restart.iter_mut().for_each(|x| *x /= total);
    Ok(restart)
}

/// PageRank on the combined bipartite graph, reported for the user nodes only.
pub fn bipartite_user_influence(nb: &BipartiteNetwork, cfg: &PageRankConfig) -> Result<Vec<f64>, NetFeatError> {
    let graph = nb.combined_graph();
    let mut scores = personalized_pagerank(&graph, cfg)?.scores;
    scores.truncate(nb.user_ids().len());
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_bipartite, BipartiteOptions, UnipartiteNetwork};

    fn net(n: usize, edges: &[(usize, usize, f64)]) -> UnipartiteNetwork {
        let ids = (0..n).map(|i| format!("n{i}")).collect();
        UnipartiteNetwork::from_edges(ids, edges.iter().copied()).unwrap()
    }

    #[test]
    fn two_node_symmetry() {
        let g = net(2, &[(0, 1, 1.0)]);
        let r = personalized_pagerank(&g, &PageRankConfig::new(vec![0.5, 0.5])).unwrap();
        assert!((r.scores[0] - 0.5).abs() < 1e-12 && (r.scores[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_alpha_returns_restart() {
        let g = net(4, &[(0, 1, 1.0), (1, 2, 3.0), (2, 3, 1.0)]);
        let restart = vec![0.1, 0.2, 0.3, 0.4];
        let cfg = PageRankConfig {
            alpha: 1e-12,
            ..PageRankConfig::new(restart.clone())
        };
        let r = personalized_pagerank(&g, &cfg).unwrap();
        for (a, b) in r.scores.iter().zip(&restart) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn dangling_mass_returns_to_restart() {
        // node 2 is isolated and holds restart mass
        let g = net(3, &[(0, 1, 1.0)]);
        let r = personalized_pagerank(&g, &PageRankConfig::new(vec![0.0, 0.0, 1.0])).unwrap();
        assert!((r.scores[2] - 1.0).abs() < 1e-9);
        let r = personalized_pagerank(&g, &PageRankConfig::new(vec![0.5, 0.0, 0.5])).unwrap();
        assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs_rejected() {
        let g = net(2, &[(0, 1, 1.0)]);
        let mut cfg = PageRankConfig::new(vec![0.5, 0.5]);
        cfg.alpha = 1.0;
        assert!(personalized_pagerank(&g, &cfg).is_err());
        let cfg = PageRankConfig::new(vec![0.5, 0.6]);
        assert!(personalized_pagerank(&g, &cfg).is_err());
        let cfg = PageRankConfig::new(vec![1.0]);
        assert!(personalized_pagerank(&g, &cfg).is_err());
    }

    #[test]
    fn non_convergence_reports_residual() {
        let g = net(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let cfg = PageRankConfig {
            alpha: 0.99,
            max_iterations: 3,
            ..PageRankConfig::new(vec![1.0, 0.0, 0.0])
        };
        match personalized_pagerank(&g, &cfg) {
            Err(NetFeatError::NotConverged { iterations: 3, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_user_restart() {
        let g = net(7, &[(0, 1, 1.0)]);
        let mut labels = vec![Label::Good; 7];
        labels[3] = Label::Bad;
        let lg = LabeledNetwork::from_node_labels(&g, labels.clone());
        let e = restart_from_bad_users(&lg).unwrap();
        assert_eq!(e[3], 1.0);
        assert_eq!(e.iter().sum::<f64>(), 1.0);

        for i in [0, 1, 2] {
            labels[i] = Label::Bad;
        }
        let lg = LabeledNetwork::from_node_labels(&g, labels);
        let e = restart_from_bad_users(&lg).unwrap();
        assert_eq!(e.iter().filter(|x| **x == 0.25).count(), 4);

        let lg = LabeledNetwork::from_node_labels(&g, vec![Label::Good; 7]);
        assert!(matches!(restart_from_bad_users(&lg), Err(NetFeatError::NoBadNodes)));
    }

    fn usage(user: &str, app: &str, uses: f64, days: f64) -> AppUsage {
        AppUsage {
            user_id: user.into(),
            app_id: app.into(),
            app_category: "x".into(),
            uses_per_week: uses,
            days_since_last_use: days,
        }
    }

    #[test]
    fn rfm_restart_single_and_symmetric_apps() {
        let rows = [usage("u1", "a", 4.0, 2.0)];
        let nb = build_bipartite(&rows, &BipartiteOptions::default()).unwrap();
        assert_eq!(restart_from_app_rfm(&nb, &rows, 30.0).unwrap(), vec![0.0, 1.0]);

        let rows = [usage("u1", "a", 4.0, 2.0), usage("u2", "b", 4.0, 2.0)];
        let nb = build_bipartite(&rows, &BipartiteOptions::default()).unwrap();
        assert_eq!(restart_from_app_rfm(&nb, &rows, 30.0).unwrap(), vec![0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn rfm_restart_matches_formula() {
        let rows = [
            usage("u1", "a", 2.0, 1.0),
            usage("u2", "a", 6.0, 4.0),
            usage("u1", "b", 3.0, 10.0),
            usage("u3", "c", 1.5, 0.0),
            usage("u3", "d", 0.2, 0.0), // below threshold: no link, no mass
        ];
        let nb = build_bipartite(&rows, &BipartiteOptions::default()).unwrap();
        let h = 7.0;
        let e = restart_from_app_rfm(&nb, &rows, h).unwrap();
        // a: freq 8, recency 1; b: freq 3, recency 10; c: freq 1.5, recency 0
        let raw = [8.0 / 8.0 * (-1.0f64 / h).exp(), 3.0 / 8.0 * (-10.0f64 / h).exp(), 1.5 / 8.0, 0.0];
        let total: f64 = raw.iter().sum();
        assert_eq!(&e[..3], &[0.0, 0.0, 0.0]);
        for (got, want) in e[3..].iter().zip(raw) {
            assert!((got - want / total).abs() < 1e-15);
        }
    }

    #[test]
    fn rfm_restart_errors() {
        let rows = [usage("u1", "a", 0.5, 1.0)];
        let nb = build_bipartite(&rows, &BipartiteOptions::default()).unwrap();
        assert!(matches!(restart_from_app_rfm(&nb, &rows, 7.0), Err(NetFeatError::ZeroRestart)));
        let rows = [usage("u1", "a", 2.0, 1.0)];
        let nb = build_bipartite(&rows, &BipartiteOptions::default()).unwrap();
        assert!(matches!(restart_from_app_rfm(&nb, &[], 7.0), Err(NetFeatError::MissingUsage { .. })));
    }

    #[test]
    fn bipartite_influence_reaches_users_of_restart_apps() {
        let rows = [usage("u1", "a", 5.0, 0.0), usage("u2", "b", 5.0, 0.0), usage("u3", "b", 5.0, 0.0)];
        let nb = build_bipartite(&rows, &BipartiteOptions::default()).unwrap();
        let mut restart = vec![0.0; 5];
        restart[3] = 1.0; // app "a"
        let scores = bipartite_user_influence(&nb, &PageRankConfig::new(restart)).unwrap();
        assert_eq!(scores.len(), 3);
        assert!(scores[0] > 0.0 && scores[1] == 0.0 && scores[2] == 0.0);
    }
}
