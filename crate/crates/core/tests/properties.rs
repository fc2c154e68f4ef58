mod common;

use common::*;
use proptest::prelude::*;
use pseudoscore::data::{AppUsage, Label};
use pseudoscore::embed::{walk_transition_probs, Node2VecConfig};
use pseudoscore::netfeat::{egonet_all, personalized_pagerank, PageRankConfig};
use pseudoscore::network::{
    build_bipartite, project_to_unipartite, BipartiteOptions, EdgeWeighting, LabeledNetwork, ProjectionOptions,
    ProjectionRule, UnipartiteNetwork, WeightedGraph,
};

fn usage_table() -> impl Strategy<Value = Vec<AppUsage>> {
    prop::collection::vec((0u8..15, 0u8..6, 0u8..6), 1..60).prop_map(|rows| {
        let mut seen = std::collections::BTreeSet::new();
        rows.into_iter()
            .filter(|(u, a, _)| seen.insert((*u, *a)))
            .map(|(u, a, uses)| AppUsage {
                user_id: format!("u{u:02}"),
                app_id: format!("a{a}"),
                app_category: "tools".into(),
                uses_per_week: f64::from(uses),
                days_since_last_use: 1.0,
            })
            .collect()
    })
}

fn graph() -> impl Strategy<Value = UnipartiteNetwork> {
    (2usize..18, any::<u64>(), 0.05f64..0.6).prop_map(|(n, seed, p)| random_graph(&mut rng(seed), n, p, true))
}

fn labels(n: usize) -> impl Strategy<Value = Vec<Label>> {
    prop::collection::vec(prop_oneof![Just(Label::Good), Just(Label::Bad), Just(Label::Unlabeled)], n)
}

proptest! {
    #[test]
    fn projection_is_symmetric(usage in usage_table(), intensity in any::<bool>(), min_rule in any::<bool>()) {
        let options = BipartiteOptions {
            frequency_threshold: 1.0,
            weighting: if intensity { EdgeWeighting::Intensity } else { EdgeWeighting::Unweighted },
        };
        let nb = build_bipartite(&usage, &options).unwrap();
        let rule = if min_rule { ProjectionRule::MinIntensity } else { ProjectionRule::SharedCount };
        let nu = project_to_unipartite(&nb, &ProjectionOptions { rule, dense_app_fraction: None });
        for u in 0..nu.node_count() {
            for &(v, w) in nu.neighbors(u) {
                prop_assert_ne!(u, v);
                prop_assert_eq!(nu.weight(v, u), Some(w));
            }
        }
    }

    #[test]
    fn egonet_counts_are_bounded((g, ls) in graph().prop_flat_map(|g| { let n = g.node_count(); (Just(g), labels(n)) })) {
        let lg = LabeledNetwork::from_node_labels(&g, ls);
        for e in egonet_all(&lg) {
            prop_assert!(e.good_degree + e.bad_degree <= e.degree);
            prop_assert!(e.triangle_count <= e.degree * e.degree.saturating_sub(1) / 2);
            prop_assert!((0.0..=1.0).contains(&e.transitivity));
        }
    }

    #[test]
    fn pagerank_is_a_distribution(g in graph(), raw in prop::collection::vec(0.0f64..1.0, 18), alpha in 0.05f64..0.95) {
        let n = g.node_count();
        let mut restart: Vec<f64> = raw[..n].to_vec();
        restart[0] += 0.1;
        let total: f64 = restart.iter().sum();
        restart.iter_mut().for_each(|x| *x /= total);
        let cfg = PageRankConfig { alpha, tolerance: 1e-12, max_iterations: 2000, ..PageRankConfig::new(restart) };
        let r = personalized_pagerank(&g, &cfg).unwrap().scores;
        prop_assert!(r.iter().all(|x| *x >= 0.0));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn walk_steps_form_distributions(g in graph(), p in 0.1f64..5.0, q in 0.1f64..5.0) {
        let cfg = Node2VecConfig { p, q, ..Node2VecConfig::default() };
        for curr in 0..g.node_count() {
            let prevs = std::iter::once(None).chain(g.neighbors(curr).iter().map(|(v, _)| Some(*v)));
            for prev in prevs {
                let probs = walk_transition_probs(&g, prev, curr, &cfg);
                if g.degree(curr) == 0 {
                    prop_assert!(probs.is_empty());
                } else {
                    prop_assert!(probs.iter().all(|(_, x)| *x > 0.0));
                    prop_assert!((probs.iter().map(|(_, x)| x).sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
