use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::NetFeatError;
use crate::data::Label;
use crate::network::{LabeledNetwork, WeightedGraph};

/// Features of a node's egonet: the node plus its direct neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgonetFeatures {
    pub degree: usize,
    pub good_degree: usize,
    pub bad_degree: usize,
    /// Edges among the neighbors, i.e. triangles through the node.
    pub triangle_count: usize,
    /// `2 * triangles / (degree * (degree - 1))`, 0 below degree 2.
    pub transitivity: f64,
    /// Weight share of Bad among labeled neighbors; `None` without labeled neighbors.
    pub relational_neighbor: Option<f64>,
}

fn sorted_intersection(a: &[(usize, f64)], b: &[(usize, f64)]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn egonet_features(g: &LabeledNetwork<'_>, node: usize) -> Result<EgonetFeatures, NetFeatError> {
    let net = g.network();
    if node >= net.node_count() {
        return Err(NetFeatError::UnknownNode(node));
    }
    let neighbors = net.neighbors(node);
    let degree = neighbors.len();

    let (mut good_degree, mut bad_degree) = (0, 0);
    let (mut bad_weight, mut labeled_weight) = (0.0, 0.0);
    for &(v, w) in neighbors {
        match g.label(v) {
            Label::Good => {
                good_degree += 1;
                labeled_weight += w;
            }
            Label::Bad => {
                bad_degree += 1;
                bad_weight += w;
                labeled_weight += w;
            }
            Label::Unlabeled => {}
        }
    }

    let twice_triangles: usize = neighbors
        .iter()
        .map(|&(v, _)| sorted_intersection(neighbors, net.neighbors(v)))
        .sum();
    let triangle_count = twice_triangles / 2;
    let transitivity = if degree >= 2 {
        2.0 * triangle_count as f64 / (degree * (degree - 1)) as f64
    } else {
        0.0
    };
    let relational_neighbor = (good_degree + bad_degree > 0).then(|| bad_weight / labeled_weight);

    Ok(EgonetFeatures {
        degree,
        good_degree,
        bad_degree,
        triangle_count,
        transitivity,
        relational_neighbor,
    })
}

/// Egonet features of every node, in node order.
pub fn egonet_all(g: &LabeledNetwork<'_>) -> Vec<EgonetFeatures> {
    (0..g.network().node_count())
        .into_par_iter()
        .map(|u| egonet_features(g, u).expect("node in range"))
        .collect()
}
