use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_classes, ScoringError};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Unlimited when absent.
    pub max_depth: Option<usize>,
    /// Minimum (bootstrap-weighted) number of rows in each leaf.
    pub min_leaf: usize,
    /// Candidate features per split; the square root of the input count when absent.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 100,
            max_depth: Some(8),
            min_leaf: 5,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        /// Weighted share of Bad training rows reaching the leaf.
        bad_fraction: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in creation order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { bad_fraction } => return bad_fraction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    /// Misclassification rate at 0.5 of out-of-bag predictions; absent
    /// without bootstrap or when no row was ever left out.
    pub oob_error: Option<f64>,
}

fn gini(weight: f64, bad: f64) -> f64 {
    if weight <= 0.0 {
        return 0.0;
    }
    let p = bad / weight;
    weight * 2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    bad: &'a [bool],
    weight: &'a [f64],
    cfg: &'a ForestConfig,
    per_split: usize,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn candidates(&self, rng: &mut seed::Rng) -> Vec<usize> {
        let p = self.x[0].len();
        if self.per_split >= p {
            return (0..p).collect();
        }
        let mut picked = index::sample(rng, p, self.per_split).into_vec();
        picked.sort_unstable();
        picked
    }

    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<BestSplit> {
        let total_w: f64 = rows.iter().map(|&r| self.weight[r]).sum();
        let total_b: f64 = rows.iter().filter(|&&r| self.bad[r]).map(|&r| self.weight[r]).sum();
        let parent = gini(total_w, total_b);
        let min_leaf = self.cfg.min_leaf as f64;
        let mut best: Option<BestSplit> = None;
        let mut sorted = rows.to_vec();
        for &f in features {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut lw, mut lb) = (0.0, 0.0);
            for i in 0..sorted.len() - 1 {
                let r = sorted[i];
                lw += self.weight[r];
                if self.bad[r] {
                    lb += self.weight[r];
                }
                let (here, next) = (self.x[r][f], self.x[sorted[i + 1]][f]);
                if here == next || lw < min_leaf || total_w - lw < min_leaf {
                    continue;
                }
                let impurity = gini(lw, lb) + gini(total_w - lw, total_b - lb);
                if impurity < parent - 1e-12 && best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (here + next),
                        impurity,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut seed::Rng) -> usize {
        let id = self.nodes.len();
        let total_w: f64 = rows.iter().map(|&r| self.weight[r]).sum();
        let total_b: f64 = rows.iter().filter(|&&r| self.bad[r]).map(|&r| self.weight[r]).sum();
        self.nodes.push(TreeNode::Leaf {
            bad_fraction: total_b / total_w,
        });
        let depth_left = self.cfg.max_depth.is_none_or(|d| depth < d);
        if !depth_left || total_w < 2.0 * self.cfg.min_leaf as f64 || total_b == 0.0 || total_b == total_w {
            return id;
        }
        let features = self.candidates(rng);
        let Some(split) = self.best_split(&rows, &features) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| self.x[r][split.feature] <= split.threshold);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], bad: &[bool], cfg: &ForestConfig, seed: u64) -> Result<Self, ScoringError> {
        if cfg.trees == 0 || cfg.min_leaf == 0 || cfg.features_per_split == Some(0) {
            return Err(ScoringError::InvalidConfig("trees, min_leaf and features_per_split must be positive".into()));
        }
        check_classes(bad, 1)?;
        let n = x.len();
        let p = x[0].len();
        let per_split = cfg.features_per_split.unwrap_or(((p as f64).sqrt().round() as usize).max(1));

        let grown: Vec<(Tree, Vec<f64>)> = (0..cfg.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::derive_indexed(seed, &[t as u64]));
                let mut weight = vec![if cfg.bootstrap { 0.0 } else { 1.0 }; n];
                if cfg.bootstrap {
                    for _ in 0..n {
                        weight[rng.random_range(0..n)] += 1.0;
                    }
                }
                let rows: Vec<usize> = (0..n).filter(|&r| weight[r] > 0.0).collect();
                let mut builder = Builder {
                    x,
                    bad,
                    weight: &weight,
                    cfg,
                    per_split,
                    nodes: Vec::new(),
                };
                builder.grow(rows, 0, &mut rng);
                let tree = Tree { nodes: builder.nodes };
                (tree, weight)
            })
            .collect();

        let oob_error = cfg.bootstrap.then(|| oob_error(x, bad, &grown)).flatten();
        Ok(RandomForest {
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            oob_error,
        })
    }

    /// Mean of the leaf Bad fractions over trees.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn oob_error(x: &[Vec<f64>], bad: &[bool], grown: &[(Tree, Vec<f64>)]) -> Option<f64> {
    let (mut wrong, mut seen) = (0usize, 0usize);
    for (r, row) in x.iter().enumerate() {
        let preds: Vec<f64> = grown.iter().filter(|(_, w)| w[r] == 0.0).map(|(t, _)| t.predict_row(row)).collect();
        if preds.is_empty() {
            continue;
        }
        seen += 1;
        let score = preds.iter().sum::<f64>() / preds.len() as f64;
        if (score >= 0.5) != bad[r] {
            wrong += 1;
        }
    }
    (seen > 0).then(|| wrong as f64 / seen as f64)
}
