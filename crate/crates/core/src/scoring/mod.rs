//! Feature matrices, classifiers and the feature-group ablation.
//!
//! The positive class throughout is Bad: every score is an estimated
//! probability of default.

mod ablation;
mod feedforward;
mod forest;
mod local;
mod logreg;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use ablation::{
    ablation_study, ablation_table, cross_validated_scores, default_combinations, draw_folds, permutation_importance,
    AblationConfig, AblationRow, Combination, FeatureImportance, FoldScores, Importance, ImportanceMetric, NamedModel,
};
pub use feedforward::{net_loss_gradient, FeedforwardConfig, FeedforwardNet};
pub use forest::{ForestConfig, RandomForest, Tree, TreeNode};
pub use local::{build_behavior_features, build_sociodemographic_features, first_grant_dates, BucketPartition};
pub use logreg::{logreg_loss_gradient, LogRegConfig, LogisticRegression};

use crate::data::Label;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("duplicate row id {0:?}")]
    DuplicateRow(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("column {name:?} has {got} values, expected {expected}")]
    ColumnLength { name: String, got: usize, expected: usize },
    #[error("feature {0:?} required by the model is not in the matrix")]
    MissingFeature(String),
    #[error("feature group {0} has no columns")]
    EmptyGroup(Group),
    #[error("need at least {needed} {class} rows, got {got}")]
    TooFewInClass { class: &'static str, needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("logistic regression did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("could not draw folds with both classes after {0} attempts")]
    DegenerateFolds(usize),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Sociodemographic,
    Behavior,
    Neighborhood,
    Centrality,
    Influence,
    Embedding,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Sociodemographic,
        Group::Behavior,
        Group::Neighborhood,
        Group::Centrality,
        Group::Influence,
        Group::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Sociodemographic => "sociodemographic",
            Group::Behavior => "behavior",
            Group::Neighborhood => "neighborhood",
            Group::Centrality => "centrality",
            Group::Influence => "influence",
            Group::Embedding => "embedding",
        }
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub group: Group,
    /// Placeholder 0.0 where `missing` is set.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    /// Column that already flags this one's missing values, making a
    /// generated indicator redundant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion: Option<String>,
}

impl Column {
    pub fn complete(name: impl Into<String>, group: Group, values: Vec<f64>) -> Self {
        let missing = vec![false; values.len()];
        Column {
            name: name.into(),
            group,
            values,
            missing,
            companion: None,
        }
    }

    pub fn optional(name: impl Into<String>, group: Group, values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let (values, missing) = values.into_iter().map(|v| (v.unwrap_or(0.0), v.is_none())).unzip();
        Column {
            name: name.into(),
            group,
            values,
            missing,
            companion: None,
        }
    }

    pub fn with_companion(mut self, companion: impl Into<String>) -> Self {
        self.companion = Some(companion.into());
        self
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }
}

/// Named, group-tagged feature columns over a fixed list of users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    columns: Vec<Column>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>) -> Result<Self, ScoringError> {
        let mut seen = BTreeSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(ScoringError::DuplicateRow(dup.clone()));
        }
        Ok(FeatureMatrix {
            ids,
            columns: Vec::new(),
        })
    }

    pub fn push(&mut self, column: Column) -> Result<(), ScoringError> {
        if column.values.len() != self.ids.len() || column.missing.len() != self.ids.len() {
            return Err(ScoringError::ColumnLength {
                name: column.name,
                got: column.values.len(),
                expected: self.ids.len(),
            });
        }
        if self.columns.iter().any(|c| c.name == column.name) {
            return Err(ScoringError::DuplicateColumn(column.name));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn extend(&mut self, columns: impl IntoIterator<Item = Column>) -> Result<(), ScoringError> {
        columns.into_iter().try_for_each(|c| self.push(c))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    /// Groups with at least one column, in canonical order.
    pub fn groups(&self) -> Vec<Group> {
        let present: BTreeSet<Group> = self.columns.iter().map(|c| c.group).collect();
        present.into_iter().collect()
    }

    /// The columns belonging to any of `groups`; every group must be present.
    pub fn select_groups(&self, groups: &[Group]) -> Result<FeatureMatrix, ScoringError> {
        for g in groups {
            if !self.columns.iter().any(|c| c.group == *g) {
                return Err(ScoringError::EmptyGroup(*g));
            }
        }
        Ok(FeatureMatrix {
            ids: self.ids.clone(),
            columns: self.columns.iter().filter(|c| groups.contains(&c.group)).cloned().collect(),
        })
    }
}

/// One model input derived from a matrix column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFeature {
    pub source: String,
    pub group: Group,
    /// Replacement for missing values, the training median.
    pub median: f64,
    /// Whether a `<source>_missing` indicator input follows the value input.
    pub indicator: bool,
}

/// Median imputation plus missingness indicators, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub features: Vec<DesignFeature>,
}

impl Preprocessor {
    pub fn fit(m: &FeatureMatrix, rows: &[usize]) -> Self {
        let features = m
            .columns()
            .iter()
            .map(|c| {
                let mut present: Vec<f64> = rows.iter().filter(|&&r| !c.missing[r]).map(|&r| c.values[r]).collect();
                present.sort_by(f64::total_cmp);
                let median = match present.len() {
                    0 => 0.0,
                    n if n % 2 == 1 => present[n / 2],
                    n => 0.5 * (present[n / 2 - 1] + present[n / 2]),
                };
                let flagged = c.companion.as_deref().is_some_and(|name| m.column(name).is_some());
                DesignFeature {
                    source: c.name.clone(),
                    group: c.group,
                    median,
                    indicator: !flagged && rows.iter().any(|&r| c.missing[r]),
                }
            })
            .collect();
        Preprocessor { features }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in &self.features {
            names.push(f.source.clone());
            if f.indicator {
                names.push(format!("{}_missing", f.source));
            }
        }
        names
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(|f| 1 + f.indicator as usize).sum()
    }

    /// Design positions of each source feature, in feature order.
    pub fn positions(&self) -> Vec<Vec<usize>> {
        let mut at = 0;
        self.features
            .iter()
            .map(|f| {
                let span = 1 + f.indicator as usize;
                let pos = (at..at + span).collect();
                at += span;
                pos
            })
            .collect()
    }

    /// Row-major design matrix for `rows`.
    pub fn transform(&self, m: &FeatureMatrix, rows: &[usize]) -> Result<Vec<Vec<f64>>, ScoringError> {
        let columns = self
            .features
            .iter()
            .map(|f| m.column(&f.source).ok_or_else(|| ScoringError::MissingFeature(f.source.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rows
            .iter()
            .map(|&r| {
                let mut x = Vec::with_capacity(self.width());
                for (f, c) in self.features.iter().zip(&columns) {
                    let missing = c.missing[r];
                    x.push(if missing { f.median } else { c.values[r] });
                    if f.indicator {
                        x.push(if missing { 1.0 } else { 0.0 });
                    }
                }
                x
            })
            .collect())
    }
}

/// Per-input centering and scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant inputs.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let p = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; p];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; p];
        for row in x {
            for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    /// Each class carries half the total weight.
    #[default]
    Balanced,
    Uniform,
}

impl ClassWeight {
    pub fn weights(self, bad: &[bool]) -> Vec<f64> {
        let n = bad.len() as f64;
        let n_bad = bad.iter().filter(|&&b| b).count() as f64;
        match self {
            ClassWeight::Uniform => vec![1.0; bad.len()],
            ClassWeight::Balanced => bad
                .iter()
                .map(|&b| if b { n / (2.0 * n_bad) } else { n / (2.0 * (n - n_bad)) })
                .collect(),
        }
    }
}

fn check_classes(bad: &[bool], needed: usize) -> Result<(), ScoringError> {
    let n_bad = bad.iter().filter(|&&b| b).count();
    for (class, got) in [("Bad", n_bad), ("Good", bad.len() - n_bad)] {
        if got < needed {
            return Err(ScoringError::TooFewInClass { class, needed, got });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LogisticRegression(LogRegConfig),
    RandomForest(ForestConfig),
    FeedforwardNet(FeedforwardConfig),
}

impl ModelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::LogisticRegression(_) => "logistic_regression",
            ModelSpec::RandomForest(_) => "random_forest",
            ModelSpec::FeedforwardNet(_) => "feedforward_net",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Learner {
    LogisticRegression(LogisticRegression),
    RandomForest(RandomForest),
    FeedforwardNet(FeedforwardNet),
}

/// A fitted classifier together with the preprocessing it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub preprocessor: Preprocessor,
    pub learner: Learner,
    pub seed: u64,
}

impl Model {
    pub fn feature_names(&self) -> Vec<String> {
        self.preprocessor.names()
    }

    pub fn predict_design(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter()
            .map(|row| match &self.learner {
                Learner::LogisticRegression(m) => m.predict_row(row),
                Learner::RandomForest(m) => m.predict_row(row),
                Learner::FeedforwardNet(m) => m.predict_row(row),
            })
            .collect()
    }

    /// Probability of Bad for each of `rows`; fails if a training feature is
    /// absent from `m`.
    pub fn predict(&self, m: &FeatureMatrix, rows: &[usize]) -> Result<Vec<f64>, ScoringError> {
        Ok(self.predict_design(&self.preprocessor.transform(m, rows)?))
    }
}

/// Fits `spec` on `rows` of `m`; `bad` is aligned with `rows`.
pub fn train(spec: &ModelSpec, m: &FeatureMatrix, rows: &[usize], bad: &[bool], seed: u64) -> Result<Model, ScoringError> {
    if rows.len() != bad.len() {
        return Err(ScoringError::InvalidConfig(format!("{} rows but {} labels", rows.len(), bad.len())));
    }
    let preprocessor = Preprocessor::fit(m, rows);
    let x = preprocessor.transform(m, rows)?;
    let learner = match spec {
        ModelSpec::LogisticRegression(cfg) => Learner::LogisticRegression(LogisticRegression::fit(&x, bad, cfg)?),
        ModelSpec::RandomForest(cfg) => Learner::RandomForest(RandomForest::fit(&x, bad, cfg, seed)?),
        ModelSpec::FeedforwardNet(cfg) => Learner::FeedforwardNet(FeedforwardNet::fit(&x, bad, cfg, seed)?),
    };
    Ok(Model {
        preprocessor,
        learner,
        seed,
    })
}

pub fn train_logreg(m: &FeatureMatrix, rows: &[usize], bad: &[bool], cfg: &LogRegConfig) -> Result<Model, ScoringError> {
    train(&ModelSpec::LogisticRegression(cfg.clone()), m, rows, bad, 0)
}

pub fn train_random_forest(
    m: &FeatureMatrix,
    rows: &[usize],
    bad: &[bool],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<Model, ScoringError> {
    train(&ModelSpec::RandomForest(cfg.clone()), m, rows, bad, seed)
}

pub fn train_feedforward(
    m: &FeatureMatrix,
    rows: &[usize],
    bad: &[bool],
    cfg: &FeedforwardConfig,
    seed: u64,
) -> Result<Model, ScoringError> {
    train(&ModelSpec::FeedforwardNet(cfg.clone()), m, rows, bad, seed)
}

fn labeled_by_class(labels: &[Label]) -> (Vec<usize>, Vec<usize>) {
    let bad = (0..labels.len()).filter(|&i| labels[i] == Label::Bad).collect();
    let good = (0..labels.len()).filter(|&i| labels[i] == Label::Good).collect();
    (bad, good)
}

/// Stratified split of the labeled rows into (train, test), both sorted.
pub fn split_train_test(labels: &[Label], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ScoringError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ScoringError::InvalidConfig("train fraction must lie in (0, 1)".into()));
    }
    let (bad, good) = labeled_by_class(labels);
    check_classes(&labels.iter().filter(|l| l.is_labeled()).map(|&l| l == Label::Bad).collect::<Vec<_>>(), 2)?;
    let mut rng = seed::rng(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut class in [bad, good] {
        class.shuffle(&mut rng);
        let k = ((class.len() as f64 * train_fraction).round() as usize).clamp(1, class.len() - 1);
        train.extend_from_slice(&class[..k]);
        test.extend_from_slice(&class[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Test rows of each of `k` stratified folds over the labeled rows.
///
/// Each class is shuffled and dealt round-robin, so fold class counts differ
/// by at most one.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, ScoringError> {
    if k < 2 {
        return Err(ScoringError::InvalidConfig("need at least 2 folds".into()));
    }
    let (bad, good) = labeled_by_class(labels);
    let mut rng = seed::rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for mut class in [bad, good] {
        class.shuffle(&mut rng);
        for (i, row) in class.into_iter().enumerate() {
            folds[(offset + i) % k].push(row);
        }
        // continue dealing where the previous class stopped
        offset += k - 1;
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}
