use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::{LoadOptions, Schema, SynthSpec, DEFAULT_WINDOW_DAYS};
use crate::embed::{Node2VecConfig, TrainingMode};
use crate::eval::{ProfitParams, DEFAULT_BOOTSTRAP_ROUNDS};
use crate::network::{BipartiteOptions, EdgeWeighting, ProjectionOptions, ProjectionRule};
use crate::scoring::{
    BucketPartition, Combination, FeedforwardConfig, ForestConfig, Group, ImportanceMetric, LogRegConfig, ModelSpec, NamedModel,
};

/// Everything one run needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every derived seed.
    #[serde(default)]
    pub seed: u64,
    /// Run directory; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub labels: LabelConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub pagerank: PageRankSection,
    #[serde(default)]
    pub node2vec: Node2VecSection,
    #[serde(default = "default_models")]
    pub models: Vec<NamedModel>,
    #[serde(default)]
    pub profit: ProfitParams,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

/// Exactly one of the two sources must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Directory holding users.csv, app_usage.csv, calls.csv and loans.csv.
    pub dir: PathBuf,
    #[serde(default)]
    pub schema: Schema,
    #[serde(default = "default_rejection_tolerance")]
    pub rejection_tolerance: f64,
    #[serde(default)]
    pub amount_menu: Option<Vec<f64>>,
}

fn default_rejection_tolerance() -> f64 {
    LoadOptions::default().rejection_tolerance
}

impl InputConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            rejection_tolerance: self.rejection_tolerance,
            amount_menu: self.amount_menu.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub window_days: i64,
    /// Labeling date; the latest date in the loan file when absent.
    pub as_of: Option<NaiveDate>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            window_days: DEFAULT_WINDOW_DAYS,
            as_of: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Minimum uses per week for a user–app link.
    pub frequency_threshold: f64,
    pub weighting: EdgeWeighting,
    pub projection: ProjectionRule,
    /// Apps used by more than this share of users are left out of the projection.
    pub dense_app_fraction: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let b = BipartiteOptions::default();
        NetworkConfig {
            frequency_threshold: b.frequency_threshold,
            weighting: b.weighting,
            projection: ProjectionRule::default(),
            dense_app_fraction: None,
        }
    }
}

impl NetworkConfig {
    pub fn bipartite(&self) -> BipartiteOptions {
        BipartiteOptions {
            frequency_threshold: self.frequency_threshold,
            weighting: self.weighting,
        }
    }

    pub fn projection(&self) -> ProjectionOptions {
        ProjectionOptions {
            rule: self.projection,
            dense_app_fraction: self.dense_app_fraction,
        }
    }
}

/// Which feature groups to build, plus the behavior bucket layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sociodemographic: bool,
    pub behavior: bool,
    pub neighborhood: bool,
    pub centrality: bool,
    pub influence: bool,
    pub embedding: bool,
    pub buckets: BucketPartition,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sociodemographic: true,
            behavior: true,
            neighborhood: true,
            centrality: true,
            influence: true,
            embedding: true,
            buckets: BucketPartition::default(),
        }
    }
}

impl FeatureConfig {
    pub fn enabled(&self) -> Vec<Group> {
        let flags = [
            self.sociodemographic,
            self.behavior,
            self.neighborhood,
            self.centrality,
            self.influence,
            self.embedding,
        ];
        Group::ALL.iter().zip(flags).filter(|(_, on)| *on).map(|(g, _)| *g).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageRankSection {
    pub alpha: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Recency decay of the app restart weights.
    pub rfm_half_life_days: f64,
}

impl Default for PageRankSection {
    fn default() -> Self {
        PageRankSection {
            alpha: 0.85,
            tolerance: 1e-9,
            max_iterations: 200,
            rfm_half_life_days: 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedGraph {
    /// Walk the user–user projection.
    #[default]
    Unipartite,
    /// Walk the user–app graph and keep the user vectors.
    Bipartite,
}

/// node2vec settings; the walk seed is derived from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Node2VecSection {
    pub graph: EmbedGraph,
    pub dimensions: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub context_window: usize,
    pub p: f64,
    pub q: f64,
    pub negative_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mode: TrainingMode,
    /// Extra embedding sizes evaluated on their own; empty skips the sweep.
    pub dimension_sweep: Vec<usize>,
}

impl Default for Node2VecSection {
    fn default() -> Self {
        let c = Node2VecConfig::default();
        Node2VecSection {
            graph: EmbedGraph::default(),
            dimensions: c.dimensions,
            walks_per_node: c.walks_per_node,
            walk_length: c.walk_length,
            context_window: c.context_window,
            p: c.p,
            q: c.q,
            negative_samples: c.negative_samples,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            mode: c.mode,
            dimension_sweep: vec![8, 16, 32, 64, 128],
        }
    }
}

impl Node2VecSection {
    pub fn embed_config(&self, dimensions: usize, seed: u64) -> Node2VecConfig {
        Node2VecConfig {
            dimensions,
            walks_per_node: self.walks_per_node,
            walk_length: self.walk_length,
            context_window: self.context_window,
            p: self.p,
            q: self.q,
            negative_samples: self.negative_samples,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub folds: usize,
    /// Redraws allowed when a fold ends up with a single class.
    pub fold_attempts: usize,
    /// Replaces the default combinations when set.
    pub combinations: Option<Vec<Vec<Group>>>,
    /// Appended to the (default or configured) combinations.
    pub extra_combinations: Vec<Vec<Group>>,
    pub bootstrap_rounds: usize,
    /// Share of labeled users the importance models train on; the rest is
    /// permuted and scored.
    pub importance_train_fraction: f64,
    pub importance_repeats: usize,
    pub importance_metric: ImportanceMetric,
    /// Write per-user test scores next to the report.
    pub export_scores: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: 5,
            fold_attempts: 10,
            combinations: None,
            extra_combinations: Vec::new(),
            bootstrap_rounds: DEFAULT_BOOTSTRAP_ROUNDS,
            importance_train_fraction: 0.7,
            importance_repeats: 5,
            importance_metric: ImportanceMetric::Auc,
            export_scores: false,
        }
    }
}

impl ExperimentConfig {
    /// The configured combinations, or the defaults over `enabled`, plus extras.
    pub fn combinations(&self, enabled: &[Group]) -> Vec<Combination> {
        let mut combos = match &self.combinations {
            Some(list) => list.iter().map(|g| Combination::new(g.iter().copied())).collect(),
            None => crate::scoring::default_combinations(enabled),
        };
        combos.extend(self.extra_combinations.iter().map(|g| Combination::new(g.iter().copied())));
        let mut seen = BTreeSet::new();
        combos.retain(|c| seen.insert(c.clone()));
        combos
    }
}

fn default_models() -> Vec<NamedModel> {
    vec![
        NamedModel {
            name: "logistic_regression".into(),
            spec: ModelSpec::LogisticRegression(LogRegConfig::default()),
        },
        NamedModel {
            name: "random_forest".into(),
            spec: ModelSpec::RandomForest(ForestConfig::default()),
        },
        NamedModel {
            name: "feedforward_net".into(),
            spec: ModelSpec::FeedforwardNet(FeedforwardConfig::default()),
        },
    ]
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks every block before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        match (&self.data.synthetic, &self.data.input) {
            (Some(spec), None) => spec.validate().map_err(|e| invalid(e.to_string()))?,
            (None, Some(input)) => {
                if !(0.0..=1.0).contains(&input.rejection_tolerance) {
                    return Err(invalid("data.input.rejection_tolerance must lie in [0, 1]"));
                }
            }
            _ => return Err(invalid("set exactly one of data.synthetic and data.input")),
        }
        if self.labels.window_days <= 0 {
            return Err(invalid("labels.window_days must be positive"));
        }
        let n = &self.network;
        if !(n.frequency_threshold >= 0.0) {
            return Err(invalid("network.frequency_threshold must be nonnegative"));
        }
        if n.dense_app_fraction.is_some_and(|f| !(f > 0.0 && f <= 1.0)) {
            return Err(invalid("network.dense_app_fraction must lie in (0, 1]"));
        }
        self.features.buckets.validate().map_err(|e| invalid(e.to_string()))?;
        let enabled = self.features.enabled();
        if enabled.is_empty() {
            return Err(invalid("every feature group is disabled"));
        }
        let pr = &self.pagerank;
        if !(pr.alpha > 0.0 && pr.alpha < 1.0) {
            return Err(invalid("pagerank.alpha must lie in (0, 1)"));
        }
        if !(pr.tolerance > 0.0) || pr.max_iterations == 0 || !(pr.rfm_half_life_days > 0.0) {
            return Err(invalid("pagerank tolerance, max_iterations and rfm_half_life_days must be positive"));
        }
        let nv = &self.node2vec;
        for d in std::iter::once(nv.dimensions).chain(nv.dimension_sweep.iter().copied()) {
            nv.embed_config(d, 0).validate().map_err(|e| invalid(format!("node2vec: {e}")))?;
        }
        if self.models.is_empty() {
            return Err(invalid("at least one model is required"));
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if m.name.is_empty() || m.name.contains(['\t', '\n', '/']) {
                return Err(invalid(format!("model name {:?} must be nonempty without tabs, newlines or '/'", m.name)));
            }
            if !names.insert(&m.name) {
                return Err(invalid(format!("model name {} used twice", m.name)));
            }
        }
        self.profit.validate().map_err(|e| invalid(format!("profit: {e}")))?;
        let x = &self.experiment;
        if x.folds < 2 {
            return Err(invalid("experiment.folds must be at least 2"));
        }
        if x.bootstrap_rounds == 0 || x.importance_repeats == 0 || x.fold_attempts == 0 {
            return Err(invalid("bootstrap_rounds, importance_repeats and fold_attempts must be positive"));
        }
        if !(x.importance_train_fraction > 0.0 && x.importance_train_fraction < 1.0) {
            return Err(invalid("experiment.importance_train_fraction must lie in (0, 1)"));
        }
        let combos = x.combinations(&enabled);
        if combos.is_empty() {
            return Err(invalid("no feature-group combinations to evaluate"));
        }
        for c in &combos {
            if c.groups.is_empty() {
                return Err(invalid("empty feature-group combination"));
            }
            if let Some(g) = c.groups.iter().find(|g| !enabled.contains(g)) {
                return Err(invalid(format!("combination {} uses disabled group {g}", c.name())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n[data.synthetic]\nusers = 200\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = PipelineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.models.len(), 3);
        assert_eq!(cfg.experiment.folds, 5);
        assert_eq!(cfg.node2vec.dimension_sweep, vec![8, 16, 32, 64, 128]);
        assert_eq!(cfg.features.enabled().len(), 6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            format!("{MINIMAL}colour = 1\n"),
            format!("{MINIMAL}[network]\nthreshold = 2\n"),
            format!("{MINIMAL}[[models]]\nname = \"lr\"\nspec = {{ kind = \"logistic_regression\", l3 = 1 }}\n"),
        ] {
            assert!(matches!(PipelineConfig::from_toml(&text), Err(PipelineError::Config(_))), "{text}");
        }
    }

    #[test]
    fn data_source_must_be_unique() {
        let both = format!("{MINIMAL}[data.input]\ndir = \"x\"\n");
        assert!(PipelineConfig::from_toml(&both).is_err());
        assert!(PipelineConfig::from_toml("[data]\n").is_err());
    }

    #[test]
    fn models_and_combinations_parse() {
        let text = format!(
            "{MINIMAL}[[models]]\nname = \"lr\"\nspec = {{ kind = \"logistic_regression\", l2_penalty = 0.1 }}\n\
             [experiment]\ncombinations = [[\"neighborhood\", \"influence\"], [\"sociodemographic\"]]\n"
        );
        let cfg = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.models[0].name, "lr");
        let combos = cfg.experiment.combinations(&cfg.features.enabled());
        assert_eq!(combos[0].name(), "neighborhood+influence");
        assert_eq!(combos.len(), 2);
    }

    #[test]
    fn disabled_group_in_combination_is_rejected() {
        let text = format!("{MINIMAL}[features]\nembedding = false\n[experiment]\nextra_combinations = [[\"embedding\"]]\n");
        assert!(matches!(PipelineConfig::from_toml(&text), Err(PipelineError::Config(m)) if m.contains("disabled")));
    }

    #[test]
    fn duplicate_model_names_are_rejected() {
        let m = "[[models]]\nname = \"a\"\nspec = { kind = \"logistic_regression\" }\n";
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}{m}{m}")).is_err());
    }
}
