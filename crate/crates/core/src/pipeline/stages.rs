use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::features::{self, FeatureSet, Holdout, SweepColumns};
use super::report::{self, Evaluation, RunReport};
use super::store::{file_digest, read_json, stage_key, write_atomic, write_json, StageDir, Store};
use super::{Command, InStage, PipelineError, Stage, StageError};
use crate::data::{
    derive_labels, generate_synthetic, load_dataset, write_dataset, DataError, Dataset, DatasetPaths, Label,
    LoadOptions, Schema,
};
use crate::network::{build_bipartite_with_users, project_to_unipartite, read_edge_list, write_edge_list};
use crate::network::{BipartiteNetwork, UnipartiteNetwork, WeightedGraph};
use crate::scoring::{
    cross_validated_scores, draw_folds, split_train_test, train, Combination, FeatureMatrix, FoldScores, Group, Model,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub app_usage_rows: usize,
    pub call_events: usize,
    pub loans: usize,
    pub labeled: usize,
    pub bad: usize,
    pub good: usize,
    pub unlabeled: usize,
    /// Bad share among labeled users.
    pub default_rate: Option<f64>,
    pub as_of: Option<NaiveDate>,
    pub rejected_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub users: usize,
    pub apps: usize,
    pub bipartite_edges: usize,
    pub nodes: usize,
    pub edges: usize,
    pub density: f64,
    pub mean_degree: f64,
    pub isolated_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub rows: usize,
    pub labeled: usize,
    pub folds: usize,
    /// Column count per group, label-dependent columns included.
    pub columns: Vec<(Group, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceModel {
    pub name: String,
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCells {
    pub dimensions: usize,
    pub cells: Vec<FoldScores>,
}

/// Output of the train stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub cells: Vec<FoldScores>,
    /// One model per configured model, fit on the holdout training rows with
    /// every enabled group.
    pub importance_models: Vec<ImportanceModel>,
    pub sweep: Vec<SweepCells>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub cached: bool,
}

const INCOMPLETE: &str = "INCOMPLETE";

/// Runs stages of one config against one run directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    store: Store,
    timings: RefCell<Vec<StageTiming>>,
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Good => "good",
        Label::Bad => "bad",
        Label::Unlabeled => "unlabeled",
    }
}

fn write_labels(path: &Path, labels: &BTreeMap<String, Label>) -> Result<(), StageError> {
    let mut w = csv::Writer::from_path(path).map_err(DataError::from)?;
    w.write_record(["user_id", "label"]).map_err(DataError::from)?;
    for (id, l) in labels {
        w.write_record([id.as_str(), label_name(*l)]).map_err(DataError::from)?;
    }
    w.flush().map_err(DataError::from)?;
    Ok(())
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>, PipelineError> {
    let corrupt = |message: String| PipelineError::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| corrupt(e.to_string()))?;
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row.map_err(|e| corrupt(e.to_string()))?;
        let label = match row.get(1) {
            Some("good") => Label::Good,
            Some("bad") => Label::Bad,
            Some("unlabeled") => Label::Unlabeled,
            other => return Err(corrupt(format!("unknown label {other:?}"))),
        };
        out.insert(row.get(0).unwrap_or_default().to_string(), label);
    }
    Ok(out)
}

fn summarize_dataset(d: &Dataset, labels: &BTreeMap<String, Label>, as_of: Option<NaiveDate>, rejected: usize) -> DatasetSummary {
    let count = |l: Label| labels.values().filter(|x| **x == l).count();
    let (bad, good) = (count(Label::Bad), count(Label::Good));
    DatasetSummary {
        users: d.users.len(),
        app_usage_rows: d.app_usage.len(),
        call_events: d.calls.len(),
        loans: d.loans.len(),
        labeled: bad + good,
        bad,
        good,
        unlabeled: d.users.len() - bad - good,
        default_rate: (bad + good > 0).then(|| bad as f64 / (bad + good) as f64),
        as_of,
        rejected_rows: rejected,
    }
}

fn summarize_network(nb: &BipartiteNetwork, net: &UnipartiteNetwork) -> NetworkSummary {
    let n = net.node_count();
    NetworkSummary {
        users: nb.user_ids().len(),
        apps: nb.app_ids().len(),
        bipartite_edges: nb.edge_count(),
        nodes: n,
        edges: net.edge_count(),
        density: net.density(),
        mean_degree: if n == 0 { 0.0 } else { 2.0 * net.edge_count() as f64 / n as f64 },
        isolated_users: (0..n).filter(|&u| net.degree(u) == 0).count(),
    }
}

fn load_data(dir: &StageDir) -> Result<(Dataset, BTreeMap<String, Label>), PipelineError> {
    let opts = LoadOptions {
        rejection_tolerance: 0.0,
        amount_menu: None,
    };
    let (dataset, _) = load_dataset(&DatasetPaths::in_dir(&dir.path), &Schema::default(), &opts).in_stage(Stage::Data)?;
    Ok((dataset, read_labels(&dir.file("labels.csv"))?))
}

fn load_network(dir: &StageDir) -> Result<(BipartiteNetwork, UnipartiteNetwork), PipelineError> {
    let nb: BipartiteNetwork = read_json(&dir.file("bipartite.json"))?;
    let net = read_edge_list(&dir.file("unipartite.tsv")).in_stage(Stage::Network)?;
    if net.ids() != nb.user_ids() {
        return Err(PipelineError::Corrupt {
            path: dir.path.clone(),
            message: "projection and bipartite user lists differ".into(),
        });
    }
    Ok((nb, net))
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline {
            cfg,
            store: Store::new(out),
            timings: RefCell::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out(&self) -> &Path {
        self.store.root()
    }

    pub fn timings(&self) -> Vec<StageTiming> {
        self.timings.borrow().clone()
    }

    /// Runs `cmd`, marking the run directory incomplete if a stage fails.
    pub fn execute(&self, cmd: Command) -> Result<Option<RunReport>, PipelineError> {
        std::fs::create_dir_all(self.out()).map_err(|e| PipelineError::io(self.out(), e))?;
        self.timings.borrow_mut().clear();
        let marker = self.out().join(INCOMPLETE);
        let result = self.execute_stages(cmd);
        match &result {
            Ok(_) => {
                if marker.exists() {
                    std::fs::remove_file(&marker).map_err(|e| PipelineError::io(&marker, e))?;
                }
                write_json(&self.out().join("timings.json"), &self.timings())?;
            }
            Err(e) => {
                // best effort: the original error matters more than the marker
                let _ = write_atomic(&marker, format!("{e}\n").as_bytes());
            }
        }
        result
    }

    fn execute_stages(&self, cmd: Command) -> Result<Option<RunReport>, PipelineError> {
        let target = cmd.target();
        let may_build = |s: Stage| cmd == Command::Run || s == target || (cmd == Command::BuildNet && s == Stage::Data);
        let data = self.data_stage(may_build(Stage::Data))?;
        let network = self.network_stage(&data, may_build(Stage::Network))?;
        if target == Stage::Network {
            return Ok(None);
        }
        let feats = self.features_stage(&data, &network, may_build(Stage::Features))?;
        if target == Stage::Features {
            return Ok(None);
        }
        let trained = self.train_stage(&feats, may_build(Stage::Train))?;
        if target == Stage::Train {
            return Ok(None);
        }
        let evaluated = self.evaluate_stage(&feats, &trained, may_build(Stage::Evaluate))?;
        if target == Stage::Evaluate {
            return Ok(None);
        }
        let started = Instant::now();
        let run = self.write_report(&data, &network, &feats, &trained, &evaluated)?;
        self.record(Stage::Report, started, false);
        Ok(Some(run))
    }

    fn record(&self, stage: Stage, started: Instant, cached: bool) {
        self.timings.borrow_mut().push(StageTiming {
            stage: stage.as_str().into(),
            seconds: started.elapsed().as_secs_f64(),
            cached,
        });
    }

    fn resolve(
        &self,
        stage: Stage,
        key: &str,
        may_build: bool,
        build: impl FnOnce(&Path) -> Result<(), PipelineError>,
    ) -> Result<StageDir, PipelineError> {
        let started = Instant::now();
        if let Some(dir) = self.store.lookup(stage, key)? {
            log::info!(target: stage.as_str(), "reusing cached output {}", &key[..12]);
            self.record(stage, started, true);
            return Ok(dir);
        }
        if !may_build {
            return Err(PipelineError::MissingUpstream { missing: stage });
        }
        log::info!(target: stage.as_str(), "running");
        let dir = self.store.commit(stage, key, build)?;
        log::info!(target: stage.as_str(), "done in {:.1}s", started.elapsed().as_secs_f64());
        self.record(stage, started, false);
        Ok(dir)
    }

    fn data_stage(&self, may_build: bool) -> Result<StageDir, PipelineError> {
        let cfg = &self.cfg;
        let inputs = match &cfg.data.input {
            Some(input) => {
                let paths = DatasetPaths::in_dir(&input.dir);
                let mut digests = BTreeMap::new();
                for (name, path) in [
                    ("users", &paths.users),
                    ("app_usage", &paths.app_usage),
                    ("calls", &paths.calls),
                    ("loans", &paths.loans),
                ] {
                    if !path.is_file() {
                        return Err(DataError::MissingFile {
                            path: path.display().to_string(),
                        })
                        .in_stage(Stage::Data);
                    }
                    digests.insert(name, file_digest(path)?);
                }
                Some(digests)
            }
            None => None,
        };
        let data_seed = cfg.data.synthetic.as_ref().map(|_| seed::derive(cfg.seed, "data"));
        let block = serde_json::json!({
            "synthetic": cfg.data.synthetic,
            "input": cfg.data.input.as_ref().map(|i| (&i.schema, i.rejection_tolerance, &i.amount_menu)),
            "input_digests": inputs,
            "labels": cfg.labels,
            "seed": data_seed,
        });
        let key = stage_key(Stage::Data, &block, &[]);
        self.resolve(Stage::Data, &key, may_build, |dir| {
            let (dataset, rejected) = match (&cfg.data.synthetic, &cfg.data.input) {
                (Some(spec), _) => {
                    let d = generate_synthetic(spec, data_seed.expect("set for synthetic data")).in_stage(Stage::Data)?;
                    (d, 0)
                }
                (None, Some(input)) => {
                    let (d, rep) = load_dataset(&DatasetPaths::in_dir(&input.dir), &input.schema, &input.load_options())
                        .in_stage(Stage::Data)?;
                    (d, rep.files.iter().map(|f| f.rejected.len()).sum())
                }
                (None, None) => return Err(PipelineError::Config("no data source".into())),
            };
            let as_of = cfg.labels.as_of.or_else(|| dataset.latest_loan_date());
            let labels = as_of
                .map(|day| derive_labels(&dataset.loans, cfg.labels.window_days, day))
                .unwrap_or_default();
            write_dataset(&dataset, dir).in_stage(Stage::Data)?;
            write_labels(&dir.join("labels.csv"), &labels).in_stage(Stage::Data)?;
            let summary = summarize_dataset(&dataset, &labels, as_of, rejected);
            log::info!(
                target: "data",
                "{} users, {} labeled, default rate {:.3}",
                summary.users,
                summary.labeled,
                summary.default_rate.unwrap_or(f64::NAN)
            );
            write_json(&dir.join("summary.json"), &summary)
        })
    }

    fn network_stage(&self, data: &StageDir, may_build: bool) -> Result<StageDir, PipelineError> {
        let key = stage_key(Stage::Network, &self.cfg.network, &[&data.digest]);
        self.resolve(Stage::Network, &key, may_build, |dir| {
            let (dataset, _) = load_data(data)?;
            let nb = build_bipartite_with_users(
                dataset.users.iter().map(|u| u.user_id.as_str()),
                &dataset.app_usage,
                &self.cfg.network.bipartite(),
            )
            .in_stage(Stage::Network)?;
            let net = project_to_unipartite(&nb, &self.cfg.network.projection());
            let summary = summarize_network(&nb, &net);
            log::info!(
                target: "network",
                "{} users, {} apps, {} user-user edges (density {:.4})",
                summary.users,
                summary.apps,
                summary.edges,
                summary.density
            );
            write_json(&dir.join("bipartite.json"), &nb)?;
            write_edge_list(&net, &dir.join("unipartite.tsv")).in_stage(Stage::Network)?;
            write_json(&dir.join("summary.json"), &summary)
        })
    }

    fn features_stage(&self, data: &StageDir, network: &StageDir, may_build: bool) -> Result<StageDir, PipelineError> {
        let cfg = &self.cfg;
        let block = serde_json::json!({
            "features": cfg.features,
            "pagerank": cfg.pagerank,
            "node2vec": cfg.node2vec,
            "folds": cfg.experiment.folds,
            "fold_attempts": cfg.experiment.fold_attempts,
            "importance_train_fraction": cfg.experiment.importance_train_fraction,
            "seed": cfg.seed,
        });
        let key = stage_key(Stage::Features, &block, &[&data.digest, &network.digest]);
        self.resolve(Stage::Features, &key, may_build, |dir| {
            let (dataset, label_map) = load_data(data)?;
            let (nb, net) = load_network(network)?;
            let set = self.featurize(&dataset, &label_map, &nb, &net).in_stage(Stage::Features)?;
            write_json(&dir.join("summary.json"), &summarize_features(&set).in_stage(Stage::Features)?)?;
            write_json(&dir.join("features.json"), &set)
        })
    }

    fn featurize(
        &self,
        dataset: &Dataset,
        label_map: &BTreeMap<String, Label>,
        nb: &BipartiteNetwork,
        net: &UnipartiteNetwork,
    ) -> Result<FeatureSet, StageError> {
        let cfg = &self.cfg;
        let ids = net.ids().to_vec();
        let labels: Vec<Label> = ids.iter().map(|id| label_map.get(id).copied().unwrap_or(Label::Unlabeled)).collect();
        let embedding_seed = seed::derive(cfg.seed, "node2vec");

        let mut base = FeatureMatrix::new(ids.clone())?;
        base.extend(features::label_free_columns(cfg, dataset, nb, net, embedding_seed)?)?;

        let folds = draw_folds(&labels, cfg.experiment.folds, seed::derive(cfg.seed, "folds"), cfg.experiment.fold_attempts)?;
        let (train, test) = split_train_test(&labels, cfg.experiment.importance_train_fraction, seed::derive(cfg.seed, "holdout"))?;
        let mut views = Vec::with_capacity(folds.len() + 1);
        for hidden in folds.iter().chain(std::iter::once(&test)) {
            views.push(features::label_columns(cfg, net, features::mask(&labels, hidden))?);
        }

        let mut sweep = Vec::new();
        if cfg.features.embedding {
            for &d in &cfg.node2vec.dimension_sweep {
                let columns = if d == cfg.node2vec.dimensions {
                    base.columns().iter().filter(|c| c.group == Group::Embedding).cloned().collect()
                } else {
                    features::embedding_columns(&features::embedding(cfg, nb, net, d, embedding_seed)?)
                };
                sweep.push(SweepColumns { dimensions: d, columns });
            }
        }
        log::info!(target: "features", "{} columns before label-dependent ones, {} views", base.columns().len(), views.len());
        Ok(FeatureSet {
            ids,
            labels,
            base,
            folds,
            holdout: Holdout { train, test },
            views,
            sweep,
        })
    }

    fn train_stage(&self, feats: &StageDir, may_build: bool) -> Result<StageDir, PipelineError> {
        let cfg = &self.cfg;
        let enabled = cfg.features.enabled();
        let combos = cfg.experiment.combinations(&enabled);
        let block = serde_json::json!({
            "models": cfg.models,
            "combinations": combos,
            "seed": cfg.seed,
        });
        let key = stage_key(Stage::Train, &block, &[&feats.digest]);
        self.resolve(Stage::Train, &key, may_build, |dir| {
            let set: FeatureSet = read_json(&feats.file("features.json"))?;
            let out = self.fit_all(&set, &enabled, &combos).in_stage(Stage::Train)?;
            write_json(&dir.join("train.json"), &out)
        })
    }

    fn fit_all(&self, set: &FeatureSet, enabled: &[Group], combos: &[Combination]) -> Result<TrainOutput, StageError> {
        let cfg = &self.cfg;
        let matrices = (0..set.folds.len()).map(|v| set.view_matrix(v)).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&FeatureMatrix> = matrices.iter().collect();
        log::info!(
            target: "train",
            "{} combinations x {} models x {} folds",
            combos.len(),
            cfg.models.len(),
            set.folds.len()
        );
        let cells = cross_validated_scores(&refs, &set.labels, &set.folds, combos, &cfg.models, seed::derive(cfg.seed, "cells"))?;

        let holdout = set.view_matrix(set.holdout_view())?.select_groups(enabled)?;
        let bad: Vec<bool> = set.holdout.train.iter().map(|&r| set.labels[r] == Label::Bad).collect();
        let mut importance_models = Vec::new();
        for m in &cfg.models {
            let model_seed = seed::derive(cfg.seed, &format!("importance/{}", m.name));
            importance_models.push(super::ImportanceModel {
                name: m.name.clone(),
                model: train(&m.spec, &holdout, &set.holdout.train, &bad, model_seed)?,
            });
        }

        let mut sweep = Vec::new();
        let embedding_only = [Combination::new([Group::Embedding])];
        for (s, sc) in set.sweep.iter().enumerate() {
            log::info!(target: "train", "embedding sweep, {} dimensions", sc.dimensions);
            let m = set.sweep_matrix(s)?;
            let sweep_seed = seed::derive_indexed(seed::derive(cfg.seed, "sweep"), &[sc.dimensions as u64]);
            let cells = cross_validated_scores(&[&m], &set.labels, &set.folds, &embedding_only, &cfg.models, sweep_seed)?;
            sweep.push(SweepCells {
                dimensions: sc.dimensions,
                cells,
            });
        }
        Ok(TrainOutput {
            cells,
            importance_models,
            sweep,
        })
    }

    fn evaluate_stage(&self, feats: &StageDir, trained: &StageDir, may_build: bool) -> Result<StageDir, PipelineError> {
        let cfg = &self.cfg;
        let block = serde_json::json!({
            "profit": cfg.profit,
            "bootstrap_rounds": cfg.experiment.bootstrap_rounds,
            "importance_repeats": cfg.experiment.importance_repeats,
            "importance_metric": cfg.experiment.importance_metric,
            "enabled": cfg.features.enabled(),
            "seed": cfg.seed,
        });
        let key = stage_key(Stage::Evaluate, &block, &[&feats.digest, &trained.digest]);
        self.resolve(Stage::Evaluate, &key, may_build, |dir| {
            let set: FeatureSet = read_json(&feats.file("features.json"))?;
            let out: TrainOutput = read_json(&trained.file("train.json"))?;
            let evaluation = report::evaluate(cfg, &set, &out).in_stage(Stage::Evaluate)?;
            write_json(&dir.join("evaluation.json"), &evaluation)
        })
    }

    fn write_report(
        &self,
        data: &StageDir,
        network: &StageDir,
        feats: &StageDir,
        trained: &StageDir,
        evaluated: &StageDir,
    ) -> Result<RunReport, PipelineError> {
        let evaluation: Evaluation = read_json(&evaluated.file("evaluation.json"))?;
        let mut config = self.cfg.clone();
        config.output = None;
        let digests = [
            (Stage::Data, data),
            (Stage::Network, network),
            (Stage::Features, feats),
            (Stage::Train, trained),
            (Stage::Evaluate, evaluated),
        ]
        .into_iter()
        .map(|(s, d)| (s.as_str().to_string(), d.digest.clone()))
        .collect();
        let run = RunReport {
            config,
            dataset: read_json(&data.file("summary.json"))?,
            network: read_json(&network.file("summary.json"))?,
            features: read_json(&feats.file("summary.json"))?,
            ablation: evaluation.ablation,
            significance: evaluation.significance,
            importance: evaluation.importance,
            sweep: evaluation.sweep,
            stage_digests: digests,
        };
        let dir = self.out().join("report");
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        report::write_tables(&run, &dir)?;
        if self.cfg.experiment.export_scores {
            let set: FeatureSet = read_json(&feats.file("features.json"))?;
            let out: TrainOutput = read_json(&trained.file("train.json"))?;
            report::write_scores(&set, &out, &dir.join("scores.tsv"))?;
        } else if dir.join("scores.tsv").exists() {
            std::fs::remove_file(dir.join("scores.tsv")).map_err(|e| PipelineError::io(&dir, e))?;
        }
        log::info!(target: "report", "written to {}", dir.display());
        Ok(run)
    }
}

fn summarize_features(set: &FeatureSet) -> Result<FeatureSummary, StageError> {
    let full = set.view_matrix(0)?;
    let columns = Group::ALL
        .iter()
        .map(|&g| (g, full.columns().iter().filter(|c| c.group == g).count()))
        .filter(|(_, n)| *n > 0)
        .collect();
    Ok(FeatureSummary {
        rows: set.ids.len(),
        labeled: set.labels.iter().filter(|l| l.is_labeled()).count(),
        folds: set.folds.len(),
        columns,
    })
}
