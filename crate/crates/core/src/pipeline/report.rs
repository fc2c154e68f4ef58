use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::features::FeatureSet;
use super::stages::{DatasetSummary, FeatureSummary, NetworkSummary, TrainOutput};
use super::store::{write_atomic, write_json};
use super::{PipelineError, StageError};
use crate::data::Label;
use crate::eval::{compare_models, Metrics};
use crate::scoring::{ablation_table, permutation_importance, AblationRow, FeatureImportance, Group, ImportanceMetric};
use crate::seed;

/// Paired test of two combinations under one model, on per-fold AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub model: String,
    pub first: String,
    pub second: String,
    /// Mean AUC of `first` minus that of `second`.
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupImportance {
    pub group: Group,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelImportance {
    pub model: String,
    pub metric: ImportanceMetric,
    pub baseline: f64,
    pub groups: Vec<GroupImportance>,
    pub features: Vec<FeatureImportance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dimensions: usize,
    pub model: String,
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
}

/// Output of the evaluate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ablation: Vec<AblationRow>,
    pub significance: Vec<SignificanceEntry>,
    pub importance: Vec<ModelImportance>,
    pub sweep: Vec<SweepRow>,
}

/// Everything a finished run reports. Wall-clock times live in a separate
/// file so that reruns produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub dataset: DatasetSummary,
    pub network: NetworkSummary,
    pub features: FeatureSummary,
    pub ablation: Vec<AblationRow>,
    pub significance: Vec<SignificanceEntry>,
    pub importance: Vec<ModelImportance>,
    pub sweep: Vec<SweepRow>,
    /// Output digest of every stage that fed the report.
    pub stage_digests: BTreeMap<String, String>,
}

impl RunReport {
    pub fn row(&self, combination: &str, model: &str) -> Option<&AblationRow> {
        self.ablation
            .iter()
            .find(|r| r.combination.name() == combination && r.model == model)
    }

    /// The test of `first` against `second` under `model`, in either order,
    /// oriented as `first − second`.
    pub fn comparison(&self, model: &str, first: &str, second: &str) -> Option<SignificanceEntry> {
        self.significance.iter().find_map(|e| {
            if e.model != model {
                return None;
            }
            if e.first == first && e.second == second {
                Some(e.clone())
            } else if e.first == second && e.second == first {
                Some(SignificanceEntry {
                    model: e.model.clone(),
                    first: first.into(),
                    second: second.into(),
                    delta: -e.delta,
                    ci_low: -e.ci_high,
                    ci_high: -e.ci_low,
                    p_value: e.p_value,
                })
            } else {
                None
            }
        })
    }
}

pub(super) fn evaluate(cfg: &PipelineConfig, set: &FeatureSet, trained: &TrainOutput) -> Result<Evaluation, StageError> {
    let ablation = ablation_table(&trained.cells, &set.labels, &set.folds, &cfg.profit)?;

    let mut significance = Vec::new();
    for model in &cfg.models {
        let rows: Vec<&AblationRow> = ablation.iter().filter(|r| r.model == model.name).collect();
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                let (first, second) = (a.combination.name(), b.combination.name());
                let test_seed = seed::derive(cfg.seed, &format!("significance/{}/{first}/{second}", model.name));
                let c = compare_models(
                    &a.fold_values(|m| m.auc),
                    &b.fold_values(|m| m.auc),
                    cfg.experiment.bootstrap_rounds,
                    test_seed,
                )?;
                significance.push(SignificanceEntry {
                    model: model.name.clone(),
                    first,
                    second,
                    delta: c.delta,
                    ci_low: c.ci_low,
                    ci_high: c.ci_high,
                    p_value: c.p_value,
                });
            }
        }
    }

    let enabled = cfg.features.enabled();
    let holdout = set.view_matrix(set.holdout_view())?.select_groups(&enabled)?;
    let test = &set.holdout.test;
    let bad: Vec<bool> = test.iter().map(|&r| set.labels[r] == Label::Bad).collect();
    let mut importance = Vec::new();
    for m in &trained.importance_models {
        log::info!(target: "evaluate", "permutation importance for {}", m.name);
        let imp = permutation_importance(
            &m.model,
            &holdout,
            test,
            &bad,
            cfg.experiment.importance_metric,
            cfg.experiment.importance_repeats,
            seed::derive(cfg.seed, &format!("importance/{}", m.name)),
        )?;
        importance.push(ModelImportance {
            model: m.name.clone(),
            metric: cfg.experiment.importance_metric,
            baseline: imp.baseline,
            groups: imp
                .groups
                .into_iter()
                .map(|(group, importance)| GroupImportance { group, importance })
                .collect(),
            features: imp.features,
        });
    }

    let mut sweep = Vec::new();
    for s in &trained.sweep {
        for row in ablation_table(&s.cells, &set.labels, &set.folds, &cfg.profit)? {
            sweep.push(SweepRow {
                dimensions: s.dimensions,
                model: row.model,
                folds: row.folds,
                mean: row.mean,
            });
        }
    }
    Ok(Evaluation {
        ablation,
        significance,
        importance,
        sweep,
    })
}

fn metric_cells(m: &Metrics) -> String {
    format!("{}\t{}\t{}\t{}", m.auc, m.brier, m.profit, m.best_cutoff_fraction)
}

fn ablation_tsv(run: &RunReport) -> String {
    let mut out = String::from("combination\tmodel\tfold\tauc\tbrier\tprofit\tbest_cutoff_fraction\n");
    for row in &run.ablation {
        let combo = row.combination.name();
        for (k, m) in row.folds.iter().enumerate() {
            let _ = writeln!(out, "{combo}\t{}\t{}\t{}", row.model, k + 1, metric_cells(m));
        }
        let _ = writeln!(out, "{combo}\t{}\tmean\t{}", row.model, metric_cells(&row.mean));
    }
    out
}

fn significance_tsv(run: &RunReport) -> String {
    let mut out = String::from("model\tfirst\tsecond\tdelta_auc\tci_low\tci_high\tp_value\n");
    for e in &run.significance {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.model, e.first, e.second, e.delta, e.ci_low, e.ci_high, e.p_value
        );
    }
    out
}

fn importance_tsv(run: &RunReport) -> String {
    let mut out = String::from("model\tlevel\tname\tgroup\timportance\tstd_error\n");
    for m in &run.importance {
        for g in &m.groups {
            let _ = writeln!(out, "{}\tgroup\t{}\t{}\t{}\t", m.model, g.group, g.group, g.importance);
        }
        for f in &m.features {
            let _ = writeln!(out, "{}\tfeature\t{}\t{}\t{}\t{}", m.model, f.feature, f.group, f.mean, f.std_error);
        }
    }
    out
}

fn sweep_tsv(run: &RunReport) -> String {
    let mut out = String::from("dimensions\tmodel\tauc\tbrier\tprofit\tbest_cutoff_fraction\n");
    for r in &run.sweep {
        let _ = writeln!(out, "{}\t{}\t{}", r.dimensions, r.model, metric_cells(&r.mean));
    }
    out
}

/// Writes the report and its tables into `dir`.
pub(super) fn write_tables(run: &RunReport, dir: &Path) -> Result<(), PipelineError> {
    write_json(&dir.join("report.json"), run)?;
    write_atomic(&dir.join("ablation.tsv"), ablation_tsv(run).as_bytes())?;
    write_atomic(&dir.join("significance.tsv"), significance_tsv(run).as_bytes())?;
    write_atomic(&dir.join("importance.tsv"), importance_tsv(run).as_bytes())?;
    write_atomic(&dir.join("sweep.tsv"), sweep_tsv(run).as_bytes())?;
    write_atomic(&dir.join("summary.txt"), render_summary(run).as_bytes())
}

/// Per-user test-fold scores; only written on request.
pub(super) fn write_scores(set: &FeatureSet, trained: &TrainOutput, path: &Path) -> Result<(), PipelineError> {
    let mut out = String::from("user_id\tcombination\tmodel\tfold\tscore\n");
    for cell in &trained.cells {
        let combo = cell.combination.name();
        for (&row, score) in set.folds[cell.fold].iter().zip(&cell.scores) {
            let _ = writeln!(out, "{}\t{combo}\t{}\t{}\t{score}", set.ids[row], cell.model, cell.fold + 1);
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Human-readable overview: data, network and the mean ablation metrics.
pub fn render_summary(run: &RunReport) -> String {
    let d = &run.dataset;
    let n = &run.network;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dataset: {} users, {} labeled ({} bad, default rate {})",
        d.users,
        d.labeled,
        d.bad,
        d.default_rate.map_or("n/a".into(), |r| format!("{r:.4}"))
    );
    let _ = writeln!(
        out,
        "network: {} apps, {} user-user edges, density {:.4}, mean degree {:.2}, {} isolated",
        n.apps, n.edges, n.density, n.mean_degree, n.isolated_users
    );
    let _ = writeln!(out);
    let combo_width = run
        .ablation
        .iter()
        .map(|r| r.combination.name().len())
        .chain(std::iter::once("combination".len()))
        .max()
        .unwrap_or(0);
    let model_width = run
        .ablation
        .iter()
        .map(|r| r.model.len())
        .chain(std::iter::once("model".len()))
        .max()
        .unwrap_or(0);
    let _ = writeln!(
        out,
        "{:<combo_width$}  {:<model_width$}  {:>8}  {:>8}  {:>8}",
        "combination", "model", "auc", "brier", "profit"
    );
    for r in &run.ablation {
        let _ = writeln!(
            out,
            "{:<combo_width$}  {:<model_width$}  {:>8.4}  {:>8.4}  {:>8.4}",
            r.combination.name(),
            r.model,
            r.mean.auc,
            r.mean.brier,
            r.mean.profit
        );
    }
    if !run.sweep.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>10}  {:<model_width$}  {:>8}", "dimensions", "model", "auc");
        for r in &run.sweep {
            let _ = writeln!(out, "{:>10}  {:<model_width$}  {:>8.4}", r.dimensions, r.model, r.mean.auc);
        }
    }
    out
}
