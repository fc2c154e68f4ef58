use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, FeatureMatrix, Group, Model, ModelSpec, ScoringError};
use crate::data::Label;
use crate::eval::{self, Metrics, ProfitParams};
use crate::seed;

/// A set of feature groups trained on together.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Combination {
    pub groups: Vec<Group>,
}

impl Combination {
    /// Sorted and deduplicated.
    pub fn new(groups: impl IntoIterator<Item = Group>) -> Self {
        let set: BTreeSet<Group> = groups.into_iter().collect();
        Combination {
            groups: set.into_iter().collect(),
        }
    }

    pub fn name(&self) -> String {
        self.groups.iter().map(|g| g.as_str()).collect::<Vec<_>>().join("+")
    }
}

/// Each group alone, each other group paired with the sociodemographic
/// group, then all groups together.
pub fn default_combinations(present: &[Group]) -> Vec<Combination> {
    let mut out: Vec<Combination> = present.iter().map(|&g| Combination::new([g])).collect();
    if present.contains(&Group::Sociodemographic) {
        for &g in present.iter().filter(|&&g| g != Group::Sociodemographic) {
            out.push(Combination::new([Group::Sociodemographic, g]));
        }
    }
    out.push(Combination::new(present.iter().copied()));
    dedup_combinations(out)
}

/// Drops empty and repeated combinations, keeping first occurrences.
pub(crate) fn dedup_combinations(combos: Vec<Combination>) -> Vec<Combination> {
    let mut seen = BTreeSet::new();
    combos
        .into_iter()
        .map(|c| Combination::new(c.groups))
        .filter(|c| !c.groups.is_empty() && seen.insert(c.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedModel {
    pub name: String,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seed: u64,
    pub profit: ProfitParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub combination: Combination,
    pub model: String,
    /// One entry per fold, in fold order.
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
}

impl AblationRow {
    pub fn fold_values(&self, metric: fn(&Metrics) -> f64) -> Vec<f64> {
        self.folds.iter().map(metric).collect()
    }
}

fn mean_metrics(folds: &[Metrics]) -> Metrics {
    let n = folds.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
    Metrics {
        auc: avg(|m| m.auc),
        brier: avg(|m| m.brier),
        profit: avg(|m| m.profit),
        best_cutoff_fraction: avg(|m| m.best_cutoff_fraction),
    }
}

/// Training rows of each fold: labeled rows outside its test set.
fn training_rows(labels: &[Label], test: &[usize]) -> Vec<usize> {
    let test: BTreeSet<usize> = test.iter().copied().collect();
    (0..labels.len()).filter(|r| labels[*r].is_labeled() && !test.contains(r)).collect()
}

fn has_both(labels: &[Label], rows: &[usize]) -> bool {
    rows.iter().any(|&r| labels[r] == Label::Bad) && rows.iter().any(|&r| labels[r] == Label::Good)
}

/// Stratified folds whose test and training parts all contain both classes,
/// redrawn from derived seeds up to `max_attempts` times.
pub fn draw_folds(labels: &[Label], k: usize, seed: u64, max_attempts: usize) -> Result<Vec<Vec<usize>>, ScoringError> {
    for attempt in 0..max_attempts.max(1) {
        let folds = super::stratified_folds(labels, k, seed::derive_indexed(seed, &[attempt as u64]))?;
        if folds.iter().all(|f| has_both(labels, f) && has_both(labels, &training_rows(labels, f))) {
            return Ok(folds);
        }
        log::warn!(target: "scoring", "fold draw {attempt} left a fold with a single class; redrawing");
    }
    Err(ScoringError::DegenerateFolds(max_attempts))
}

/// Test-fold scores of one (combination, model, fold) cell, aligned with the
/// fold's test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub combination: Combination,
    pub model: String,
    pub fold: usize,
    pub scores: Vec<f64>,
}

/// Trains every (combination, model, fold) cell and scores its test fold.
///
/// `matrices` holds either one matrix shared by all folds or one per fold,
/// for features whose values depend on which labels are visible. Rows are
/// in the same order in every matrix and align with `labels`. Cells come
/// back grouped by combination, then model, then fold.
pub fn cross_validated_scores(
    matrices: &[&FeatureMatrix],
    labels: &[Label],
    folds: &[Vec<usize>],
    combinations: &[Combination],
    models: &[NamedModel],
    seed: u64,
) -> Result<Vec<FoldScores>, ScoringError> {
    if matrices.len() != 1 && matrices.len() != folds.len() {
        return Err(ScoringError::InvalidConfig(format!(
            "{} feature matrices for {} folds",
            matrices.len(),
            folds.len()
        )));
    }
    for (k, test) in folds.iter().enumerate() {
        if !has_both(labels, test) || !has_both(labels, &training_rows(labels, test)) {
            return Err(ScoringError::InvalidConfig(format!("fold {k} lacks one class")));
        }
    }
    let combinations = dedup_combinations(combinations.to_vec());
    for m in matrices {
        for c in &combinations {
            m.select_groups(&c.groups)?;
        }
    }

    let cells: Vec<(usize, usize, usize)> = (0..combinations.len())
        .flat_map(|c| (0..models.len()).flat_map(move |m| (0..folds.len()).map(move |f| (c, m, f))))
        .collect();
    cells
        .par_iter()
        .map(|&(c, m, f)| {
            let combo = &combinations[c];
            let model = &models[m];
            let matrix = matrices[if matrices.len() == 1 { 0 } else { f }].select_groups(&combo.groups)?;
            let test = &folds[f];
            let train_rows = training_rows(labels, test);
            let train_bad: Vec<bool> = train_rows.iter().map(|&r| labels[r] == Label::Bad).collect();
            let cell_seed = seed::derive(seed, &format!("{}/{}/{f}", combo.name(), model.name));
            let fitted = train(&model.spec, &matrix, &train_rows, &train_bad, cell_seed)?;
            let scores = fitted.predict(&matrix, test)?;
            log::debug!(target: "scoring", "{} / {} / fold {f} done", combo.name(), model.name);
            Ok(FoldScores {
                combination: combo.clone(),
                model: model.name.clone(),
                fold: f,
                scores,
            })
        })
        .collect()
}

/// One row per (combination, model) run of consecutive cells, with metrics
/// per fold and their means.
pub fn ablation_table(
    cells: &[FoldScores],
    labels: &[Label],
    folds: &[Vec<usize>],
    profit: &ProfitParams,
) -> Result<Vec<AblationRow>, ScoringError> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for cell in cells {
        let test = folds
            .get(cell.fold)
            .ok_or_else(|| ScoringError::InvalidConfig(format!("fold {} out of range", cell.fold)))?;
        let bad: Vec<bool> = test.iter().map(|&r| labels[r] == Label::Bad).collect();
        let metrics = eval::evaluate(&cell.scores, &bad, profit)?;
        match rows.last_mut() {
            Some(row) if row.combination == cell.combination && row.model == cell.model => row.folds.push(metrics),
            _ => rows.push(AblationRow {
                combination: cell.combination.clone(),
                model: cell.model.clone(),
                folds: vec![metrics],
                mean: metrics,
            }),
        }
    }
    for row in &mut rows {
        row.mean = mean_metrics(&row.folds);
    }
    Ok(rows)
}

/// Cross-validated metrics for every (combination, model) pair.
pub fn ablation_study(
    matrices: &[&FeatureMatrix],
    labels: &[Label],
    folds: &[Vec<usize>],
    combinations: &[Combination],
    models: &[NamedModel],
    cfg: &AblationConfig,
) -> Result<Vec<AblationRow>, ScoringError> {
    let cells = cross_validated_scores(matrices, labels, folds, combinations, models, cfg.seed)?;
    ablation_table(&cells, labels, folds, &cfg.profit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    #[default]
    Auc,
    Brier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub group: Group,
    /// Mean metric degradation over repeats; positive means the feature helps.
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub baseline: f64,
    pub features: Vec<FeatureImportance>,
    /// Sum of feature importances per group, in canonical group order.
    pub groups: Vec<(Group, f64)>,
}

fn score_metric(metric: ImportanceMetric, scores: &[f64], bad: &[bool]) -> Result<f64, ScoringError> {
    Ok(match metric {
        ImportanceMetric::Auc => eval::auc(scores, bad)?,
        // lower is better; negate so degradation is a drop
        ImportanceMetric::Brier => -eval::brier(scores, bad)?,
    })
}

/// Drop in `metric` when one matrix column (and its missingness indicator)
/// is shuffled across `rows`, averaged over `repeats` shuffles.
pub fn permutation_importance(
    model: &Model,
    m: &FeatureMatrix,
    rows: &[usize],
    bad: &[bool],
    metric: ImportanceMetric,
    repeats: usize,
    seed: u64,
) -> Result<Importance, ScoringError> {
    if repeats == 0 {
        return Err(ScoringError::InvalidConfig("importance repeats must be positive".into()));
    }
    let design = model.preprocessor.transform(m, rows)?;
    let baseline = score_metric(metric, &model.predict_design(&design), bad)?;
    let positions = model.preprocessor.positions();

    let features = model
        .preprocessor
        .features
        .par_iter()
        .enumerate()
        .map(|(j, f)| {
            let drops = (0..repeats)
                .map(|rep| {
                    let mut rng = seed::rng(seed::derive_indexed(seed, &[j as u64, rep as u64]));
                    let mut perm: Vec<usize> = (0..design.len()).collect();
                    perm.shuffle(&mut rng);
                    let mut shuffled = design.clone();
                    for (row, &src) in shuffled.iter_mut().zip(&perm) {
                        for &p in &positions[j] {
                            row[p] = design[src][p];
                        }
                    }
                    Ok(baseline - score_metric(metric, &model.predict_design(&shuffled), bad)?)
                })
                .collect::<Result<Vec<f64>, ScoringError>>()?;
            let n = drops.len() as f64;
            let mean = drops.iter().sum::<f64>() / n;
            let var = if drops.len() > 1 {
                drops.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            Ok(FeatureImportance {
                feature: f.source.clone(),
                group: f.group,
                mean,
                std_error: (var / n).sqrt(),
            })
        })
        .collect::<Result<Vec<_>, ScoringError>>()?;

    let groups = Group::ALL
        .iter()
        .filter_map(|&g| {
            let members: Vec<f64> = features.iter().filter(|f| f.group == g).map(|f| f.mean).collect();
            (!members.is_empty()).then(|| (g, members.iter().sum()))
        })
        .collect();
    Ok(Importance {
        baseline,
        features,
        groups,
    })
}
