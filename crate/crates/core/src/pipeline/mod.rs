//! End-to-end runs: data → networks → features → cross-validated models →
//! evaluation → report, each stage cached by the content of its inputs.

mod config;
mod features;
mod report;
mod stages;
mod store;

use std::path::{Path, PathBuf};

pub use config::{
    DataConfig, EmbedGraph, ExperimentConfig, FeatureConfig, InputConfig, LabelConfig, NetworkConfig, Node2VecSection,
    PageRankSection, PipelineConfig,
};
pub use features::{FeatureSet, Holdout, SweepColumns, HAS_LABELED_NEIGHBOR};
pub use report::{
    render_summary, Evaluation, GroupImportance, ModelImportance, RunReport, SignificanceEntry, SweepRow,
};
pub use stages::{
    DatasetSummary, FeatureSummary, ImportanceModel, NetworkSummary, Pipeline, StageTiming, SweepCells, TrainOutput,
};
pub use store::{stage_key, Manifest, StageDir, Store};

use crate::data::DataError;
use crate::embed::EmbedError;
use crate::eval::EvalError;
use crate::netfeat::NetFeatError;
use crate::network::NetworkError;
use crate::scoring::ScoringError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Network,
    Features,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Network => "network",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Subcommand that produces this stage's output.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Data | Stage::Network => "build-net",
            Stage::Features => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a subcommand asks the pipeline to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    BuildNet,
    Featurize,
    Train,
    Evaluate,
    Report,
    Run,
}

impl Command {
    /// Last stage the command runs; earlier stages must already be cached
    /// unless the command is `Run`.
    pub fn target(self) -> Stage {
        match self {
            Command::BuildNet => Stage::Network,
            Command::Featurize => Stage::Features,
            Command::Train => Stage::Train,
            Command::Evaluate => Stage::Evaluate,
            Command::Report | Command::Run => Stage::Report,
        }
    }
}

/// Failure inside one stage's computation.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    NetFeat(#[from] NetFeatError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("no cached {missing} output for this config; run `pseudoscore {}` first", missing.command())]
    MissingUpstream { missing: Stage },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: unreadable artifact: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

pub(crate) trait InStage<T> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> InStage<T> for Result<T, E> {
    fn in_stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}
