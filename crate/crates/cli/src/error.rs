use std::path::PathBuf;

use ctcssl::checkpoint::CheckpointError;
use ctcssl::corpus::CorpusError;
use ctcssl::kd::KdError;
use ctcssl::manifest::ManifestError;
use ctcssl::metrics::MetricsError;
use ctcssl::selection::SelectionError;
use ctcssl::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Kd(#[from] KdError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("stage {stage} failed for seed {seed}: {message}")]
    Stage { stage: String, seed: u64, message: String },
    #[error("cannot write {}: {message}", path.display())]
    Output { path: PathBuf, message: String },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// Stable machine-readable category printed on failure.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::MissingFile(_) => "missing-file",
            CliError::Config(_) | CliError::Corpus(_) => "config",
            CliError::Manifest(_) => "manifest",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Train(_) | CliError::Kd(_) => "training",
            CliError::Selection(_) => "selection",
            CliError::Metrics(_) | CliError::Data(_) => "data",
            CliError::Stage { .. } => "stage",
            CliError::Output { .. } => "io",
        }
    }

    /// `error[<category>]: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.category())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
