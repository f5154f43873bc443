//! Training pipeline: cross-validated optimization, evaluation metrics,
//! and a synthetic corpus generator for end-to-end checks.

pub mod auc;
pub mod loss;
pub mod synthetic;
pub mod trainer;

pub use auc::auc;
pub use loss::batch_loss;
pub use synthetic::{generate_synthetic, SynthSpec};
pub use trainer::{
    fold_artifacts, run_cv, train_fold, EvalReport, FoldArtifacts, FoldOutcome, TrainConfig,
};

use thiserror::Error;

use crate::autodiff::DiffError;
use crate::graph::GraphError;
use crate::ingest::IngestError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("labels contain a single class ({positives} positive, {negatives} negative); AUC undefined")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("metric failure: {0}")]
    Metric(String),
    #[error("loss became non-finite at fold {fold} epoch {epoch} batch {batch}")]
    NonFiniteLoss {
        fold: usize,
        epoch: usize,
        batch: usize,
    },
    #[error("invalid training config: {0}")]
    BadConfig(String),
}
