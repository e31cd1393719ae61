//! Feature-engineering baselines: ε-SVR on classical audio or lyric
//! features, and a random forest on mean word embeddings.

mod forest;
mod pipeline;
mod svr;
mod text_features;

use std::fmt;

pub use forest::{forest_fit, ForestModel, ForestOptions, Node, Tree};
pub use pipeline::{
    cbow_pipeline, classical_pipeline, ClassicalFeatures, ClassicalModel, Hyper, Standardizer, SvrGrid, SvrRegressor,
};
pub use svr::{dual_objective, kernel_matrix, svr_fit, Kernel, SvrModel, SvrOptions};
pub use text_features::{fit_text_features, TextFeatureExtractor, TextFeatureOptions, LEXICON_FEATURES, STYLE_FEATURES};

use crate::checkpoint::CheckpointError;
use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::tensor::TensorError;

#[derive(Debug)]
pub enum ClassicalError {
    InvalidData(String),
    DimensionMismatch { expected: usize, got: usize },
    NotConverged { iterations: usize, violation: f64 },
    EmptyCorpus,
    MissingFeatures(String),
    Format(String),
    Dataset(DatasetError),
    Eval(EvalError),
}

impl fmt::Display for ClassicalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidData(m) => write!(f, "{m}"),
            Self::DimensionMismatch { expected, got } => write!(f, "expected {expected} features, got {got}"),
            Self::NotConverged { iterations, violation } => {
                write!(f, "SMO stopped after {iterations} iterations with KKT violation {violation:.3e}")
            }
            Self::EmptyCorpus => write!(f, "no training documents"),
            Self::MissingFeatures(id) => write!(f, "no features for track {id}"),
            Self::Format(m) => write!(f, "model file: {m}"),
            Self::Dataset(e) => write!(f, "{e}"),
            Self::Eval(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ClassicalError {}

impl From<CheckpointError> for ClassicalError {
    fn from(e: CheckpointError) -> Self {
        Self::Format(e.to_string())
    }
}

impl From<TensorError> for ClassicalError {
    fn from(e: TensorError) -> Self {
        Self::Format(e.to_string())
    }
}

impl From<DatasetError> for ClassicalError {
    fn from(e: DatasetError) -> Self {
        Self::Dataset(e)
    }
}

impl From<EvalError> for ClassicalError {
    fn from(e: EvalError) -> Self {
        Self::Eval(e)
    }
}
