use std::fmt;
use std::io;

use moodnet::checkpoint::CheckpointError;
use moodnet::classical::ClassicalError;
use moodnet::dataset::DatasetError;
use moodnet::dsp::DspError;
use moodnet::eval::EvalError;
use moodnet::nn::ModelError;
use moodnet::text::TextError;
use moodnet::train::TrainError;

/// Failure of a command, printed as one `error[category]: message` line.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into().replace('\n', " "),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new("io", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new("data", message)
    }

    pub fn new_missing(track: &str, what: &str) -> Self {
        Self::new("missing-modality", format!("track {track} has no {what}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self.category {
            "usage" => 2,
            "io" => 3,
            "data" => 4,
            "missing-modality" => 5,
            "model" => 6,
            "train" => 7,
            "eval" => 8,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => e.into(),
            DatasetError::MissingModality { .. } => Self::new("missing-modality", e.to_string()),
            other => Self::new("data", other.to_string()),
        }
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        Self::new("data", e.to_string())
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        Self::new("data", e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::new("eval", e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::new("model", e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::new("model", e.to_string())
    }
}

impl From<ClassicalError> for CliError {
    fn from(e: ClassicalError) -> Self {
        match e {
            ClassicalError::Dataset(d) => d.into(),
            ClassicalError::Eval(v) => v.into(),
            ClassicalError::MissingFeatures(_) => Self::new("missing-modality", e.to_string()),
            other => Self::new("model", other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Io(e) => e.into(),
            other => Self::new("train", other.to_string()),
        }
    }
}
