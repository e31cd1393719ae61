//! Layers and the audio, lyrics and fusion model builders.

mod init;
mod layers;
mod model;
mod recurrent;

use std::fmt;
use std::str::FromStr;

pub use layers::{Layer, RecurrentParams, BATCHNORM_EPS};
pub use model::{
    build_audio_convnet, build_fusion_model, build_lyrics_model, Architecture, Branch, BuildOptions, ModelGraph,
};
pub use recurrent::{GruCell, LstmCell};

use crate::checkpoint::CheckpointError;
use crate::tensor::TensorError;

#[derive(Debug)]
pub enum ModelError {
    Tensor(TensorError),
    InvalidSpec(String),
    UnknownVariant(String),
    InputArity { expected: usize, got: usize },
    InputShape { branch: usize, expected: Vec<usize>, got: Vec<usize> },
    Checkpoint(CheckpointError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tensor(e) => write!(f, "{e}"),
            Self::InvalidSpec(m) => write!(f, "invalid layer spec: {m}"),
            Self::UnknownVariant(v) => write!(f, "unknown model variant {v:?}"),
            Self::InputArity { expected, got } => {
                write!(f, "model takes {expected} input(s), got {got}")
            }
            Self::InputShape { branch, expected, got } => write!(
                f,
                "input {branch} has per-item shape {got:?}, model expects {expected:?}"
            ),
            Self::Checkpoint(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

impl From<CheckpointError> for ModelError {
    fn from(e: CheckpointError) -> Self {
        Self::Checkpoint(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(ModelError::InvalidSpec(format!("unknown activation {other:?}"))),
        }
    }
}

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Temporal convolution over `[channels, time]`.
    Conv1d { maps: usize, kernel: usize, stride: usize },
    /// Square-kernel convolution over `[channels, height, width]`.
    Conv2d { maps: usize, kernel: usize, stride: usize },
    MaxPool1d { size: usize, stride: usize },
    MaxPool2d { size: usize, stride: usize },
    BatchNorm,
    Activation(Activation),
    Flatten,
    /// `[height, width] -> [1, height, width]`.
    AddChannel,
    /// `[channels, height, width] -> [channels * height, width]`: the width
    /// axis stays time, everything else becomes per-step features.
    FoldToSequence,
    Dense { units: usize },
    Dropout { p: f64 },
    Lstm { units: usize, return_sequences: bool },
    Gru { units: usize, return_sequences: bool },
    BiLstm { units: usize },
    /// Where the branches of a multi-input model are concatenated.
    ConcatPoint,
    /// Mean over the time axis of `[features, time]`, ignoring padding.
    MeanEmbed,
}

/// Audio model input: mel bands x frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioGeometry {
    pub bands: usize,
    pub frames: usize,
}

impl Default for AudioGeometry {
    fn default() -> Self {
        Self {
            bands: 40,
            frames: 1292,
        }
    }
}

/// Lyrics model input: embedding dimension x words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LyricsGeometry {
    pub dims: usize,
    pub words: usize,
}

impl Default for LyricsGeometry {
    fn default() -> Self {
        Self { dims: 100, words: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LyricsVariant {
    Gru,
    Lstm,
    BiLstm,
    TwoLstms,
    ConvLstm,
    TwoConvTwoLstms,
}

impl LyricsVariant {
    pub const ALL: [LyricsVariant; 6] = [
        Self::Gru,
        Self::Lstm,
        Self::BiLstm,
        Self::TwoLstms,
        Self::ConvLstm,
        Self::TwoConvTwoLstms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gru => "GRU",
            Self::Lstm => "LSTM",
            Self::BiLstm => "biLSTM",
            Self::TwoLstms => "2LSTMs",
            Self::ConvLstm => "ConvNet+LSTM",
            Self::TwoConvTwoLstms => "2ConvNets+2LSTMs",
        }
    }
}

impl fmt::Display for LyricsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LyricsVariant {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    AudioConvNet,
    Lyrics(LyricsVariant),
    /// Mid-level fusion with the given lyrics branch.
    Fusion(LyricsVariant),
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AudioConvNet => f.write_str("audio:ConvNet"),
            Self::Lyrics(v) => write!(f, "lyrics:{v}"),
            Self::Fusion(v) => write!(f, "bimodal:{v}"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("audio", m)) if m.eq_ignore_ascii_case("convnet") => Ok(Self::AudioConvNet),
            Some(("lyrics", v)) => Ok(Self::Lyrics(v.parse()?)),
            Some(("bimodal", v)) => Ok(Self::Fusion(v.parse()?)),
            _ => Err(ModelError::UnknownVariant(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests;
