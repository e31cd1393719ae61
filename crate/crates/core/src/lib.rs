//! Multimodal music mood regression.
//!
//! Predicts continuous valence and arousal for a track from its audio, its
//! lyrics, or both. The crate carries everything the pipeline needs without
//! external ML runtimes: a small reverse-mode autodiff engine, convolutional
//! and recurrent layers, audio DSP (mel spectrograms, classical spectral
//! descriptors, augmentation), word2vec embeddings, dataset construction from
//! mood tags, classical baselines (ε-SVR trained with SMO, random forests),
//! and the training / evaluation / fusion harness.

pub mod autodiff;
pub mod checkpoint;
pub mod classical;
pub mod dataset;
pub mod dsp;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod synth;
pub mod text;
pub mod train;
pub mod tensor;

pub use tensor::{Tensor, TensorError};
