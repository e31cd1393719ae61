//! Audio decoding, mel spectrograms, classical spectral descriptors and
//! augmentation transforms.

mod augment;
mod cache;
mod features;
pub mod fft;
mod mel;
mod resample;
mod wav;

use std::fmt;
use std::io;

pub use augment::lossy_simulate;
pub use cache::{read_feature_cache, write_feature_cache, FeatureRecord};
pub use features::{classical_audio_features, frame_descriptors, FrameDescriptors, CLASSICAL_FEATURE_NAMES};
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, power_frames, MelSpectrogram};
pub use resample::{pitch_shift, resample};
pub use wav::{read_wav, write_wav};

pub const SAMPLE_RATE: u32 = 44_100;
pub const FRAME_LEN: usize = 1024;
pub const N_BINS: usize = FRAME_LEN / 2 + 1;
pub const N_MELS: usize = 40;
pub const N_MFCC: usize = 13;

#[derive(Debug)]
pub enum DspError {
    MalformedHeader(String),
    UnsupportedEncoding(String),
    EmptyAudio,
    WrongSampleRate { expected: u32, got: u32 },
    InvalidArgument(String),
    MalformedCache(String),
    Io(io::Error),
}

impl fmt::Display for DspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MalformedHeader(m) => write!(f, "malformed WAV header: {m}"),
            Self::UnsupportedEncoding(m) => write!(f, "unsupported WAV encoding: {m}"),
            Self::EmptyAudio => write!(f, "audio has no samples"),
            Self::WrongSampleRate { expected, got } => {
                write!(f, "expected {expected} Hz audio, got {got} Hz")
            }
            Self::InvalidArgument(m) => write!(f, "{m}"),
            Self::MalformedCache(m) => write!(f, "malformed feature cache: {m}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DspError {}

impl From<io::Error> for DspError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if samples.is_empty() {
            return Err(DspError::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(DspError::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, start + len)` seconds-free slice; clamps at the end.
    pub fn slice(&self, start: usize, len: usize) -> AudioClip {
        let end = (start + len).min(self.samples.len());
        let start = start.min(end);
        AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn require_rate(&self, rate: u32) -> Result<(), DspError> {
        if self.sample_rate != rate {
            return Err(DspError::WrongSampleRate {
                expected: rate,
                got: self.sample_rate,
            });
        }
        Ok(())
    }
}

/// `n` samples of `amp * sin(2 pi f t)` at `rate`.
pub fn sine(freq: f64, amp: f64, n: usize, rate: u32) -> AudioClip {
    let w = 2.0 * std::f64::consts::PI * freq / rate as f64;
    AudioClip {
        samples: (0..n).map(|i| amp * (w * i as f64).sin()).collect(),
        sample_rate: rate,
    }
}
