use super::fft::rfft;
use super::{AudioClip, DspError, FRAME_LEN, N_BINS, N_MELS, SAMPLE_RATE};
use crate::tensor::Tensor;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Power spectra `|FFT|^2` (513 bins) of Hann-windowed, non-overlapping
/// 1024-sample frames; the last partial frame is zero-padded.
pub fn power_frames(samples: &[f64]) -> Vec<Vec<f64>> {
    let window = hann(FRAME_LEN);
    samples
        .chunks(FRAME_LEN)
        .map(|chunk| {
            let windowed: Vec<f64> = chunk.iter().zip(&window).map(|(x, w)| x * w).collect();
            rfft(&windowed, FRAME_LEN)[..N_BINS].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// 40 triangular filters with HTK mel spacing over 0 Hz to Nyquist,
/// evaluated at the 513 bin centre frequencies. Row-major `[40][513]`.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / FRAME_LEN as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..N_BINS)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `[40, n_frames]`, entries `log(1 + mel power)`.
    pub values: Tensor,
    pub frame_duration: f64,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.shape()[1]
    }
}

pub(crate) fn apply_filterbank(bank: &[Vec<f64>], power: &[f64]) -> Vec<f64> {
    bank.iter()
        .map(|filter| filter.iter().zip(power).map(|(w, p)| w * p).sum())
        .collect()
}

pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelSpectrogram, DspError> {
    clip.require_rate(SAMPLE_RATE)?;
    let bank = mel_filterbank();
    let frames = power_frames(&clip.samples);
    let n = frames.len();
    let mut values = vec![0.0; N_MELS * n];
    for (t, power) in frames.iter().enumerate() {
        for (m, e) in apply_filterbank(&bank, power).into_iter().enumerate() {
            values[m * n + t] = e.ln_1p();
        }
    }
    Ok(MelSpectrogram {
        values: Tensor::new(vec![N_MELS, n], values).expect("shape matches data"),
        frame_duration: FRAME_LEN as f64 / SAMPLE_RATE as f64,
    })
}
