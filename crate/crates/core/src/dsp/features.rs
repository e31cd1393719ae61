use super::mel::{apply_filterbank, mel_filterbank, power_frames};
use super::{AudioClip, DspError, FRAME_LEN, N_MELS, N_MFCC, SAMPLE_RATE};

pub const ROLLOFF_FRACTION: f64 = 0.85;

/// Layout of the 32-dim vector returned by [`classical_audio_features`].
pub const CLASSICAL_FEATURE_NAMES: [&str; 32] = [
    "mfcc0_mean", "mfcc1_mean", "mfcc2_mean", "mfcc3_mean", "mfcc4_mean", "mfcc5_mean", "mfcc6_mean",
    "mfcc7_mean", "mfcc8_mean", "mfcc9_mean", "mfcc10_mean", "mfcc11_mean", "mfcc12_mean",
    "mfcc0_std", "mfcc1_std", "mfcc2_std", "mfcc3_std", "mfcc4_std", "mfcc5_std", "mfcc6_std",
    "mfcc7_std", "mfcc8_std", "mfcc9_std", "mfcc10_std", "mfcc11_std", "mfcc12_std",
    "flux_mean", "flux_std", "rolloff_mean", "rolloff_std", "centroid_mean", "centroid_std",
];

/// Per-frame descriptors, one entry per 1024-sample frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDescriptors {
    pub mfcc: Vec<[f64; N_MFCC]>,
    /// L2 norm of the positive magnitude change from the previous frame
    /// (the first frame compares against silence).
    pub flux: Vec<f64>,
    /// Frequency (Hz) of the first bin at which cumulative power reaches 85%.
    pub rolloff: Vec<f64>,
    /// Power-weighted mean frequency (Hz).
    pub centroid: Vec<f64>,
}

/// Orthonormal DCT-II coefficients `0..N_MFCC` of `x`.
fn dct2(x: &[f64]) -> [f64; N_MFCC] {
    let m = x.len() as f64;
    let mut out = [0.0; N_MFCC];
    for (k, o) in out.iter_mut().enumerate() {
        let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
        *o = scale
            * x.iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * m)).cos())
                .sum::<f64>();
    }
    out
}

pub fn frame_descriptors(clip: &AudioClip) -> Result<FrameDescriptors, DspError> {
    clip.require_rate(SAMPLE_RATE)?;
    let bank = mel_filterbank();
    let bin_hz = SAMPLE_RATE as f64 / FRAME_LEN as f64;
    let frames = power_frames(&clip.samples);
    let mut d = FrameDescriptors {
        mfcc: Vec::with_capacity(frames.len()),
        flux: Vec::with_capacity(frames.len()),
        rolloff: Vec::with_capacity(frames.len()),
        centroid: Vec::with_capacity(frames.len()),
    };
    let mut prev_mag = vec![0.0; frames.first().map_or(0, Vec::len)];
    for power in &frames {
        let logmel: Vec<f64> = apply_filterbank(&bank, power).into_iter().map(f64::ln_1p).collect();
        debug_assert_eq!(logmel.len(), N_MELS);
        d.mfcc.push(dct2(&logmel));

        let mag: Vec<f64> = power.iter().map(|p| p.sqrt()).collect();
        let flux = mag
            .iter()
            .zip(&prev_mag)
            .map(|(m, p)| (m - p).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        d.flux.push(flux);
        prev_mag = mag;

        let total: f64 = power.iter().sum();
        if total > 0.0 {
            let mut acc = 0.0;
            let k = power
                .iter()
                .position(|p| {
                    acc += p;
                    acc >= ROLLOFF_FRACTION * total
                })
                .unwrap_or(power.len() - 1);
            d.rolloff.push(k as f64 * bin_hz);
            let weighted: f64 = power.iter().enumerate().map(|(k, p)| k as f64 * bin_hz * p).sum();
            d.centroid.push(weighted / total);
        } else {
            d.rolloff.push(0.0);
            d.centroid.push(0.0);
        }
    }
    Ok(d)
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// 32-dim summary ordered as [`CLASSICAL_FEATURE_NAMES`]; standard
/// deviations are population (divide by frame count).
pub fn classical_audio_features(clip: &AudioClip) -> Result<Vec<f64>, DspError> {
    let d = frame_descriptors(clip)?;
    let mut means = Vec::with_capacity(N_MFCC);
    let mut stds = Vec::with_capacity(N_MFCC);
    for k in 0..N_MFCC {
        let (m, s) = mean_std(d.mfcc.iter().map(move |c| c[k]));
        means.push(m);
        stds.push(s);
    }
    let mut out = means;
    out.extend(stds);
    for series in [&d.flux, &d.rolloff, &d.centroid] {
        let (m, s) = mean_std(series.iter().copied());
        out.push(m);
        out.push(s);
    }
    Ok(out)
}
