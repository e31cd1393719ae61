use super::{AudioClip, DspError};

/// Linear interpolation at fractional position `pos`; zero beyond the end.
fn interp(x: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    let a = x.get(i).copied().unwrap_or(0.0);
    if frac == 0.0 {
        return a;
    }
    let b = x.get(i + 1).copied().unwrap_or(0.0);
    a + frac * (b - a)
}

/// `n_out` reads of `x` at positions `0, step, 2 step, ...`.
fn stretch(x: &[f64], step: f64, n_out: usize) -> Vec<f64> {
    (0..n_out).map(|i| interp(x, i as f64 * step)).collect()
}

/// Linear-interpolation resampling to `target_rate`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, DspError> {
    if target_rate == 0 {
        return Err(DspError::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let step = clip.sample_rate as f64 / target_rate as f64;
    let n_out = ((clip.len() as f64 / step).round() as usize).max(1);
    AudioClip::new(stretch(&clip.samples, step, n_out), target_rate)
}

/// Raises pitch by `semitones` by reading the signal `2^(semitones/12)`
/// times faster and keeping the original rate; duration scales inversely.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip, DspError> {
    if !semitones.is_finite() || semitones.abs() > 12.0 {
        return Err(DspError::InvalidArgument(format!("pitch shift of {semitones} semitones outside [-12, 12]")));
    }
    if semitones == 0.0 {
        return Ok(clip.clone());
    }
    let step = 2f64.powf(semitones / 12.0);
    let n_out = ((clip.len() as f64 / step).round() as usize).max(1);
    AudioClip::new(stretch(&clip.samples, step, n_out), clip.sample_rate)
}
