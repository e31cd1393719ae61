use num_complex::Complex64;

use super::fft::{ifft, rfft};
use super::{AudioClip, DspError, FRAME_LEN, SAMPLE_RATE};

pub const LOWPASS_HZ: f64 = 16_000.0;
pub const QUANT_LEVELS: f64 = 256.0;

/// Stand-in for a lossy codec round trip. Each 1024-sample block is
/// transformed, bins above 16 kHz are zeroed, and magnitudes are rounded
/// to 256 levels between zero and the block's largest magnitude (phases
/// kept). Output has the input's length and rate.
pub fn lossy_simulate(clip: &AudioClip) -> Result<AudioClip, DspError> {
    clip.require_rate(SAMPLE_RATE)?;
    let bin_hz = SAMPLE_RATE as f64 / FRAME_LEN as f64;
    let cutoff = (LOWPASS_HZ / bin_hz).floor() as usize;
    let mut out = Vec::with_capacity(clip.len());
    for block in clip.samples.chunks(FRAME_LEN) {
        let mut spec = rfft(block, FRAME_LEN);
        for k in cutoff + 1..=FRAME_LEN - cutoff - 1 {
            spec[k] = Complex64::new(0.0, 0.0);
        }
        let peak = spec.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if peak > 0.0 {
            let step = peak / (QUANT_LEVELS - 1.0);
            for c in spec.iter_mut() {
                let (r, theta) = c.to_polar();
                *c = Complex64::from_polar((r / step).round() * step, theta);
            }
        }
        ifft(&mut spec);
        out.extend(spec.iter().take(block.len()).map(|c| c.re));
    }
    AudioClip::new(out, clip.sample_rate)
}
