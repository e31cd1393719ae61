use std::fs::File;
use std::io::{self, BufReader};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, DspError};

fn map_err(e: hound::Error) -> DspError {
    match e {
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            DspError::MalformedHeader("file ends inside the header".into())
        }
        hound::Error::IoError(e) => DspError::Io(e),
        hound::Error::FormatError(m) => DspError::MalformedHeader(m.into()),
        hound::Error::Unsupported => DspError::UnsupportedEncoding("format not supported by the decoder".into()),
        hound::Error::TooWide => DspError::UnsupportedEncoding("sample width exceeds 32 bits".into()),
        other => DspError::MalformedHeader(other.to_string()),
    }
}

/// Reads 16-bit integer or 32-bit float PCM, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, DspError> {
    let file = BufReader::new(File::open(path)?);
    // Any read failure while parsing the header means the header is bad.
    let reader = WavReader::new(file).map_err(|e| match e {
        hound::Error::IoError(e) => DspError::MalformedHeader(e.to_string()),
        other => map_err(other),
    })?;
    let spec = reader.spec();
    let raw: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(map_err)?,
        (fmt, bits) => {
            return Err(DspError::UnsupportedEncoding(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(DspError::MalformedHeader("zero channels".into()));
    }
    let mono: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

/// Writes mono 32-bit float PCM, which round-trips `f32`-representable samples exactly.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), DspError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(map_err)?;
    for &s in &clip.samples {
        w.write_sample(s as f32).map_err(map_err)?;
    }
    w.finalize().map_err(map_err)
}
