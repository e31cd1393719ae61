use std::fmt;
use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stable_hash, DatasetError, Mode, MoodLabel, TrackRecord};
use crate::dsp::{lossy_simulate, mel_spectrogram, pitch_shift, resample, AudioClip, FRAME_LEN, SAMPLE_RATE};
use crate::tensor::Tensor;
use crate::text::{embed_sequence, tokenize, EmbeddingMatrix, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augmentation {
    Original,
    PitchUp,
    PitchDown,
    Lossy,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::Original,
        Augmentation::PitchUp,
        Augmentation::PitchDown,
        Augmentation::Lossy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Original => "original",
            Augmentation::PitchUp => "pitch_up",
            Augmentation::PitchDown => "pitch_down",
            Augmentation::Lossy => "lossy",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentConfig {
    pub segment_seconds: f64,
    pub extracts: usize,
    pub words: usize,
    /// Magnitude of the pitch-up / pitch-down variants.
    pub pitch_semitones: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            segment_seconds: 30.0,
            extracts: 7,
            words: 50,
            pitch_semitones: 1.0,
        }
    }
}

impl SegmentConfig {
    pub fn segment_samples(&self) -> usize {
        (self.segment_seconds * SAMPLE_RATE as f64).round() as usize
    }

    /// Mel frames of one extract (the last partial frame counts).
    pub fn audio_frames(&self) -> usize {
        self.segment_samples().div_ceil(FRAME_LEN)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if !(self.segment_seconds > 0.0) || self.extracts == 0 || self.words == 0 || self.segment_samples() == 0 {
            return Err(DatasetError::InvalidArgument(
                "segment length, extract count and words per segment must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Vocabulary plus vectors, used to turn lyric tokens into `[dims, words]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyricsEmbedder {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
}

impl LyricsEmbedder {
    pub fn embed(&self, tokens: &[String], words: usize) -> Result<Tensor, DatasetError> {
        Ok(embed_sequence(tokens, &self.vocab, &self.embeddings, words)?)
    }
}

/// One model input item cut from a track.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSample {
    pub track_id: String,
    pub augmentation: Augmentation,
    /// `[40, frames]` log-mel extract.
    pub audio: Option<Tensor>,
    /// `[dims, words]` embedded lyric segment.
    pub lyrics: Option<Tensor>,
    pub label: MoodLabel,
}

impl SegmentSample {
    /// Model inputs in branch order (audio first).
    pub fn inputs(&self) -> Vec<&Tensor> {
        self.audio.iter().chain(self.lyrics.iter()).collect()
    }
}

/// Token range `[floor(start N / d), floor(end N / d))` proportional to the
/// segment's position in the audio.
pub fn align_segment(duration: f64, segment: (f64, f64), tokens: usize) -> Result<Range<usize>, DatasetError> {
    let (start, end) = segment;
    if !(0.0 <= start && start < end && end <= duration) {
        return Err(DatasetError::InvalidInterval { start, end, duration });
    }
    let n = tokens as f64;
    let at = |t: f64| {
        if t == duration {
            return tokens;
        }
        ((t * n / duration).floor() as usize).min(tokens)
    };
    Ok(at(start)..at(end))
}

/// `k` start offsets in `0..positions`: distinct when there are enough of
/// them, otherwise drawn with replacement. Sorted.
fn random_starts(rng: &mut ChaCha8Rng, positions: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = if positions >= k {
        sample(rng, positions, k).into_vec()
    } else {
        (0..k).map(|_| rng.gen_range(0..positions)).collect()
    };
    v.sort_unstable();
    v
}

/// `k` evenly spaced offsets covering `0..positions`.
fn even_starts(positions: usize, k: usize) -> Vec<usize> {
    let last = positions.saturating_sub(1);
    if k == 1 {
        return vec![last / 2];
    }
    (0..k)
        .map(|i| ((i * last) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

fn fit_length(mut samples: Vec<f64>, n: usize) -> Vec<f64> {
    samples.resize(n, 0.0);
    samples
}

struct Track<'a> {
    id: &'a str,
    label: MoodLabel,
    audio: Option<AudioClip>,
    tokens: Option<Vec<String>>,
}

impl<'a> Track<'a> {
    fn prepare(record: &'a TrackRecord, audio: Option<&AudioClip>, embedder: Option<&LyricsEmbedder>, mode: Mode) -> Result<Self, DatasetError> {
        let missing = |modality| DatasetError::MissingModality {
            track: record.msd_id.clone(),
            modality,
        };
        let audio = if mode.uses_audio() {
            let clip = audio.ok_or_else(|| missing("audio"))?;
            Some(if clip.sample_rate == SAMPLE_RATE { clip.clone() } else { resample(clip, SAMPLE_RATE)? })
        } else {
            None
        };
        let tokens = if mode.uses_lyrics() {
            embedder.ok_or_else(|| missing("lyric embeddings"))?;
            let tokens = tokenize(record.lyrics.as_deref().ok_or_else(|| missing("lyrics"))?);
            if tokens.is_empty() {
                return Err(missing("lyric tokens"));
            }
            Some(tokens)
        } else {
            None
        };
        Ok(Self {
            id: &record.msd_id,
            label: record.label,
            audio,
            tokens,
        })
    }

    fn audio_positions(&self, cfg: &SegmentConfig) -> usize {
        self.audio.as_ref().map_or(1, |c| c.len().saturating_sub(cfg.segment_samples()) + 1)
    }

    fn token_positions(&self, cfg: &SegmentConfig) -> usize {
        self.tokens.as_ref().map_or(1, |t| t.len().saturating_sub(cfg.words) + 1)
    }

    /// Log-mel of the extract starting at sample `start` under `aug`.
    fn audio_extract(&self, start: usize, aug: Augmentation, cfg: &SegmentConfig) -> Result<Tensor, DatasetError> {
        let clip = self.audio.as_ref().expect("audio prepared");
        let n = cfg.segment_samples();
        let samples = match aug {
            Augmentation::Original => clip.slice(start, n).samples,
            Augmentation::Lossy => lossy_simulate(&clip.slice(start, n))?.samples,
            Augmentation::PitchUp | Augmentation::PitchDown => {
                let st = if aug == Augmentation::PitchUp { cfg.pitch_semitones } else { -cfg.pitch_semitones };
                // Read enough source that the shifted extract still fills the segment.
                let src = (n as f64 * 2f64.powf(st / 12.0)).ceil() as usize;
                pitch_shift(&clip.slice(start, src), st)?.samples
            }
        };
        let padded = AudioClip::new(fit_length(samples, n), SAMPLE_RATE)?;
        Ok(mel_spectrogram(&padded)?.values)
    }

    /// Lyric tokens aligned with the audio extract at `start`, truncated to
    /// the segment word count.
    fn aligned_tokens(&self, start: usize, cfg: &SegmentConfig) -> Result<&[String], DatasetError> {
        let clip = self.audio.as_ref().expect("audio prepared");
        let tokens = self.tokens.as_ref().expect("tokens prepared");
        let rate = clip.sample_rate as f64;
        let t0 = start as f64 / rate;
        let t1 = ((start + cfg.segment_samples()) as f64 / rate).min(clip.duration());
        let range = align_segment(clip.duration(), (t0, t1), tokens.len())?;
        let end = range.end.min(range.start + cfg.words);
        Ok(&tokens[range.start..end])
    }

    fn token_window(&self, start: usize, cfg: &SegmentConfig) -> &[String] {
        let tokens = self.tokens.as_ref().expect("tokens prepared");
        &tokens[start..(start + cfg.words).min(tokens.len())]
    }

    fn sample(&self, aug: Augmentation, audio: Option<Tensor>, lyrics: Option<Tensor>) -> SegmentSample {
        SegmentSample {
            track_id: self.id.to_string(),
            augmentation: aug,
            audio,
            lyrics,
            label: self.label,
        }
    }

    fn segments(&self, starts: &[usize], augs: &[Augmentation], mode: Mode, embedder: Option<&LyricsEmbedder>, cfg: &SegmentConfig) -> Result<Vec<SegmentSample>, DatasetError> {
        let mut out = Vec::with_capacity(starts.len() * augs.len());
        for &start in starts {
            match mode {
                Mode::Lyrics => {
                    let lyr = embedder.expect("checked").embed(self.token_window(start, cfg), cfg.words)?;
                    out.push(self.sample(Augmentation::Original, None, Some(lyr)));
                }
                Mode::Audio | Mode::Bimodal => {
                    let lyr = match mode {
                        Mode::Bimodal => Some(embedder.expect("checked").embed(self.aligned_tokens(start, cfg)?, cfg.words)?),
                        _ => None,
                    };
                    for &aug in augs {
                        out.push(self.sample(aug, Some(self.audio_extract(start, aug, cfg)?), lyr.clone()));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Training samples of one track: `extracts` random extracts, each in all
/// four audio variants for audio and bimodal modes (lyrics repeated across
/// a segment's variants), or `extracts` plain word windows for lyrics mode.
/// Randomness depends only on `seed` and the track id.
pub fn make_training_segments(
    record: &TrackRecord,
    audio: Option<&AudioClip>,
    embedder: Option<&LyricsEmbedder>,
    mode: Mode,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<Vec<SegmentSample>, DatasetError> {
    cfg.validate()?;
    let track = Track::prepare(record, audio, embedder, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&record.msd_id));
    let positions = match mode {
        Mode::Lyrics => track.token_positions(cfg),
        _ => track.audio_positions(cfg),
    };
    let starts = random_starts(&mut rng, positions, cfg.extracts);
    track.segments(&starts, &Augmentation::ALL, mode, embedder, cfg)
}

/// Inference samples: `extracts` evenly spaced, unaugmented segments.
pub fn inference_segments(
    record: &TrackRecord,
    audio: Option<&AudioClip>,
    embedder: Option<&LyricsEmbedder>,
    mode: Mode,
    cfg: &SegmentConfig,
) -> Result<Vec<SegmentSample>, DatasetError> {
    cfg.validate()?;
    let track = Track::prepare(record, audio, embedder, mode)?;
    let positions = match mode {
        Mode::Lyrics => track.token_positions(cfg),
        _ => track.audio_positions(cfg),
    };
    track.segments(&even_starts(positions, cfg.extracts), &[Augmentation::Original], mode, embedder, cfg)
}
