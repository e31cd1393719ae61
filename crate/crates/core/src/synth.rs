//! Generated corpus with known audio and lyric mood factors.
//!
//! Each track has an energy `e` in [-1, 1] (tone loudness and note rate),
//! a register `m` of -1 (low notes) or +1 (high notes), and a lyric
//! sentiment `s` in [-1, 1] (share of positive vs negative words). Labels
//! are `arousal = e` and `valence = m s`, plus noise, so arousal is audible
//! while valence needs both modalities.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    write_lexicon_csv, write_lyrics_csv, write_mood_tags, write_tag_file, write_track_list, DatasetError, Lexicon, LexiconEntry,
    MoodLabel, TrackRecord,
};
use crate::dsp::{write_wav, AudioClip, SAMPLE_RATE};

pub const POSITIVE_WORDS: [&str; 8] = ["sunshine", "love", "joy", "smile", "dance", "bright", "golden", "laugh"];
pub const NEGATIVE_WORDS: [&str; 8] = ["tears", "cold", "alone", "broken", "grey", "lost", "cry", "darkness"];
pub const FILLER_WORDS: [&str; 16] = [
    "the", "we", "walk", "through", "night", "and", "day", "road", "city", "you", "i", "know", "again", "home", "time",
    "river",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub tracks: usize,
    pub tracks_per_artist: usize,
    pub seconds: f64,
    pub lyric_words: usize,
    /// Fraction of lyric tokens drawn from the sentiment lists.
    pub sentiment_rate: f64,
    /// Standard deviation of the label noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tracks: 200,
            tracks_per_artist: 2,
            seconds: 4.0,
            lyric_words: 96,
            sentiment_rate: 0.4,
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrack {
    pub record: TrackRecord,
    pub audio: AudioClip,
    pub energy: f64,
    pub register: f64,
    pub sentiment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub tracks: Vec<SynthTrack>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn tones(energy: f64, register: f64, seconds: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let rate = SAMPLE_RATE as f64;
    let n = (seconds * rate).round() as usize;
    let amp = 0.2 * 10f64.powf(0.5 * energy);
    let notes_per_second = 2f64.powf(1.0 + energy);
    let base = if register > 0.0 { 880.0 } else { 110.0 };
    let step = (rate / notes_per_second).round() as usize;
    let mut samples: Vec<f64> = (0..n).map(|_| 1e-4 * gaussian(rng)).collect();
    let mut start = rng.gen_range(0..step);
    while start < n {
        // A note from the register's pentatonic octave.
        let degree = [0.0, 2.0, 4.0, 7.0, 9.0][rng.gen_range(0..5)];
        let f = base * 2f64.powf(degree / 12.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (k, s) in samples[start..(start + step).min(n)].iter_mut().enumerate() {
            let t = k as f64 / rate;
            *s += amp * (-6.0 * t).exp() * (2.0 * PI * f * t + phase).sin();
        }
        start += step;
    }
    AudioClip {
        samples,
        sample_rate: SAMPLE_RATE,
    }
}

fn lyrics(sentiment: f64, words: usize, rate: f64, rng: &mut ChaCha8Rng) -> String {
    let p_pos = 0.5 * (1.0 + sentiment);
    let tokens: Vec<&str> = (0..words)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                let list = if rng.gen::<f64>() < p_pos { &POSITIVE_WORDS } else { &NEGATIVE_WORDS };
                *list.choose(rng).expect("nonempty")
            } else {
                *FILLER_WORDS.choose(rng).expect("nonempty")
            }
        })
        .collect();
    tokens.chunks(8).map(|l| l.join(" ")).collect::<Vec<_>>().join("\n")
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, DatasetError> {
    if cfg.tracks == 0 || cfg.tracks_per_artist == 0 || !(cfg.seconds > 0.0) || cfg.lyric_words == 0 {
        return Err(DatasetError::InvalidArgument("synthetic corpus needs tracks, artists, audio and lyrics".into()));
    }
    if !(0.0..=1.0).contains(&cfg.sentiment_rate) || !(cfg.noise >= 0.0) {
        return Err(DatasetError::InvalidArgument("sentiment rate must lie in [0, 1], noise non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracks = Vec::with_capacity(cfg.tracks);
    for i in 0..cfg.tracks {
        let energy = rng.gen_range(-1.0..1.0);
        let register = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let sentiment = rng.gen_range(-1.0..1.0);
        let audio = tones(energy, register, cfg.seconds, &mut rng);
        let text = lyrics(sentiment, cfg.lyric_words, cfg.sentiment_rate, &mut rng);
        let label = MoodLabel::new(
            register * sentiment + cfg.noise * gaussian(&mut rng),
            energy + cfg.noise * gaussian(&mut rng),
        );
        let mut record = TrackRecord::new(
            format!("TRSYN{i:05}"),
            format!("artist{:04}", i / cfg.tracks_per_artist),
            format!("song {i}"),
            label,
        );
        record.lyrics = Some(text);
        tracks.push(SynthTrack {
            record,
            audio,
            energy,
            register,
            sentiment,
        });
    }
    Ok(SynthCorpus { tracks })
}

impl SynthCorpus {
    pub fn records(&self) -> Vec<TrackRecord> {
        self.tracks.iter().map(|t| t.record.clone()).collect()
    }

    pub fn audio(&self) -> BTreeMap<String, AudioClip> {
        self.tracks.iter().map(|t| (t.record.msd_id.clone(), t.audio.clone())).collect()
    }

    /// Writes the inputs of the command-line pipeline: `audio/<id>.wav`,
    /// `tracks.csv` (`msd_id,artist,title`), `lyrics.csv`, `tags.csv`,
    /// `lexicon.csv` and `mood_tags.txt`. Each
    /// track carries one mood tag whose lexicon entry is its label, plus
    /// a genre tag outside the mood list.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        let audio_dir = dir.join("audio");
        fs::create_dir_all(&audio_dir).map_err(DatasetError::Io)?;
        let mut tags = BTreeMap::new();
        let mut lyrics = BTreeMap::new();
        let mut entries = Vec::new();
        for t in &self.tracks {
            let id = &t.record.msd_id;
            write_wav(audio_dir.join(format!("{id}.wav")), &t.audio)?;
            let tag = format!("mood_{}", id.to_lowercase());
            tags.insert(id.clone(), vec![tag.clone(), "synthpop".to_string()]);
            lyrics.insert(id.clone(), t.record.lyrics.clone().unwrap_or_default());
            entries.push(LexiconEntry {
                word: tag,
                valence: t.record.label.valence,
                arousal: t.record.label.arousal,
            });
        }
        let list: Vec<(String, String, String)> = self
            .tracks
            .iter()
            .map(|t| (t.record.msd_id.clone(), t.record.artist.clone(), t.record.title.clone()))
            .collect();
        write_track_list(&list, dir.join("tracks.csv"))?;
        let mood: Vec<String> = entries.iter().map(|e| e.word.clone()).collect();
        write_tag_file(&tags, dir.join("tags.csv"))?;
        write_lyrics_csv(&lyrics, dir.join("lyrics.csv"))?;
        write_lexicon_csv(&Lexicon::new(entries)?, dir.join("lexicon.csv"))?;
        write_mood_tags(&mood, dir.join("mood_tags.txt"))?;
        Ok(())
    }
}
