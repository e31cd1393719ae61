//! Track records, mood labels from tags, normalization, artist-disjoint
//! splits and training/inference segmentation.

mod csvio;
mod segments;
mod split;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;

pub use csvio::{
    load_label_csv, load_lexicon_csv, load_lyrics_csv, load_mood_tags, load_norm_csv, load_tag_file, load_track_list,
    write_label_csv, write_lexicon_csv, write_lyrics_csv, write_mood_tags, write_norm_csv, write_tag_file,
    write_track_list,
};
pub use segments::{
    align_segment, inference_segments, make_training_segments, Augmentation, LyricsEmbedder, SegmentConfig,
    SegmentSample,
};
pub use split::{artist_disjoint_split, Split, SplitName};

use crate::dsp::DspError;
use crate::text::TextError;

#[derive(Debug)]
pub enum DatasetError {
    Io(io::Error),
    Csv(String),
    MissingColumn(String),
    NonNumeric { row: usize, column: String, value: String },
    DuplicateId(String),
    ZeroVariance { dimension: &'static str },
    InvalidInterval { start: f64, end: f64, duration: f64 },
    MissingModality { track: String, modality: &'static str },
    InvalidArgument(String),
    Dsp(DspError),
    Text(TextError),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "{e}"),
            Self::Csv(m) => write!(f, "csv: {m}"),
            Self::MissingColumn(c) => write!(f, "missing column `{c}`"),
            Self::NonNumeric { row, column, value } => {
                write!(f, "row {row}: column `{column}` is not a finite number: {value:?}")
            }
            Self::DuplicateId(id) => write!(f, "duplicate msd_id {id}"),
            Self::ZeroVariance { dimension } => write!(f, "{dimension} labels have zero variance"),
            Self::InvalidInterval { start, end, duration } => {
                write!(f, "segment [{start}, {end}) is not inside [0, {duration}]")
            }
            Self::MissingModality { track, modality } => write!(f, "track {track} has no {modality}"),
            Self::InvalidArgument(m) => write!(f, "{m}"),
            Self::Dsp(e) => write!(f, "{e}"),
            Self::Text(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DatasetError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            Self::Dsp(e) => Some(e),
            Self::Text(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for DatasetError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<csv::Error> for DatasetError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e.to_string())
    }
}

impl From<DspError> for DatasetError {
    fn from(e: DspError) -> Self {
        Self::Dsp(e)
    }
}

impl From<TextError> for DatasetError {
    fn from(e: TextError) -> Self {
        Self::Text(e)
    }
}

/// Which inputs a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Audio,
    Lyrics,
    Bimodal,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Audio, Mode::Lyrics, Mode::Bimodal];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Audio => "audio",
            Mode::Lyrics => "lyrics",
            Mode::Bimodal => "bimodal",
        }
    }

    pub fn uses_audio(self) -> bool {
        self != Mode::Lyrics
    }

    pub fn uses_lyrics(self) -> bool {
        self != Mode::Audio
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DatasetError::InvalidArgument(format!("unknown mode `{s}` (audio, lyrics, bimodal)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MoodLabel {
    pub valence: f64,
    pub arousal: f64,
}

impl MoodLabel {
    pub fn new(valence: f64, arousal: f64) -> Self {
        Self { valence, arousal }
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.valence, self.arousal]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconEntry {
    pub word: String,
    pub valence: f64,
    pub arousal: f64,
}

/// Word to (valence, arousal) map; words are stored lowercase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, MoodLabel>,
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = LexiconEntry>) -> Result<Self, DatasetError> {
        let mut map = HashMap::new();
        for e in entries {
            let word = e.word.trim().to_lowercase();
            if word.is_empty() || !e.valence.is_finite() || !e.arousal.is_finite() {
                return Err(DatasetError::InvalidArgument(format!(
                    "lexicon entry {:?} needs a word and finite values",
                    e.word
                )));
            }
            map.insert(word, MoodLabel::new(e.valence, e.arousal));
        }
        Ok(Self { entries: map })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<MoodLabel> {
        self.entries.get(word).copied()
    }

    /// Entries sorted by word.
    pub fn entries(&self) -> Vec<LexiconEntry> {
        let mut v: Vec<LexiconEntry> = self
            .entries
            .iter()
            .map(|(w, l)| LexiconEntry {
                word: w.clone(),
                valence: l.valence,
                arousal: l.arousal,
            })
            .collect();
        v.sort_by(|a, b| a.word.cmp(&b.word));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub msd_id: String,
    pub artist: String,
    pub title: String,
    pub label: MoodLabel,
    pub audio_path: Option<PathBuf>,
    pub lyrics: Option<String>,
    /// Columns not interpreted here, kept in file order for rewriting.
    pub extra: Vec<(String, String)>,
}

impl TrackRecord {
    pub fn new(msd_id: impl Into<String>, artist: impl Into<String>, title: impl Into<String>, label: MoodLabel) -> Self {
        Self {
            msd_id: msd_id.into(),
            artist: artist.into(),
            title: title.into(),
            label,
            audio_path: None,
            lyrics: None,
            extra: Vec::new(),
        }
    }
}

/// Mean (valence, arousal) over the tags that are both mood tags and in the
/// lexicon. Tags are compared trimmed and lowercased.
pub fn label_from_tags<S: AsRef<str>>(tags: &[S], lexicon: &Lexicon, mood_tags: &HashSet<String>) -> Option<MoodLabel> {
    let mut sum = MoodLabel::default();
    let mut n = 0usize;
    for tag in tags {
        let t = tag.as_ref().trim().to_lowercase();
        if !mood_tags.contains(&t) {
            continue;
        }
        if let Some(l) = lexicon.get(&t) {
            sum.valence += l.valence;
            sum.arousal += l.arousal;
            n += 1;
        }
    }
    (n > 0).then(|| MoodLabel::new(sum.valence / n as f64, sum.arousal / n as f64))
}

/// Where z-score statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormSource {
    #[default]
    Train,
    All,
}

impl FromStr for NormSource {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Self::Train),
            "all" => Ok(Self::All),
            _ => Err(DatasetError::InvalidArgument(format!("unknown normalization source `{s}` (train, all)"))),
        }
    }
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl NormStats {
    pub fn fit(labels: impl IntoIterator<Item = MoodLabel>) -> Result<Self, DatasetError> {
        let labels: Vec<[f64; 2]> = labels.into_iter().map(MoodLabel::as_array).collect();
        if labels.len() < 2 {
            return Err(DatasetError::InvalidArgument("normalization needs at least 2 labels".into()));
        }
        let n = labels.len() as f64;
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for d in 0..2 {
            mean[d] = labels.iter().map(|l| l[d]).sum::<f64>() / n;
            std[d] = (labels.iter().map(|l| (l[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
            if std[d] <= 1e-12 * mean[d].abs().max(1.0) {
                return Err(DatasetError::ZeroVariance {
                    dimension: ["valence", "arousal"][d],
                });
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, l: MoodLabel) -> MoodLabel {
        MoodLabel::new(
            (l.valence - self.mean[0]) / self.std[0],
            (l.arousal - self.mean[1]) / self.std[1],
        )
    }

    pub fn invert(&self, l: MoodLabel) -> MoodLabel {
        MoodLabel::new(
            l.valence * self.std[0] + self.mean[0],
            l.arousal * self.std[1] + self.mean[1],
        )
    }
}

/// Z-scores every record with statistics fit on the same records.
pub fn normalize_labels(mut records: Vec<TrackRecord>) -> Result<(Vec<TrackRecord>, NormStats), DatasetError> {
    let stats = NormStats::fit(records.iter().map(|r| r.label))?;
    for r in &mut records {
        r.label = stats.apply(r.label);
    }
    Ok((records, stats))
}

/// Z-scores all three splits with statistics from `source`.
pub fn normalize_split(split: &mut Split, source: NormSource) -> Result<NormStats, DatasetError> {
    let stats = match source {
        NormSource::Train => NormStats::fit(split.train.iter().map(|r| r.label))?,
        NormSource::All => NormStats::fit(split.all().map(|r| r.label))?,
    };
    for r in split.train.iter_mut().chain(&mut split.valid).chain(&mut split.test) {
        r.label = stats.apply(r.label);
    }
    Ok(stats)
}

/// FNV-1a, used to derive per-track seeds that do not depend on record order.
pub(crate) fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
