//! End-to-end run on a generated corpus: split, embeddings, the three deep
//! models, track-level evaluation and late fusion.

use std::time::Instant;

use crate::dataset::{
    artist_disjoint_split, normalize_split, LyricsEmbedder, Mode, NormSource, SegmentConfig, Split, SplitName,
};
use crate::eval::{fusion_grid_search, FusionReport, PredictionSet, WeightSelection};
use crate::nn::{AudioGeometry, BuildOptions, LyricsGeometry, LyricsVariant, ModelGraph, ModelKind};
use crate::synth::{generate_corpus, SynthConfig};
use crate::text::{tokenize, train_word2vec, Word2VecConfig};
use crate::train::{build_training_segments, predict_records, train, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: SynthConfig,
    pub segments: SegmentConfig,
    pub embedding_dims: usize,
    pub lyrics_variant: LyricsVariant,
    pub train: TrainConfig,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    /// 150 tracks, 1.5 s audio extracts (65 mel frames) and 16-word
    /// windows of 16-dimensional embeddings.
    fn default() -> Self {
        Self {
            corpus: SynthConfig {
                tracks: 150,
                ..SynthConfig::default()
            },
            segments: SegmentConfig {
                segment_seconds: 1.5,
                words: 16,
                ..SegmentConfig::default()
            },
            embedding_dims: 16,
            lyrics_variant: LyricsVariant::ConvLstm,
            train: TrainConfig {
                epochs: 12,
                patience: 4,
                ..TrainConfig::default()
            },
            dropout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutcome {
    pub mode: Mode,
    pub kind: ModelKind,
    /// Validation and test predictions.
    pub predictions: PredictionSet,
    /// Test R² (valence, arousal).
    pub test_r2: [f64; 2],
    pub history: TrainHistory,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub audio: ModelOutcome,
    pub lyrics: ModelOutcome,
    pub bimodal: ModelOutcome,
    /// Audio weight chosen on validation, R² reported on test.
    pub late_fusion: FusionReport,
}

fn run_model(
    kind: ModelKind,
    mode: Mode,
    split: &Split,
    corpus_audio: &std::collections::BTreeMap<String, crate::dsp::AudioClip>,
    embedder: &LyricsEmbedder,
    cfg: &ExperimentConfig,
) -> Result<ModelOutcome, TrainError> {
    let start = Instant::now();
    let seg = &cfg.segments;
    let opts = BuildOptions {
        audio: AudioGeometry {
            bands: crate::dsp::N_MELS,
            frames: seg.audio_frames(),
        },
        lyrics: LyricsGeometry {
            dims: cfg.embedding_dims,
            words: seg.words,
        },
        dropout: cfg.dropout,
        seed: cfg.seed,
        ..BuildOptions::default()
    };
    let mut model = ModelGraph::build(kind, &opts)?;
    let mut audio = |r: &crate::dataset::TrackRecord| Ok(corpus_audio.get(&r.msd_id).cloned());
    let emb = mode.uses_lyrics().then_some(embedder);
    let train_set = build_training_segments(&split.train, &mut audio, emb, mode, seg, cfg.seed)?;
    let valid_set = build_training_segments(&split.valid, &mut audio, emb, mode, seg, cfg.seed ^ 1)?;
    let tc = TrainConfig {
        mode,
        model: kind,
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let history = train(&mut model, &train_set, &valid_set, &tc)?;
    let mut rows = predict_records(&model, &split.valid, SplitName::Valid, &mut audio, emb, mode, seg)?.rows;
    rows.extend(predict_records(&model, &split.test, SplitName::Test, &mut audio, emb, mode, seg)?.rows);
    let predictions = PredictionSet::new(rows);
    let test_r2 = predictions.split(SplitName::Test).r2()?;
    Ok(ModelOutcome {
        mode,
        kind,
        predictions,
        test_r2,
        history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_synthetic_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, TrainError> {
    let corpus = generate_corpus(&SynthConfig {
        seed: cfg.seed,
        ..cfg.corpus.clone()
    })?;
    let mut split = artist_disjoint_split(&corpus.records(), [0.6, 0.2, 0.2], cfg.seed)?;
    normalize_split(&mut split, NormSource::Train)?;
    let sentences: Vec<Vec<String>> =
        split.train.iter().map(|r| tokenize(r.lyrics.as_deref().unwrap_or(""))).collect();
    let w2v = train_word2vec(
        &sentences,
        &Word2VecConfig {
            dims: cfg.embedding_dims,
            seed: cfg.seed,
            ..Word2VecConfig::default()
        },
    )
    .map_err(|e| TrainError::Dataset(e.into()))?;
    let embedder = LyricsEmbedder {
        vocab: w2v.vocab,
        embeddings: w2v.embeddings,
    };
    let audio = corpus.audio();
    let v = cfg.lyrics_variant;
    let audio_run = run_model(ModelKind::AudioConvNet, Mode::Audio, &split, &audio, &embedder, cfg)?;
    let lyrics_run = run_model(ModelKind::Lyrics(v), Mode::Lyrics, &split, &audio, &embedder, cfg)?;
    let bimodal_run = run_model(ModelKind::Fusion(v), Mode::Bimodal, &split, &audio, &embedder, cfg)?;
    let late_fusion = fusion_grid_search(&audio_run.predictions, &lyrics_run.predictions, WeightSelection::Validation)?;
    Ok(ExperimentResult {
        audio: audio_run,
        lyrics: lyrics_run,
        bimodal: bimodal_run,
        late_fusion,
    })
}
