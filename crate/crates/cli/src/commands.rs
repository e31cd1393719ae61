use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use moodnet::checkpoint::{self, NamedTensors};
use moodnet::classical::{cbow_pipeline, classical_pipeline, ClassicalFeatures, ClassicalModel};
use moodnet::dataset::{
    artist_disjoint_split, label_from_tags, load_label_csv, load_lexicon_csv, load_lyrics_csv, load_mood_tags,
    load_norm_csv, load_tag_file, load_track_list, normalize_split, write_label_csv, write_norm_csv, LyricsEmbedder,
    Mode, SegmentConfig, Split, SplitName, TrackRecord,
};
use moodnet::dsp::{self, classical_audio_features, read_feature_cache, read_wav, resample, write_feature_cache, AudioClip, FeatureRecord};
use moodnet::eval::{fusion_grid_search, PredictionSet, Report, ReportEntry, TrackPrediction};
use moodnet::nn::{AudioGeometry, BuildOptions, LyricsGeometry, LyricsVariant, ModelGraph, ModelKind};
use moodnet::synth::{generate_corpus, SynthConfig};
use moodnet::tensor::Tensor;
use moodnet::text::{mean_embedding, tokenize, train_word2vec, EmbeddingMatrix};
use moodnet::train::{build_training_segments, predict_track, train, TrainConfig, TrainError};

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;
use crate::Command;

const SEGMENTS_KEY: &str = "meta.segments";

pub fn dispatch(command: Command, cfg: Config) -> Result<(), CliError> {
    match command {
        Command::Config => {
            print!("{}", cfg.to_kv_string());
            Ok(())
        }
        Command::Synth {
            out,
            tracks,
            seconds,
            lyric_words,
        } => synth(&cfg, &out, tracks, seconds, lyric_words),
        Command::Features { audio_dir, out } => features(&cfg, &audio_dir, &out),
        Command::Embed {
            lyrics,
            restrict,
            dims,
            out,
        } => embed(cfg, &lyrics, restrict.as_deref(), dims, &out),
        Command::Dataset {
            tags,
            lexicon,
            mood_tags,
            tracks,
            lyrics,
            audio_dir,
            out,
        } => dataset(
            &cfg,
            &DatasetInputs {
                tags,
                lexicon,
                mood_tags,
                tracks,
                lyrics,
                audio_dir,
            },
            &out,
        ),
        Command::Train {
            mode,
            model,
            data,
            embeddings,
            features,
            lexicon,
            epochs,
            learning_rate,
            batch_size,
            patience,
            segment_seconds,
            words,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = patience {
                cfg.patience = v;
            }
            if let Some(v) = segment_seconds {
                cfg.segment_seconds = v;
            }
            if let Some(v) = words {
                cfg.words = v;
            }
            let req = TrainRequest {
                mode: parse_mode(&mode)?,
                model,
                data,
                embeddings,
                features,
                lexicon,
            };
            train_cmd(&cfg, &req, &out)
        }
        Command::Eval {
            model,
            data,
            split,
            embeddings,
            features,
            out,
        } => eval_cmd(&cfg, &model, &data, &split, embeddings.as_deref(), features.as_deref(), &out),
        Command::Fuse { a, b, truth, out } => fuse(&cfg, &a, &b, &truth, &out),
        Command::Report {
            inputs,
            norm,
            split,
            out,
        } => report(&cfg, &inputs, norm.as_deref(), &split, &out),
    }
}

fn parse_mode(s: &str) -> Result<Mode, CliError> {
    Mode::ALL
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| CliError::usage(format!("unknown mode `{s}` (audio, lyrics, bimodal)")))
}

fn parse_splits(s: &str) -> Result<Vec<SplitName>, CliError> {
    let mut out: Vec<SplitName> = Vec::new();
    for part in s.split(',') {
        let name: SplitName = part.parse().map_err(|e| CliError::usage(format!("{e}")))?;
        if !out.contains(&name) {
            out.push(name);
        }
    }
    Ok(out)
}

fn manifest(command: &str, cfg: &Config) -> ManifestBuilder {
    ManifestBuilder::start(command, cfg.seed, &cfg.to_kv_string())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// WAV at the working sample rate.
fn read_audio(path: &Path) -> Result<AudioClip, CliError> {
    let clip = read_wav(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if clip.sample_rate == dsp::SAMPLE_RATE {
        Ok(clip)
    } else {
        Ok(resample(&clip, dsp::SAMPLE_RATE)?)
    }
}

fn record_audio(r: &TrackRecord) -> Result<Option<AudioClip>, TrainError> {
    match &r.audio_path {
        None => Ok(None),
        Some(p) => {
            let clip = read_wav(p)?;
            if clip.sample_rate == dsp::SAMPLE_RATE {
                Ok(Some(clip))
            } else {
                Ok(Some(resample(&clip, dsp::SAMPLE_RATE)?))
            }
        }
    }
}

fn load_embedder(path: Option<&Path>, needed_for: &str) -> Result<LyricsEmbedder, CliError> {
    let path = path.ok_or_else(|| CliError::usage(format!("--embeddings is required for {needed_for}")))?;
    let (vocab, embeddings) = EmbeddingMatrix::load_text(path)?;
    Ok(LyricsEmbedder { vocab, embeddings })
}

fn load_features(path: Option<&Path>) -> Result<HashMap<String, Vec<f64>>, CliError> {
    let path = path.ok_or_else(|| CliError::usage("--features is required for the audio SVM"))?;
    Ok(read_feature_cache(path)?
        .into_iter()
        .filter(|r| r.kind == "classical")
        .map(|r| (r.track_id, r.values.into_data()))
        .collect())
}

fn load_split(data: &Path, name: SplitName) -> Result<Vec<TrackRecord>, CliError> {
    let path = data.join(format!("{name}.csv"));
    if !path.is_file() {
        return Err(CliError::io(format!("{}: no such file (run `moodnet dataset` first)", path.display())));
    }
    Ok(load_label_csv(path)?)
}

fn synth(cfg: &Config, out: &Path, tracks: usize, seconds: f64, lyric_words: usize) -> Result<(), CliError> {
    let mut m = manifest("synth", cfg);
    let corpus = generate_corpus(&SynthConfig {
        tracks,
        seconds,
        lyric_words,
        seed: cfg.seed,
        ..SynthConfig::default()
    })?;
    corpus.write_to_dir(out)?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn features(cfg: &Config, audio_dir: &Path, out: &Path) -> Result<(), CliError> {
    let mut m = manifest("features", cfg);
    let mut wavs: Vec<PathBuf> = fs::read_dir(audio_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", audio_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(CliError::data(format!("no .wav files in {}", audio_dir.display())));
    }
    let records: Vec<FeatureRecord> = wavs
        .par_iter()
        .map(|p| {
            let clip = read_audio(p)?;
            let values = classical_audio_features(&clip).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            Ok(FeatureRecord {
                track_id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                kind: "classical".into(),
                values: Tensor::from_vec(values),
            })
        })
        .collect::<Result<_, CliError>>()?;
    for p in &wavs {
        m.input(p)?;
    }
    ensure_parent(out)?;
    write_feature_cache(out, &records)?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn embed(mut cfg: Config, lyrics: &Path, restrict: Option<&Path>, dims: Option<usize>, out: &Path) -> Result<(), CliError> {
    if let Some(d) = dims {
        cfg.embedding_dims = d;
    }
    let mut m = manifest("embed", &cfg);
    m.input(lyrics)?;
    let texts = load_lyrics_csv(lyrics)?;
    let keep: Option<HashSet<String>> = match restrict {
        Some(p) => {
            m.input(p)?;
            Some(load_label_csv(p)?.into_iter().map(|r| r.msd_id).collect())
        }
        None => None,
    };
    let sentences: Vec<Vec<String>> = texts
        .iter()
        .filter(|(id, _)| keep.as_ref().is_none_or(|k| k.contains(*id)))
        .map(|(_, t)| tokenize(t))
        .collect();
    let model = train_word2vec(&sentences, &cfg.word2vec())?;
    ensure_parent(out)?;
    model.embeddings.save_text(&model.vocab, out)?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

struct DatasetInputs {
    tags: PathBuf,
    lexicon: PathBuf,
    mood_tags: PathBuf,
    tracks: PathBuf,
    lyrics: Option<PathBuf>,
    audio_dir: Option<PathBuf>,
}

fn dataset(cfg: &Config, inp: &DatasetInputs, out: &Path) -> Result<(), CliError> {
    let mut m = manifest("dataset", cfg);
    for p in [&inp.tags, &inp.lexicon, &inp.mood_tags, &inp.tracks] {
        m.input(p)?;
    }
    let tags = load_tag_file(&inp.tags)?;
    let lexicon = load_lexicon_csv(&inp.lexicon)?;
    let mood = load_mood_tags(&inp.mood_tags)?;
    let tracks = load_track_list(&inp.tracks)?;
    let lyrics = match &inp.lyrics {
        Some(p) => {
            m.input(p)?;
            load_lyrics_csv(p)?
        }
        None => Default::default(),
    };
    let audio_dir = match &inp.audio_dir {
        Some(d) => Some(fs::canonicalize(d).map_err(|e| CliError::io(format!("{}: {e}", d.display())))?),
        None => None,
    };
    let mut records = Vec::new();
    for (id, artist, title) in tracks {
        let Some(label) = tags.get(&id).and_then(|t| label_from_tags(t, &lexicon, &mood)) else {
            continue;
        };
        let mut r = TrackRecord::new(id, artist, title, label);
        r.lyrics = lyrics.get(&r.msd_id).filter(|t| !t.trim().is_empty()).cloned();
        r.audio_path = audio_dir
            .as_ref()
            .map(|d| d.join(format!("{}.wav", r.msd_id)))
            .filter(|p| p.is_file());
        records.push(r);
    }
    if records.is_empty() {
        return Err(CliError::data("no track has a mood tag found in the lexicon"));
    }
    let mut split = artist_disjoint_split(&records, cfg.split_fractions, cfg.seed)?;
    let stats = normalize_split(&mut split, cfg.norm_source)?;
    fs::create_dir_all(out)?;
    let mut labelled = Vec::with_capacity(split.len());
    for name in SplitName::ALL {
        let rows = split.get(name);
        write_label_csv(rows, out.join(format!("{name}.csv")))?;
        labelled.extend(rows.iter().map(|r| {
            let mut r = r.clone();
            r.extra.push(("split".into(), name.to_string()));
            r
        }));
    }
    write_label_csv(&labelled, out.join("labels.csv"))?;
    write_norm_csv(&stats, out.join("norm.csv"))?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

struct TrainRequest {
    mode: Mode,
    model: Option<String>,
    data: PathBuf,
    embeddings: Option<PathBuf>,
    features: Option<PathBuf>,
    lexicon: Option<PathBuf>,
}

fn deep_kind(mode: Mode, model: &str) -> Result<ModelKind, CliError> {
    let bad = || CliError::usage(format!("model `{model}` is not available in {mode} mode"));
    match mode {
        Mode::Audio if model.eq_ignore_ascii_case("convnet") => Ok(ModelKind::AudioConvNet),
        Mode::Audio => Err(bad()),
        Mode::Lyrics => Ok(ModelKind::Lyrics(model.parse::<LyricsVariant>().map_err(|_| bad())?)),
        Mode::Bimodal => Ok(ModelKind::Fusion(model.parse::<LyricsVariant>().map_err(|_| bad())?)),
    }
}

fn segments_tensor(s: &SegmentConfig) -> Tensor {
    Tensor::from_vec(vec![s.segment_seconds, s.extracts as f64, s.words as f64, s.pitch_semitones])
}

fn segments_from(t: &NamedTensors, fallback: SegmentConfig) -> SegmentConfig {
    match t.get(SEGMENTS_KEY).map(|t| t.data().to_vec()) {
        Ok(v) if v.len() == 4 => SegmentConfig {
            segment_seconds: v[0],
            extracts: v[1] as usize,
            words: v[2] as usize,
            pitch_semitones: v[3],
        },
        _ => fallback,
    }
}

fn train_cmd(cfg: &Config, req: &TrainRequest, out: &Path) -> Result<(), CliError> {
    let mut m = manifest("train", cfg);
    let train_rows = load_split(&req.data, SplitName::Train)?;
    let valid_rows = load_split(&req.data, SplitName::Valid)?;
    m.input(&req.data.join("train.csv"))?;
    m.input(&req.data.join("valid.csv"))?;
    for p in [&req.embeddings, &req.features, &req.lexicon].into_iter().flatten() {
        m.input(p)?;
    }
    let default_model = match req.mode {
        Mode::Audio => "ConvNet",
        _ => LyricsVariant::ConvLstm.name(),
    };
    let model = req.model.as_deref().unwrap_or(default_model);
    ensure_parent(out)?;
    if model.eq_ignore_ascii_case("svm") || model.eq_ignore_ascii_case("cbow") {
        let split = Split {
            train: train_rows,
            valid: valid_rows,
            test: Vec::new(),
        };
        let (trained, preds) = train_classical(cfg, req, model, &split)?;
        trained.save(out)?;
        let valid_out = with_suffix(out, ".valid.csv");
        preds.save(&valid_out)?;
        m.output(out)?;
        m.output(&valid_out)?;
        m.finish(out)?;
        return Ok(());
    }

    let kind = deep_kind(req.mode, model)?;
    let seg = cfg.segments();
    let embedder = if req.mode.uses_lyrics() {
        Some(load_embedder(req.embeddings.as_deref(), "lyrics models")?)
    } else {
        None
    };
    let opts = BuildOptions {
        audio: AudioGeometry {
            bands: dsp::N_MELS,
            frames: seg.audio_frames(),
        },
        lyrics: LyricsGeometry {
            dims: embedder.as_ref().map_or(cfg.embedding_dims, |e| e.embeddings.dims()),
            words: seg.words,
        },
        activation: cfg.activation,
        dropout: cfg.dropout,
        seed: cfg.seed,
        ..BuildOptions::default()
    };
    let mut net = ModelGraph::build(kind, &opts)?;
    let mut audio = record_audio;
    let emb = embedder.as_ref();
    let train_set = build_training_segments(&train_rows, &mut audio, emb, req.mode, &seg, cfg.seed)?;
    let valid_set = build_training_segments(&valid_rows, &mut audio, emb, req.mode, &seg, cfg.seed ^ 1)?;
    let tc = TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        patience: cfg.patience,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        seed: cfg.seed,
        mode: req.mode,
        model: kind,
    };
    let history = train(&mut net, &train_set, &valid_set, &tc)?;
    let mut tensors = net.to_named_tensors();
    tensors.push(SEGMENTS_KEY, segments_tensor(&seg));
    checkpoint::save(out, &tensors)?;
    let hist_out = with_suffix(out, ".history.csv");
    history.save(&hist_out)?;
    m.output(out)?;
    m.output(&hist_out)?;
    m.finish(out)?;
    Ok(())
}

fn train_classical(
    cfg: &Config,
    req: &TrainRequest,
    model: &str,
    split: &Split,
) -> Result<(ClassicalModel, PredictionSet), CliError> {
    if model.eq_ignore_ascii_case("cbow") {
        if req.mode != Mode::Lyrics {
            return Err(CliError::usage("CBOW is a lyrics model"));
        }
        let embedder = load_embedder(req.embeddings.as_deref(), "CBOW")?;
        return Ok(cbow_pipeline(split, &embedder, &cfg.forest())?);
    }
    let grid = cfg.svr_grid();
    match req.mode {
        Mode::Audio => {
            let feats = load_features(req.features.as_deref())?;
            Ok(classical_pipeline(split, ClassicalFeatures::Audio(&feats), &grid)?)
        }
        Mode::Lyrics => {
            let path = req.lexicon.as_deref().ok_or_else(|| CliError::usage("--lexicon is required for the lyrics SVM"))?;
            let lexicon = load_lexicon_csv(path)?;
            let options = cfg.text_features();
            Ok(classical_pipeline(
                split,
                ClassicalFeatures::Lyrics {
                    lexicon: &lexicon,
                    options: &options,
                },
                &grid,
            )?)
        }
        Mode::Bimodal => Err(CliError::usage("the SVM baseline has no bimodal variant")),
    }
}

fn eval_cmd(
    cfg: &Config,
    model_path: &Path,
    data: &Path,
    split: &str,
    embeddings: Option<&Path>,
    features: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut m = manifest("eval", cfg);
    m.input(model_path)?;
    let splits = parse_splits(split)?;
    let mut records: Vec<(SplitName, TrackRecord)> = Vec::new();
    for s in &splits {
        m.input(&data.join(format!("{s}.csv")))?;
        records.extend(load_split(data, *s)?.into_iter().map(|r| (*s, r)));
    }
    for p in [embeddings, features].into_iter().flatten() {
        m.input(p)?;
    }
    let tensors = checkpoint::load(model_path)?;
    let kind = tensors.get_str("meta.kind")?;
    let rows: Vec<TrackPrediction> = if kind.starts_with("classical:") {
        let model = ClassicalModel::from_named_tensors(&tensors)?;
        let feats = match &model {
            ClassicalModel::Svr { text: None, .. } => Some(load_features(features)?),
            _ => None,
        };
        let embedder = match &model {
            ClassicalModel::Cbow { .. } => Some(load_embedder(embeddings, "CBOW")?),
            _ => None,
        };
        records
            .par_iter()
            .map(|(s, r)| {
                let pred = match (&embedder, &feats) {
                    (Some(e), _) => {
                        let text = r
                            .lyrics
                            .as_deref()
                            .ok_or_else(|| CliError::new_missing(&r.msd_id, "lyrics"))?;
                        model.predict_features(mean_embedding(&tokenize(text), &e.vocab, &e.embeddings).data())?
                    }
                    (None, Some(f)) => {
                        let x = f.get(&r.msd_id).ok_or_else(|| CliError::new_missing(&r.msd_id, "audio features"))?;
                        model.predict_features(x)?
                    }
                    (None, None) => model.predict_record(r, None)?,
                };
                Ok(TrackPrediction {
                    msd_id: r.msd_id.clone(),
                    split: *s,
                    pred,
                    truth: r.label,
                })
            })
            .collect::<Result<_, CliError>>()?
    } else {
        let net = ModelGraph::from_named_tensors(&tensors)?;
        let seg = segments_from(&tensors, cfg.segments());
        let mode = match net.kind() {
            ModelKind::AudioConvNet => Mode::Audio,
            ModelKind::Lyrics(_) => Mode::Lyrics,
            ModelKind::Fusion(_) => Mode::Bimodal,
        };
        let embedder = if mode.uses_lyrics() {
            Some(load_embedder(embeddings, "lyrics models")?)
        } else {
            None
        };
        records
            .par_iter()
            .map(|(s, r)| {
                let clip = if mode.uses_audio() { record_audio(r)? } else { None };
                Ok(TrackPrediction {
                    msd_id: r.msd_id.clone(),
                    split: *s,
                    pred: predict_track(&net, r, clip.as_ref(), embedder.as_ref(), mode, &seg)?,
                    truth: r.label,
                })
            })
            .collect::<Result<_, CliError>>()?
    };
    ensure_parent(out)?;
    PredictionSet::new(rows).save(out)?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn fuse(cfg: &Config, a: &Path, b: &Path, truth: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut m = manifest("fuse", cfg);
    m.input(a)?;
    m.input(b)?;
    let mut pa = PredictionSet::load(a)?;
    let mut pb = PredictionSet::load(b)?;
    if !truth.is_empty() {
        let mut labels = HashMap::new();
        for t in truth {
            m.input(t)?;
            labels.extend(load_label_csv(t)?.into_iter().map(|r| (r.msd_id, r.label)));
        }
        pa = pa.with_truth(&labels)?;
        pb = pb.with_truth(&labels)?;
    }
    let report = fusion_grid_search(&pa, &pb, cfg.fusion_selection)?;
    ensure_parent(out)?;
    report.save(out)?;
    m.output(out)?;
    m.finish(out)?;
    Ok(())
}

fn report(cfg: &Config, inputs: &[String], norm: Option<&Path>, split: &str, out: &Path) -> Result<(), CliError> {
    let mut m = manifest("report", cfg);
    let split: SplitName = split.parse().map_err(|e| CliError::usage(format!("{e}")))?;
    if inputs.is_empty() {
        return Err(CliError::usage("--inputs needs at least one mode:model=path entry"));
    }
    let mut entries = Vec::with_capacity(inputs.len());
    for spec in inputs {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("`{spec}` is not of the form mode:model=path")))?;
        let (mode, model) = label
            .split_once(':')
            .ok_or_else(|| CliError::usage(format!("`{label}` is not of the form mode:model")))?;
        let path = Path::new(path);
        m.input(path)?;
        let preds = PredictionSet::load(path)?.split(split);
        if preds.is_empty() {
            return Err(CliError::data(format!("{} has no {split} rows", path.display())));
        }
        entries.push(ReportEntry {
            mode: mode.to_string(),
            model: model.to_string(),
            r2: preds.r2()?,
        });
    }
    let stats = match norm {
        Some(p) => {
            m.input(p)?;
            Some(load_norm_csv(p)?)
        }
        None => None,
    };
    let report = Report::new(entries, stats)?;
    ensure_parent(out)?;
    fs::write(out, report.to_csv_string())?;
    let table = out.with_extension("txt");
    fs::write(&table, report.to_table())?;
    print!("{}", report.to_table());
    m.output(out)?;
    m.output(&table)?;
    m.finish(out)?;
    Ok(())
}
