use std::collections::HashMap;
use std::path::Path;

use super::forest::{forest_fit, ForestModel, ForestOptions};
use super::svr::{svr_fit, Kernel, SvrModel, SvrOptions};
use super::text_features::{fit_text_features, TextFeatureExtractor, TextFeatureOptions};
use super::ClassicalError;
use crate::checkpoint::{self, NamedTensors};
use crate::dataset::{Lexicon, LyricsEmbedder, Mode, MoodLabel, Split, SplitName, TrackRecord};
use crate::eval::{PredictionSet, TrackPrediction};
use crate::tensor::Tensor;
use crate::text::{mean_embedding, tokenize};

/// Hyperparameter grid searched per output dimension on the validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrGrid {
    pub c: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// Multipliers of the default `1 / (d var(X))`; ignored for linear kernels.
    pub gamma_scale: Vec<f64>,
    pub rbf: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrGrid {
    fn default() -> Self {
        Self {
            c: vec![0.1, 1.0, 10.0],
            epsilon: vec![0.1],
            gamma_scale: vec![0.1, 1.0, 10.0],
            rbf: true,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// Per-feature z-scoring fit on training rows; constant features keep a
/// unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let s = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
}

/// Standardizer plus one SVR per output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrRegressor {
    pub scaler: Standardizer,
    pub models: [SvrModel; 2],
}

fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len().max(1) as f64
}

impl SvrRegressor {
    /// Fits every grid point on `train` and keeps, per dimension, the one
    /// with the lowest validation MSE. Without validation rows the middle
    /// of each grid axis is used.
    pub fn fit(
        train_x: &[Vec<f64>],
        train_y: &[MoodLabel],
        valid_x: &[Vec<f64>],
        valid_y: &[MoodLabel],
        grid: &SvrGrid,
    ) -> Result<(Self, [Hyper; 2]), ClassicalError> {
        if train_x.len() < 2 || train_x.len() != train_y.len() || valid_x.len() != valid_y.len() {
            return Err(ClassicalError::InvalidData(format!(
                "need at least 2 training rows with labels (got {} rows, {} labels)",
                train_x.len(),
                train_y.len()
            )));
        }
        if grid.c.is_empty() || grid.epsilon.is_empty() || (grid.rbf && grid.gamma_scale.is_empty()) {
            return Err(ClassicalError::InvalidData("empty hyperparameter grid".into()));
        }
        let scaler = Standardizer::fit(train_x);
        let xs: Vec<Vec<f64>> = train_x.iter().map(|r| scaler.apply(r)).collect();
        let vs: Vec<Vec<f64>> = valid_x.iter().map(|r| scaler.apply(r)).collect();
        let d = xs[0].len().max(1) as f64;
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let var = {
            let m = flat.iter().sum::<f64>() / flat.len().max(1) as f64;
            flat.iter().map(|v| (v - m).powi(2)).sum::<f64>() / flat.len().max(1) as f64
        };
        let gamma0 = 1.0 / (d * if var > 1e-12 { var } else { 1.0 });
        let kernels: Vec<Kernel> = if grid.rbf {
            grid.gamma_scale.iter().map(|s| Kernel::Rbf { gamma: gamma0 * s }).collect()
        } else {
            vec![Kernel::Linear]
        };
        let mut candidates = Vec::new();
        for &c in &grid.c {
            for &epsilon in &grid.epsilon {
                for &kernel in &kernels {
                    candidates.push(Hyper { c, epsilon, kernel });
                }
            }
        }
        let mid = |v: &[f64]| v[v.len() / 2];
        let default = Hyper {
            c: mid(&grid.c),
            epsilon: mid(&grid.epsilon),
            kernel: kernels[kernels.len() / 2],
        };
        let fit_one = |h: &Hyper, y: &[f64]| {
            svr_fit(
                &xs,
                y,
                &SvrOptions {
                    kernel: h.kernel,
                    c: h.c,
                    epsilon: h.epsilon,
                    tol: grid.tol,
                    max_iter: grid.max_iter,
                    trace: false,
                },
            )
        };
        let mut models = Vec::with_capacity(2);
        let mut chosen = Vec::with_capacity(2);
        for dim in 0..2 {
            let y: Vec<f64> = train_y.iter().map(|l| l.as_array()[dim]).collect();
            let vy: Vec<f64> = valid_y.iter().map(|l| l.as_array()[dim]).collect();
            let (model, h) = if vs.is_empty() {
                (fit_one(&default, &y)?, default)
            } else {
                let mut best: Option<(f64, SvrModel, Hyper)> = None;
                for h in &candidates {
                    let m = fit_one(h, &y)?;
                    let pred: Vec<f64> = vs.iter().map(|x| m.predict(x)).collect::<Result<_, _>>()?;
                    let err = mse(&pred, &vy);
                    if best.as_ref().is_none_or(|b| err < b.0) {
                        best = Some((err, m, *h));
                    }
                }
                let (_, m, h) = best.expect("grid is not empty");
                (m, h)
            };
            models.push(model);
            chosen.push(h);
        }
        let [v, a]: [SvrModel; 2] = models.try_into().expect("two dimensions");
        Ok((Self { scaler, models: [v, a] }, [chosen[0], chosen[1]]))
    }

    pub fn predict(&self, x: &[f64]) -> Result<MoodLabel, ClassicalError> {
        let z = self.scaler.apply(x);
        if z.len() != x.len() || x.len() != self.scaler.mean.len() {
            return Err(ClassicalError::DimensionMismatch {
                expected: self.scaler.mean.len(),
                got: x.len(),
            });
        }
        Ok(MoodLabel::new(self.models[0].predict(&z)?, self.models[1].predict(&z)?))
    }
}

/// Whole-track inputs for [`classical_pipeline`].
#[derive(Debug, Clone, Copy)]
pub enum ClassicalFeatures<'a> {
    /// Precomputed 32-value classical audio descriptors per track id.
    Audio(&'a HashMap<String, Vec<f64>>),
    /// Lyric text of each record, featurized with a vocabulary fit on train.
    Lyrics { lexicon: &'a Lexicon, options: &'a TextFeatureOptions },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassicalModel {
    Svr {
        mode: Mode,
        text: Option<TextFeatureExtractor>,
        regressor: SvrRegressor,
    },
    /// Random forest on mean word embeddings.
    Cbow { forests: [ForestModel; 2] },
}

fn predictions(rows: Vec<(String, SplitName, MoodLabel, MoodLabel)>) -> PredictionSet {
    PredictionSet::new(
        rows.into_iter()
            .map(|(msd_id, split, pred, truth)| TrackPrediction { msd_id, split, pred, truth })
            .collect(),
    )
}

fn eval_splits() -> [SplitName; 2] {
    [SplitName::Valid, SplitName::Test]
}

/// Trains the SVR baseline for one modality and predicts every validation
/// and test track from whole-track features.
pub fn classical_pipeline(split: &Split, features: ClassicalFeatures<'_>, grid: &SvrGrid) -> Result<(ClassicalModel, PredictionSet), ClassicalError> {
    let (mode, text) = match features {
        ClassicalFeatures::Audio(_) => (Mode::Audio, None),
        ClassicalFeatures::Lyrics { lexicon, options } => {
            let docs: Vec<&str> = split.train.iter().map(|r| r.lyrics.as_deref().unwrap_or("")).collect();
            (Mode::Lyrics, Some(fit_text_features(&docs, lexicon, options)?))
        }
    };
    let featurize = |r: &TrackRecord| -> Result<Vec<f64>, ClassicalError> {
        match (&features, &text) {
            (ClassicalFeatures::Audio(map), _) => map
                .get(&r.msd_id)
                .cloned()
                .ok_or_else(|| ClassicalError::MissingFeatures(r.msd_id.clone())),
            (_, Some(t)) => Ok(t.extract(r.lyrics.as_deref().ok_or_else(|| ClassicalError::MissingFeatures(r.msd_id.clone()))?)),
            _ => unreachable!("text extractor exists in lyrics mode"),
        }
    };
    let rows = |records: &[TrackRecord]| -> Result<(Vec<Vec<f64>>, Vec<MoodLabel>), ClassicalError> {
        let x = records.iter().map(featurize).collect::<Result<_, _>>()?;
        Ok((x, records.iter().map(|r| r.label).collect()))
    };
    let (tx, ty) = rows(&split.train)?;
    let (vx, vy) = rows(&split.valid)?;
    let (regressor, _) = SvrRegressor::fit(&tx, &ty, &vx, &vy, grid)?;
    let model = ClassicalModel::Svr { mode, text, regressor };
    let mut out = Vec::new();
    for s in eval_splits() {
        for r in split.get(s) {
            out.push((r.msd_id.clone(), s, model.predict_record(r, features_for(&features, r))?, r.label));
        }
    }
    Ok((model, predictions(out)))
}

fn features_for<'a>(f: &ClassicalFeatures<'a>, r: &TrackRecord) -> Option<&'a [f64]> {
    match f {
        ClassicalFeatures::Audio(map) => map.get(&r.msd_id).map(Vec::as_slice),
        ClassicalFeatures::Lyrics { .. } => None,
    }
}

fn cbow_features(r: &TrackRecord, embedder: &LyricsEmbedder) -> Result<Vec<f64>, ClassicalError> {
    let text = r.lyrics.as_deref().ok_or_else(|| ClassicalError::MissingFeatures(r.msd_id.clone()))?;
    Ok(mean_embedding(&tokenize(text), &embedder.vocab, &embedder.embeddings).into_data())
}

/// Random forest per dimension on the mean embedding of each track's lyrics.
pub fn cbow_pipeline(split: &Split, embedder: &LyricsEmbedder, opts: &ForestOptions) -> Result<(ClassicalModel, PredictionSet), ClassicalError> {
    let x: Vec<Vec<f64>> = split.train.iter().map(|r| cbow_features(r, embedder)).collect::<Result<_, _>>()?;
    let fit = |dim: usize| {
        let y: Vec<f64> = split.train.iter().map(|r| r.label.as_array()[dim]).collect();
        forest_fit(&x, &y, opts)
    };
    let model = ClassicalModel::Cbow {
        forests: [fit(0)?, fit(1)?],
    };
    let mut out = Vec::new();
    for s in eval_splits() {
        for r in split.get(s) {
            out.push((r.msd_id.clone(), s, model.predict_features(&cbow_features(r, embedder)?)?, r.label));
        }
    }
    Ok((model, predictions(out)))
}

impl ClassicalModel {
    pub fn name(&self) -> &'static str {
        match self {
            ClassicalModel::Svr { .. } => "SVM",
            ClassicalModel::Cbow { .. } => "CBOW",
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            ClassicalModel::Svr { mode, .. } => *mode,
            ClassicalModel::Cbow { .. } => Mode::Lyrics,
        }
    }

    /// Prediction from an already computed feature vector (audio
    /// descriptors, extracted lyric features, or a mean embedding).
    pub fn predict_features(&self, x: &[f64]) -> Result<MoodLabel, ClassicalError> {
        match self {
            ClassicalModel::Svr { regressor, .. } => regressor.predict(x),
            ClassicalModel::Cbow { forests } => Ok(MoodLabel::new(forests[0].predict(x)?, forests[1].predict(x)?)),
        }
    }

    /// Prediction for a record: audio SVRs use `audio_features`, lyric SVRs
    /// featurize the record's lyrics.
    pub fn predict_record(&self, r: &TrackRecord, audio_features: Option<&[f64]>) -> Result<MoodLabel, ClassicalError> {
        let missing = || ClassicalError::MissingFeatures(r.msd_id.clone());
        match self {
            ClassicalModel::Svr { text: Some(t), .. } => self.predict_features(&t.extract(r.lyrics.as_deref().ok_or_else(missing)?)),
            ClassicalModel::Svr { text: None, .. } => self.predict_features(audio_features.ok_or_else(missing)?),
            ClassicalModel::Cbow { .. } => Err(ClassicalError::InvalidData(
                "CBOW models need mean embeddings; use predict_features".into(),
            )),
        }
    }

    pub fn to_named_tensors(&self) -> NamedTensors {
        let mut t = NamedTensors::new();
        t.push_str("meta.kind", &format!("classical:{}:{}", self.name(), self.mode()));
        match self {
            ClassicalModel::Svr { text, regressor, .. } => {
                t.push("scaler.mean", Tensor::from_vec(regressor.scaler.mean.clone()));
                t.push("scaler.std", Tensor::from_vec(regressor.scaler.std.clone()));
                regressor.models[0].to_named_tensors("svr.valence", &mut t);
                regressor.models[1].to_named_tensors("svr.arousal", &mut t);
                if let Some(x) = text {
                    x.to_named_tensors("text", &mut t);
                }
            }
            ClassicalModel::Cbow { forests } => {
                forests[0].to_named_tensors("forest.valence", &mut t);
                forests[1].to_named_tensors("forest.arousal", &mut t);
            }
        }
        t
    }

    pub fn from_named_tensors(t: &NamedTensors) -> Result<Self, ClassicalError> {
        let kind = t.get_str("meta.kind")?;
        let parts: Vec<&str> = kind.split(':').collect();
        match parts.as_slice() {
            ["classical", "SVM", mode] => {
                let mode: Mode = mode.parse()?;
                let text = if mode == Mode::Lyrics { Some(TextFeatureExtractor::from_named_tensors("text", t)?) } else { None };
                let scaler = Standardizer {
                    mean: t.get("scaler.mean")?.data().to_vec(),
                    std: t.get("scaler.std")?.data().to_vec(),
                };
                let models = [
                    SvrModel::from_named_tensors("svr.valence", t)?,
                    SvrModel::from_named_tensors("svr.arousal", t)?,
                ];
                Ok(ClassicalModel::Svr {
                    mode,
                    text,
                    regressor: SvrRegressor { scaler, models },
                })
            }
            ["classical", "CBOW", _] => Ok(ClassicalModel::Cbow {
                forests: [
                    ForestModel::from_named_tensors("forest.valence", t)?,
                    ForestModel::from_named_tensors("forest.arousal", t)?,
                ],
            }),
            _ => Err(ClassicalError::Format(format!("not a classical model: {kind}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassicalError> {
        checkpoint::save(path, &self.to_named_tensors()).map_err(ClassicalError::from)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassicalError> {
        Self::from_named_tensors(&checkpoint::load(path)?)
    }
}
