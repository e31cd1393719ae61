//! Minibatch Adam training with early stopping, and track-level inference
//! by averaging segment predictions.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Mode as GraphMode, ParamStore};
use crate::dataset::{
    inference_segments, make_training_segments, DatasetError, LyricsEmbedder, Mode, MoodLabel, SegmentConfig,
    SegmentSample, SplitName, TrackRecord,
};
use crate::dsp::{read_wav, AudioClip, DspError};
use crate::eval::{EvalError, PredictionSet, TrackPrediction};
use crate::nn::{ModelError, ModelGraph, ModelKind};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug)]
pub enum TrainError {
    InvalidConfig(String),
    EmptyTrainingSet,
    Diverged { epoch: usize },
    Model(ModelError),
    Dataset(DatasetError),
    Eval(EvalError),
    Io(io::Error),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig(m) => write!(f, "invalid training config: {m}"),
            Self::EmptyTrainingSet => write!(f, "no training segments"),
            Self::Diverged { epoch } => write!(f, "training loss became non-finite in epoch {epoch}"),
            Self::Model(e) => write!(f, "{e}"),
            Self::Dataset(e) => write!(f, "{e}"),
            Self::Eval(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(ModelError::Tensor(e))
    }
}

impl From<DatasetError> for TrainError {
    fn from(e: DatasetError) -> Self {
        Self::Dataset(e)
    }
}

impl From<DspError> for TrainError {
    fn from(e: DspError) -> Self {
        Self::Dataset(DatasetError::Dsp(e))
    }
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        Self::Eval(e)
    }
}

impl From<io::Error> for TrainError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub mode: Mode,
    pub model: ModelKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            mode: Mode::Audio,
            model: ModelKind::AudioConvNet,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted (it leaves the weights untouched).
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return bad("batch size, epochs and patience must be positive");
        }
        if self.patience > self.epochs {
            return bad("patience exceeds the number of epochs");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        let expected = match self.model {
            ModelKind::AudioConvNet => Mode::Audio,
            ModelKind::Lyrics(_) => Mode::Lyrics,
            ModelKind::Fusion(_) => Mode::Bimodal,
        };
        if expected != self.mode {
            return Err(TrainError::InvalidConfig(format!("model {} does not take {} inputs", self.model, self.mode)));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                *w -= self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss\n");
        for e in &self.epochs {
            let valid = e.valid_loss.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, valid));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        Ok(fs::write(path, self.to_csv_string())?)
    }
}

fn batch_inputs(samples: &[&SegmentSample]) -> Result<(Vec<Tensor>, Tensor), TrainError> {
    let branches = samples[0].inputs().len();
    let mut inputs = Vec::with_capacity(branches);
    for b in 0..branches {
        let items: Vec<Tensor> = samples.iter().map(|s| s.inputs()[b].clone()).collect();
        inputs.push(Tensor::stack(&items)?);
    }
    let targets = samples.iter().flat_map(|s| s.label.as_array()).collect();
    Ok((inputs, Tensor::new(vec![samples.len(), 2], targets)?))
}

/// Mean over samples of the summed squared error of both outputs, in
/// inference mode.
pub fn evaluate_loss(model: &ModelGraph, samples: &[SegmentSample], batch_size: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SegmentSample> = chunk.iter().collect();
        let (inputs, targets) = batch_inputs(&refs)?;
        let pred = model.predict(&inputs)?;
        total += pred.data().iter().zip(targets.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains in place. Each epoch shuffles the segments globally; when
/// validation segments are given, the weights of the epoch with the lowest
/// validation loss are restored at the end and training stops after
/// `patience` epochs without improvement.
pub fn train(model: &mut ModelGraph, train: &[SegmentSample], valid: &[SegmentSample], cfg: &TrainConfig) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelGraph)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&SegmentSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (inputs, targets) = batch_inputs(&refs)?;
            let mut g = Graph::with_seed(GraphMode::Train, rng.gen());
            let step = (|| -> Result<_, TrainError> {
                let out = model.forward(&mut g, &inputs)?;
                let t = g.input(targets)?;
                let loss = g.mse_loss(out, t)?;
                Ok((loss, g.value(loss).data()[0]))
            })();
            let (loss, value) = match step {
                Err(TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))) => {
                    return Err(TrainError::Diverged { epoch })
                }
                other => other?,
            };
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            total += value * chunk.len() as f64;
            let store = model.params_mut();
            store.zero_grad();
            g.backward(loss, store)?;
            adam.step(store);
            if !store.iter().all(|p| p.value.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
            let stats = g.take_batchnorm_stats();
            model.update_batchnorm(&stats);
        }
        let train_loss = total / train.len() as f64;
        let valid_loss = if valid.is_empty() {
            None
        } else {
            let v = evaluate_loss(model, valid, cfg.batch_size)?;
            if !v.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            Some(v)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        });
        match valid_loss {
            Some(v) => {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, model.clone()));
                    history.best_epoch = epoch;
                } else if epoch - history.best_epoch >= cfg.patience {
                    break;
                }
            }
            None => history.best_epoch = epoch,
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(history)
}

/// Reads the record's WAV file when it has one.
pub fn load_record_audio(record: &TrackRecord) -> Result<Option<AudioClip>, TrainError> {
    record.audio_path.as_ref().map(read_wav).transpose().map_err(TrainError::from)
}

/// Training segments of every record, in record order.
pub fn build_training_segments(
    records: &[TrackRecord],
    audio: &mut dyn FnMut(&TrackRecord) -> Result<Option<AudioClip>, TrainError>,
    embedder: Option<&LyricsEmbedder>,
    mode: Mode,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<Vec<SegmentSample>, TrainError> {
    let mut out = Vec::new();
    for r in records {
        let clip = if mode.uses_audio() { audio(r)? } else { None };
        out.extend(make_training_segments(r, clip.as_ref(), embedder, mode, cfg, seed)?);
    }
    Ok(out)
}

/// Mean of the model's outputs over the 7 evenly spaced segments.
pub fn predict_track(
    model: &ModelGraph,
    record: &TrackRecord,
    audio: Option<&AudioClip>,
    embedder: Option<&LyricsEmbedder>,
    mode: Mode,
    cfg: &SegmentConfig,
) -> Result<MoodLabel, TrainError> {
    let segments = inference_segments(record, audio, embedder, mode, cfg)?;
    let refs: Vec<&SegmentSample> = segments.iter().collect();
    let (inputs, _) = batch_inputs(&refs)?;
    let pred = model.predict(&inputs)?;
    let n = segments.len() as f64;
    let (mut v, mut a) = (0.0, 0.0);
    for row in pred.data().chunks(2) {
        v += row[0];
        a += row[1];
    }
    Ok(MoodLabel::new(v / n, a / n))
}

/// Track-level predictions for `records`, tagged with `split`.
pub fn predict_records(
    model: &ModelGraph,
    records: &[TrackRecord],
    split: SplitName,
    audio: &mut dyn FnMut(&TrackRecord) -> Result<Option<AudioClip>, TrainError>,
    embedder: Option<&LyricsEmbedder>,
    mode: Mode,
    cfg: &SegmentConfig,
) -> Result<PredictionSet, TrainError> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let clip = if mode.uses_audio() { audio(r)? } else { None };
        rows.push(TrackPrediction {
            msd_id: r.msd_id.clone(),
            split,
            pred: predict_track(model, r, clip.as_ref(), embedder, mode, cfg)?,
            truth: r.label,
        });
    }
    Ok(PredictionSet::new(rows))
}

#[cfg(test)]
mod tests;
