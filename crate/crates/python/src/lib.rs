//! Python bindings: tensors, the deep models, the classical regressors,
//! word embeddings, audio features and the synthetic experiment.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use moodnet::autodiff::GradCheckOptions;
use moodnet::classical::{forest_fit, svr_fit, ForestModel, ForestOptions, Kernel, SvrModel, SvrOptions};
use moodnet::dataset::{MoodLabel, SplitName};
use moodnet::dsp::{self, AudioClip};
use moodnet::eval::{self, PredictionSet, TrackPrediction, WeightSelection};
use moodnet::experiment::{run_synthetic_experiment, ExperimentConfig, ModelOutcome};
use moodnet::nn::{AudioGeometry, BuildOptions, LyricsGeometry, ModelGraph, ModelKind};
use moodnet::tensor::Tensor;
use moodnet::text::{self, EmbeddingMatrix, Vocabulary, Word2VecConfig, Word2VecMode};

create_exception!(moodnet_py, MoodnetError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    MoodnetError::new_err(e.to_string())
}

#[pyclass(name = "Tensor", module = "moodnet_py", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::new(shape, data).map_err(err)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn tensors(inputs: Vec<PyTensor>) -> Vec<Tensor> {
    inputs.into_iter().map(|t| t.inner).collect()
}

/// A deep model: `audio:ConvNet`, `lyrics:<variant>` or `bimodal:<variant>`.
#[pyclass(name = "Model", module = "moodnet_py")]
pub struct PyModel {
    inner: ModelGraph,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (kind, frames=1292, dims=100, words=50, dropout=0.5, seed=0, activation="relu"))]
    fn build(kind: &str, frames: usize, dims: usize, words: usize, dropout: f64, seed: u64, activation: &str) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(err)?;
        let opts = BuildOptions {
            audio: AudioGeometry {
                bands: dsp::N_MELS,
                frames,
            },
            lyrics: LyricsGeometry { dims, words },
            activation: activation.parse().map_err(err)?,
            dropout,
            seed,
            ..BuildOptions::default()
        };
        Ok(Self {
            inner: ModelGraph::build(kind, &opts).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ModelGraph::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    /// Per-item input shapes (without the batch axis).
    #[getter]
    fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.inner.input_shapes()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params().num_elements()
    }

    /// Inference-mode outputs `[batch, 2]` (valence, arousal).
    fn predict(&self, inputs: Vec<PyTensor>) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: self.inner.predict(&tensors(inputs)).map_err(err)?,
        })
    }

    /// Finite-difference check of the loss gradient; returns (passed, worst relative error).
    #[pyo3(signature = (inputs, targets, tol=1e-4, max_entries=Some(8), seed=0))]
    fn gradient_check(
        &mut self,
        inputs: Vec<PyTensor>,
        targets: PyTensor,
        tol: f64,
        max_entries: Option<usize>,
        seed: u64,
    ) -> PyResult<(bool, f64)> {
        let opts = GradCheckOptions {
            tol,
            max_entries_per_param: max_entries,
            seed,
            ..GradCheckOptions::default()
        };
        let report = self
            .inner
            .gradient_check(&tensors(inputs), &targets.inner, opts)
            .map_err(err)?;
        let worst = report.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
        Ok((report.passed(), worst))
    }
}

/// Epsilon-insensitive support vector regression.
#[pyclass(name = "Svr", module = "moodnet_py")]
pub struct PySvr {
    inner: SvrModel,
}

#[pymethods]
impl PySvr {
    /// RBF kernel when `gamma` is given, linear otherwise.
    #[staticmethod]
    #[pyo3(signature = (x, y, c=1.0, epsilon=0.1, gamma=None, tol=1e-3, max_iter=1_000_000))]
    fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, c: f64, epsilon: f64, gamma: Option<f64>, tol: f64, max_iter: usize) -> PyResult<Self> {
        let opts = SvrOptions {
            kernel: gamma.map_or(Kernel::Linear, |gamma| Kernel::Rbf { gamma }),
            c,
            epsilon,
            tol,
            max_iter,
            ..SvrOptions::default()
        };
        Ok(Self {
            inner: svr_fit(&x, &y, &opts).map_err(err)?,
        })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        x.iter().map(|r| self.inner.predict(r).map_err(err)).collect()
    }
}

/// Random forest regressor.
#[pyclass(name = "Forest", module = "moodnet_py")]
pub struct PyForest {
    inner: ForestModel,
}

#[pymethods]
impl PyForest {
    #[staticmethod]
    #[pyo3(signature = (x, y, n_trees=100, max_depth=None, min_leaf=1, bootstrap=true, seed=0))]
    fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        n_trees: usize,
        max_depth: Option<usize>,
        min_leaf: usize,
        bootstrap: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let opts = ForestOptions {
            n_trees,
            max_depth,
            min_leaf,
            bootstrap,
            seed,
        };
        Ok(Self {
            inner: forest_fit(&x, &y, &opts).map_err(err)?,
        })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        x.iter().map(|r| self.inner.predict(r).map_err(err)).collect()
    }
}

/// Word vectors with their vocabulary.
#[pyclass(name = "Embeddings", module = "moodnet_py")]
pub struct PyEmbeddings {
    vocab: Vocabulary,
    matrix: EmbeddingMatrix,
}

#[pymethods]
impl PyEmbeddings {
    #[staticmethod]
    #[pyo3(signature = (sentences, dims=100, epochs=5, window=5, negatives=5, seed=0, mode="skipgram"))]
    fn train(
        py: Python<'_>,
        sentences: Vec<Vec<String>>,
        dims: usize,
        epochs: usize,
        window: usize,
        negatives: usize,
        seed: u64,
        mode: &str,
    ) -> PyResult<Self> {
        let mode = match mode {
            "skipgram" => Word2VecMode::SkipGram,
            "cbow" => Word2VecMode::Cbow,
            other => return Err(err(format!("mode must be skipgram or cbow, got {other:?}"))),
        };
        let cfg = Word2VecConfig {
            dims,
            epochs,
            window,
            negatives,
            seed,
            mode,
            ..Word2VecConfig::default()
        };
        let model = py.detach(|| text::train_word2vec(&sentences, &cfg)).map_err(err)?;
        Ok(Self {
            vocab: model.vocab,
            matrix: model.embeddings,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (vocab, matrix) = EmbeddingMatrix::load_text(path).map_err(err)?;
        Ok(Self { vocab, matrix })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.matrix.save_text(&self.vocab, path).map_err(err)
    }

    #[getter]
    fn dims(&self) -> usize {
        self.matrix.dims()
    }

    #[getter]
    fn words(&self) -> Vec<String> {
        self.vocab.words().to_vec()
    }

    /// Vector of `word`, or of `<unk>` when it is unknown.
    fn vector(&self, word: &str) -> Vec<f64> {
        self.matrix.row(self.vocab.index_of(word)).to_vec()
    }

    /// `[dims, length]` matrix of the tokens, zero-padded.
    fn embed(&self, tokens: Vec<String>, length: usize) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: text::embed_sequence(&tokens, &self.vocab, &self.matrix, length).map_err(err)?,
        })
    }

    fn mean(&self, tokens: Vec<String>) -> Vec<f64> {
        text::mean_embedding(&tokens, &self.vocab, &self.matrix).into_data()
    }
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    text::tokenize(text)
}

#[pyfunction]
fn r2_score(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    eval::r2_score(&pred, &truth).map_err(err)
}

fn clip(samples: Vec<f64>, sample_rate: u32) -> PyResult<AudioClip> {
    AudioClip::new(samples, sample_rate).map_err(err)
}

/// Log-mel spectrogram `[40, frames]` at 44.1 kHz (other rates are resampled).
#[pyfunction]
fn mel_spectrogram(samples: Vec<f64>, sample_rate: u32) -> PyResult<PyTensor> {
    let mut c = clip(samples, sample_rate)?;
    if sample_rate != dsp::SAMPLE_RATE {
        c = dsp::resample(&c, dsp::SAMPLE_RATE).map_err(err)?;
    }
    Ok(PyTensor {
        inner: dsp::mel_spectrogram(&c).map_err(err)?.values,
    })
}

/// The 32 whole-track descriptors used by the audio SVM, with their names.
#[pyfunction]
fn classical_audio_features(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<(String, f64)>> {
    let mut c = clip(samples, sample_rate)?;
    if sample_rate != dsp::SAMPLE_RATE {
        c = dsp::resample(&c, dsp::SAMPLE_RATE).map_err(err)?;
    }
    let values = dsp::classical_audio_features(&c).map_err(err)?;
    Ok(dsp::CLASSICAL_FEATURE_NAMES.iter().map(|n| n.to_string()).zip(values).collect())
}

#[pyfunction]
fn read_wav(path: &str) -> PyResult<(Vec<f64>, u32)> {
    let c = dsp::read_wav(path).map_err(err)?;
    Ok((c.samples, c.sample_rate))
}

fn prediction_set(pred: &[(f64, f64)], truth: &[(f64, f64)]) -> PyResult<PredictionSet> {
    if pred.len() != truth.len() {
        return Err(err(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    Ok(PredictionSet::new(
        pred.iter()
            .zip(truth)
            .enumerate()
            .map(|(i, (p, t))| TrackPrediction {
                msd_id: format!("t{i}"),
                split: SplitName::Test,
                pred: MoodLabel::new(p.0, p.1),
                truth: MoodLabel::new(t.0, t.1),
            })
            .collect(),
    ))
}

/// R² of `w·a + (1−w)·b` for `w` in 0, 0.1, ..., 1: a list of
/// `(w, r2_valence, r2_arousal)`.
#[pyfunction]
fn fusion_grid(a: Vec<(f64, f64)>, b: Vec<(f64, f64)>, truth: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64, f64)>> {
    let report = eval::fusion_grid_search(&prediction_set(&a, &truth)?, &prediction_set(&b, &truth)?, WeightSelection::Reported)
        .map_err(err)?;
    Ok(report.rows.iter().map(|r| (r.weight, r.r2[0], r.r2[1])).collect())
}

fn outcome<'py>(py: Python<'py>, o: &ModelOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("model", o.kind.to_string())?;
    d.set_item("r2_valence", o.test_r2[0])?;
    d.set_item("r2_arousal", o.test_r2[1])?;
    d.set_item("epochs", o.history.epochs.len())?;
    d.set_item("seconds", o.seconds)?;
    Ok(d)
}

/// Trains the audio, lyrics and bimodal models on a generated corpus and
/// returns their test R² plus the late-fusion result.
#[pyfunction]
#[pyo3(signature = (seed=0, tracks=150, epochs=12))]
fn run_experiment<'py>(py: Python<'py>, seed: u64, tracks: usize, epochs: usize) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.corpus.tracks = tracks;
    cfg.train.epochs = epochs;
    cfg.train.patience = cfg.train.patience.min(epochs);
    let r = py.detach(|| run_synthetic_experiment(&cfg)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("audio", outcome(py, &r.audio)?)?;
    d.set_item("lyrics", outcome(py, &r.lyrics)?)?;
    d.set_item("bimodal", outcome(py, &r.bimodal)?)?;
    let lf = PyDict::new(py);
    lf.set_item("weights", r.late_fusion.selected.to_vec())?;
    lf.set_item("r2_valence", r.late_fusion.selected_r2[0])?;
    lf.set_item("r2_arousal", r.late_fusion.selected_r2[1])?;
    d.set_item("late_fusion", lf)?;
    Ok(d)
}

#[pymodule]
fn moodnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MoodnetError", m.py().get_type::<MoodnetError>())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySvr>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(r2_score, m)?)?;
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(classical_audio_features, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_grid, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
