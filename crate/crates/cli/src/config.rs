//! `key = value` run configuration. Every key has a default; unknown keys
//! are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use moodnet::classical::{ForestOptions, SvrGrid, TextFeatureOptions};
use moodnet::dataset::{NormSource, SegmentConfig};
use moodnet::eval::WeightSelection;
use moodnet::nn::Activation;
use moodnet::text::{Word2VecConfig, Word2VecMode};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub dropout: f64,
    pub activation: Activation,
    pub segment_seconds: f64,
    pub extracts: usize,
    pub words: usize,
    pub pitch_semitones: f64,
    pub embedding_dims: usize,
    pub w2v_mode: Word2VecMode,
    pub w2v_window: usize,
    pub w2v_negatives: usize,
    pub w2v_epochs: usize,
    pub w2v_learning_rate: f64,
    pub w2v_min_count: u64,
    pub split_fractions: [f64; 3],
    pub norm_source: NormSource,
    pub svr_c: Vec<f64>,
    pub svr_epsilon: Vec<f64>,
    pub svr_gamma_scale: Vec<f64>,
    pub svr_kernel: String,
    pub svr_tol: f64,
    pub svr_max_iter: usize,
    pub forest_trees: usize,
    pub forest_min_leaf: usize,
    pub forest_max_depth: Option<usize>,
    pub forest_bootstrap: bool,
    pub tfidf_top_k: usize,
    pub tfidf_max_n: usize,
    pub fusion_selection: WeightSelection,
}

impl Default for Config {
    fn default() -> Self {
        let seg = SegmentConfig::default();
        let w2v = Word2VecConfig::default();
        let grid = SvrGrid::default();
        let forest = ForestOptions::default();
        let text = TextFeatureOptions::default();
        Self {
            seed: 0,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            dropout: 0.5,
            activation: Activation::Relu,
            segment_seconds: seg.segment_seconds,
            extracts: seg.extracts,
            words: seg.words,
            pitch_semitones: seg.pitch_semitones,
            embedding_dims: w2v.dims,
            w2v_mode: w2v.mode,
            w2v_window: w2v.window,
            w2v_negatives: w2v.negatives,
            w2v_epochs: w2v.epochs,
            w2v_learning_rate: w2v.learning_rate,
            w2v_min_count: w2v.min_count,
            split_fractions: [0.6, 0.2, 0.2],
            norm_source: NormSource::Train,
            svr_c: grid.c,
            svr_epsilon: grid.epsilon,
            svr_gamma_scale: grid.gamma_scale,
            svr_kernel: "rbf".into(),
            svr_tol: grid.tol,
            svr_max_iter: grid.max_iter,
            forest_trees: forest.n_trees,
            forest_min_leaf: forest.min_leaf,
            forest_max_depth: forest.max_depth,
            forest_bootstrap: forest.bootstrap,
            tfidf_top_k: text.top_k,
            tfidf_max_n: text.max_n,
            fusion_selection: WeightSelection::Validation,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::usage(format!("config key {key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "activation" => self.activation = parse(key, v)?,
            "segment_seconds" => self.segment_seconds = parse(key, v)?,
            "extracts" => self.extracts = parse(key, v)?,
            "words" => self.words = parse(key, v)?,
            "pitch_semitones" => self.pitch_semitones = parse(key, v)?,
            "embedding_dims" => self.embedding_dims = parse(key, v)?,
            "w2v_mode" => {
                self.w2v_mode = match v.to_ascii_lowercase().as_str() {
                    "skipgram" | "skip-gram" => Word2VecMode::SkipGram,
                    "cbow" => Word2VecMode::Cbow,
                    _ => return Err(CliError::usage(format!("w2v_mode must be skipgram or cbow, got {v:?}"))),
                }
            }
            "w2v_window" => self.w2v_window = parse(key, v)?,
            "w2v_negatives" => self.w2v_negatives = parse(key, v)?,
            "w2v_epochs" => self.w2v_epochs = parse(key, v)?,
            "w2v_learning_rate" => self.w2v_learning_rate = parse(key, v)?,
            "w2v_min_count" => self.w2v_min_count = parse(key, v)?,
            "split_fractions" => {
                let f = list(key, v)?;
                self.split_fractions = f
                    .try_into()
                    .map_err(|_| CliError::usage("split_fractions needs three values".to_string()))?;
            }
            "norm_source" => self.norm_source = v.parse().map_err(|e| CliError::usage(format!("{e}")))?,
            "svr_c" => self.svr_c = list(key, v)?,
            "svr_epsilon" => self.svr_epsilon = list(key, v)?,
            "svr_gamma_scale" => self.svr_gamma_scale = list(key, v)?,
            "svr_kernel" => {
                if v != "rbf" && v != "linear" {
                    return Err(CliError::usage(format!("svr_kernel must be rbf or linear, got {v:?}")));
                }
                self.svr_kernel = v.to_string();
            }
            "svr_tol" => self.svr_tol = parse(key, v)?,
            "svr_max_iter" => self.svr_max_iter = parse(key, v)?,
            "forest_trees" => self.forest_trees = parse(key, v)?,
            "forest_min_leaf" => self.forest_min_leaf = parse(key, v)?,
            "forest_max_depth" => {
                self.forest_max_depth = if v == "none" { None } else { Some(parse(key, v)?) };
            }
            "forest_bootstrap" => self.forest_bootstrap = parse(key, v)?,
            "tfidf_top_k" => self.tfidf_top_k = parse(key, v)?,
            "tfidf_max_n" => self.tfidf_max_n = parse(key, v)?,
            "fusion_selection" => {
                self.fusion_selection = match v {
                    "validation" => WeightSelection::Validation,
                    "reported" => WeightSelection::Reported,
                    _ => return Err(CliError::usage(format!("fusion_selection must be validation or reported, got {v:?}"))),
                }
            }
            _ => return Err(CliError::usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key in file order, suitable for `load`.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("dropout", self.dropout.to_string());
        kv("activation", self.activation.name().to_string());
        kv("segment_seconds", self.segment_seconds.to_string());
        kv("extracts", self.extracts.to_string());
        kv("words", self.words.to_string());
        kv("pitch_semitones", self.pitch_semitones.to_string());
        kv("embedding_dims", self.embedding_dims.to_string());
        kv(
            "w2v_mode",
            match self.w2v_mode {
                Word2VecMode::SkipGram => "skipgram",
                Word2VecMode::Cbow => "cbow",
            }
            .to_string(),
        );
        kv("w2v_window", self.w2v_window.to_string());
        kv("w2v_negatives", self.w2v_negatives.to_string());
        kv("w2v_epochs", self.w2v_epochs.to_string());
        kv("w2v_learning_rate", self.w2v_learning_rate.to_string());
        kv("w2v_min_count", self.w2v_min_count.to_string());
        kv("split_fractions", join(&self.split_fractions));
        kv(
            "norm_source",
            match self.norm_source {
                NormSource::Train => "train",
                NormSource::All => "all",
            }
            .to_string(),
        );
        kv("svr_c", join(&self.svr_c));
        kv("svr_epsilon", join(&self.svr_epsilon));
        kv("svr_gamma_scale", join(&self.svr_gamma_scale));
        kv("svr_kernel", self.svr_kernel.clone());
        kv("svr_tol", self.svr_tol.to_string());
        kv("svr_max_iter", self.svr_max_iter.to_string());
        kv("forest_trees", self.forest_trees.to_string());
        kv("forest_min_leaf", self.forest_min_leaf.to_string());
        kv("forest_max_depth", self.forest_max_depth.map_or("none".into(), |d| d.to_string()));
        kv("forest_bootstrap", self.forest_bootstrap.to_string());
        kv("tfidf_top_k", self.tfidf_top_k.to_string());
        kv("tfidf_max_n", self.tfidf_max_n.to_string());
        kv(
            "fusion_selection",
            match self.fusion_selection {
                WeightSelection::Validation => "validation",
                WeightSelection::Reported => "reported",
            }
            .to_string(),
        );
        s
    }

    pub fn segments(&self) -> SegmentConfig {
        SegmentConfig {
            segment_seconds: self.segment_seconds,
            extracts: self.extracts,
            words: self.words,
            pitch_semitones: self.pitch_semitones,
        }
    }

    pub fn word2vec(&self) -> Word2VecConfig {
        Word2VecConfig {
            dims: self.embedding_dims,
            window: self.w2v_window,
            negatives: self.w2v_negatives,
            epochs: self.w2v_epochs,
            learning_rate: self.w2v_learning_rate,
            min_count: self.w2v_min_count,
            mode: self.w2v_mode,
            seed: self.seed,
        }
    }

    pub fn svr_grid(&self) -> SvrGrid {
        SvrGrid {
            c: self.svr_c.clone(),
            epsilon: self.svr_epsilon.clone(),
            gamma_scale: self.svr_gamma_scale.clone(),
            rbf: self.svr_kernel == "rbf",
            tol: self.svr_tol,
            max_iter: self.svr_max_iter,
        }
    }

    pub fn forest(&self) -> ForestOptions {
        ForestOptions {
            n_trees: self.forest_trees,
            max_depth: self.forest_max_depth,
            min_leaf: self.forest_min_leaf,
            bootstrap: self.forest_bootstrap,
            seed: self.seed,
        }
    }

    pub fn text_features(&self) -> TextFeatureOptions {
        TextFeatureOptions {
            top_k: self.tfidf_top_k,
            max_n: self.tfidf_max_n,
        }
    }
}
