//! Hand-engineered lyric features: n-gram TF-IDF, lexicon aggregates and a
//! few stylistic counts.

use std::collections::{HashMap, HashSet};

use super::ClassicalError;
use crate::checkpoint::NamedTensors;
use crate::dataset::{Lexicon, LexiconEntry};
use crate::tensor::Tensor;
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureOptions {
    pub top_k: usize,
    /// Longest n-gram (1 to 3 by default).
    pub max_n: usize,
}

impl Default for TextFeatureOptions {
    fn default() -> Self {
        Self { top_k: 2000, max_n: 3 }
    }
}

pub const LEXICON_FEATURES: [&str; 5] = ["lex_valence_mean", "lex_valence_std", "lex_arousal_mean", "lex_arousal_std", "lex_oov_ratio"];
pub const STYLE_FEATURES: [&str; 4] = ["lines", "words_per_line", "type_token_ratio", "punctuation_rate"];

/// Maps lyrics to `[tf-idf over the n-gram vocabulary] ++ lexicon ++ style`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureExtractor {
    pub ngrams: Vec<String>,
    /// `ln(N / df)` over the training documents.
    pub idf: Vec<f64>,
    pub max_n: usize,
    pub lexicon: Lexicon,
    index: HashMap<String, usize>,
}

fn ngrams(tokens: &[String], max_n: usize) -> Vec<String> {
    (1..=max_n)
        .flat_map(|n| tokens.windows(n).map(|w| w.join(" ")))
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}

/// Keeps the `top_k` n-grams by document frequency in `train` (ties broken
/// alphabetically).
pub fn fit_text_features<S: AsRef<str>>(train: &[S], lexicon: &Lexicon, opts: &TextFeatureOptions) -> Result<TextFeatureExtractor, ClassicalError> {
    if train.is_empty() {
        return Err(ClassicalError::EmptyCorpus);
    }
    if opts.max_n == 0 {
        return Err(ClassicalError::InvalidData("n-gram order must be positive".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in train {
        let grams: HashSet<String> = ngrams(&tokenize(doc.as_ref()), opts.max_n).into_iter().collect();
        for g in grams {
            *df.entry(g).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(opts.top_k);
    let n = train.len() as f64;
    let (ngrams, idf): (Vec<String>, Vec<f64>) = ranked.into_iter().map(|(g, d)| (g, (n / d as f64).ln())).unzip();
    Ok(TextFeatureExtractor::from_parts(ngrams, idf, opts.max_n, lexicon.clone()))
}

impl TextFeatureExtractor {
    fn from_parts(ngrams: Vec<String>, idf: Vec<f64>, max_n: usize, lexicon: Lexicon) -> Self {
        let index = ngrams.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        Self {
            ngrams,
            idf,
            max_n,
            lexicon,
            index,
        }
    }

    pub fn dims(&self) -> usize {
        self.ngrams.len() + LEXICON_FEATURES.len() + STYLE_FEATURES.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.ngrams
            .iter()
            .map(|g| format!("tfidf:{g}"))
            .chain(LEXICON_FEATURES.iter().chain(&STYLE_FEATURES).map(|s| s.to_string()))
            .collect()
    }

    /// TF is the n-gram count over the number of n-grams of the same order
    /// in the document. A document without lexicon words has OOV ratio 1
    /// and zero lexicon means and deviations.
    pub fn extract(&self, text: &str) -> Vec<f64> {
        let tokens = tokenize(text);
        let mut out = vec![0.0; self.dims()];
        for n in 1..=self.max_n {
            let total = tokens.len().saturating_sub(n - 1);
            for w in tokens.windows(n) {
                if let Some(&i) = self.index.get(&w.join(" ")) {
                    out[i] += 1.0 / total as f64;
                }
            }
        }
        for (v, idf) in out.iter_mut().zip(&self.idf) {
            *v *= idf;
        }

        let hits: Vec<(f64, f64)> = tokens
            .iter()
            .filter_map(|t| self.lexicon.get(t).map(|l| (l.valence, l.arousal)))
            .collect();
        let (vm, vs) = mean_std(&hits.iter().map(|h| h.0).collect::<Vec<_>>());
        let (am, as_) = mean_std(&hits.iter().map(|h| h.1).collect::<Vec<_>>());
        let oov = if tokens.is_empty() { 1.0 } else { 1.0 - hits.len() as f64 / tokens.len() as f64 };
        let k = self.ngrams.len();
        out[k..k + 5].copy_from_slice(&[vm, vs, am, as_, oov]);

        let lines = text.lines().filter(|l| !l.trim().is_empty()).count() as f64;
        let words_per_line = if lines > 0.0 { tokens.len() as f64 / lines } else { 0.0 };
        let distinct = tokens.iter().collect::<HashSet<_>>().len() as f64;
        let ttr = if tokens.is_empty() { 0.0 } else { distinct / tokens.len() as f64 };
        let visible = text.chars().filter(|c| !c.is_whitespace()).count() as f64;
        let punct = text.chars().filter(|c| c.is_ascii_punctuation()).count() as f64;
        let punct_rate = if visible > 0.0 { punct / visible } else { 0.0 };
        out[k + 5..].copy_from_slice(&[lines, words_per_line, ttr, punct_rate]);
        out
    }

    pub fn to_named_tensors(&self, prefix: &str, out: &mut NamedTensors) {
        out.push_str(format!("{prefix}.ngrams"), &self.ngrams.join("\n"));
        out.push(format!("{prefix}.idf"), Tensor::from_vec(self.idf.clone()));
        out.push(format!("{prefix}.max_n"), Tensor::scalar(self.max_n as f64));
        let entries = self.lexicon.entries();
        out.push_str(
            format!("{prefix}.lexicon.words"),
            &entries.iter().map(|e| e.word.as_str()).collect::<Vec<_>>().join("\n"),
        );
        let values = entries.iter().flat_map(|e| [e.valence, e.arousal]).collect();
        out.push(
            format!("{prefix}.lexicon.values"),
            Tensor::new(vec![entries.len(), 2], values).expect("two columns"),
        );
    }

    pub fn from_named_tensors(prefix: &str, t: &NamedTensors) -> Result<Self, ClassicalError> {
        let split = |s: String| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split('\n').map(str::to_string).collect()
            }
        };
        let ngrams = split(t.get_str(&format!("{prefix}.ngrams"))?);
        let idf = t.get(&format!("{prefix}.idf"))?.data().to_vec();
        let max_n = t.get(&format!("{prefix}.max_n"))?.item()? as usize;
        let words = split(t.get_str(&format!("{prefix}.lexicon.words"))?);
        let values = t.get(&format!("{prefix}.lexicon.values"))?.data();
        if idf.len() != ngrams.len() || values.len() != 2 * words.len() {
            return Err(ClassicalError::Format(format!("{prefix}: table lengths disagree")));
        }
        let lexicon = Lexicon::new(words.into_iter().zip(values.chunks(2)).map(|(word, v)| LexiconEntry {
            word,
            valence: v[0],
            arousal: v[1],
        }))?;
        Ok(Self::from_parts(ngrams, idf, max_n, lexicon))
    }
}
