//! Lyrics tokenization, word2vec embeddings and embedded sequences.

mod word2vec;

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub use word2vec::{train_word2vec, Word2VecConfig, Word2VecModel, Word2VecMode};

use crate::tensor::Tensor;

pub const UNK: &str = "<unk>";
pub const EMBED_DIM: usize = 100;
pub const SEGMENT_WORDS: usize = 50;

#[derive(Debug)]
pub enum TextError {
    EmptyCorpus,
    InvalidArgument(String),
    OverLength { len: usize, max: usize },
    Parse { line: usize, message: String },
    Io(io::Error),
}

impl fmt::Display for TextError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyCorpus => write!(f, "corpus has no tokens"),
            Self::InvalidArgument(m) => write!(f, "{m}"),
            Self::OverLength { len, max } => write!(f, "sequence of {len} tokens exceeds length {max}"),
            Self::Parse { line, message } => write!(f, "line {line}: {message}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TextError {}

impl From<io::Error> for TextError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of each token, so inner apostrophes survive.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word index with `<unk>` at 0. Other entries are ordered by descending
/// count, ties by word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_corpus<S: AsRef<str>>(corpus: &[Vec<S>], min_count: u64) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus {
            for w in sentence {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count.max(1) && w != UNK)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab = Self::from_entries(std::iter::once((UNK.to_string(), 0)));
        for (w, c) in entries {
            vocab.push(w.to_string(), c);
        }
        vocab
    }

    fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut v = Self {
            words: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for (w, c) in entries {
            v.push(w, c);
        }
        v
    }

    fn push(&mut self, word: String, count: u64) {
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.counts.push(count);
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of `word`, or 0 (`<unk>`) when absent.
    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.get(word).is_some_and(|&i| i != 0)
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `word<TAB>count` lines in index order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextError> {
        let mut w = BufWriter::new(File::create(path)?);
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(w, "{word}\t{count}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let r = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let (word, count) = line.split_once('\t').ok_or_else(|| TextError::Parse {
                line: i + 1,
                message: "expected word<TAB>count".into(),
            })?;
            let count = count.trim().parse::<u64>().map_err(|e| TextError::Parse {
                line: i + 1,
                message: format!("bad count: {e}"),
            })?;
            entries.push((word.to_string(), count));
        }
        if entries.first().map(|(w, _)| w.as_str()) != Some(UNK) {
            entries.insert(0, (UNK.to_string(), 0));
        }
        Ok(Self::from_entries(entries))
    }
}

/// One row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub vectors: Tensor,
}

impl EmbeddingMatrix {
    pub fn dims(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dims();
        &self.vectors.data()[i * d..(i + 1) * d]
    }

    /// Plain text, one `word v1 ... vd` line per vocabulary entry.
    pub fn save_text(&self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<(), TextError> {
        let mut w = BufWriter::new(File::create(path)?);
        for i in 0..self.rows() {
            write!(w, "{}", vocab.word(i))?;
            for v in self.row(i) {
                write!(w, " {v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `word v1 ... vd` lines (e.g. pretrained vectors). Without an
    /// explicit `<unk>` line the unknown row is the mean of all vectors.
    pub fn load_text(path: impl AsRef<Path>) -> Result<(Vocabulary, EmbeddingMatrix), TextError> {
        let r = BufReader::new(File::open(path)?);
        let mut words = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TextError::Parse {
                    line: i + 1,
                    message: format!("bad value: {e}"),
                })?;
            if v.is_empty() || rows.first().is_some_and(|r| r.len() != v.len()) || v.iter().any(|x| !x.is_finite()) {
                return Err(TextError::Parse {
                    line: i + 1,
                    message: "vector length differs from the first line or is not finite".into(),
                });
            }
            words.push(word.to_string());
            rows.push(v);
        }
        if rows.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let dims = rows[0].len();
        if words[0] != UNK {
            let mut mean = vec![0.0; dims];
            for r in &rows {
                mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / rows.len() as f64);
            }
            words.insert(0, UNK.to_string());
            rows.insert(0, mean);
        }
        let vocab = Vocabulary::from_entries(words.into_iter().enumerate().map(|(i, w)| (w, u64::from(i != 0))));
        let vectors = Tensor::new(vec![rows.len(), dims], rows.concat()).expect("rows have equal length");
        Ok((vocab, EmbeddingMatrix { vectors }))
    }
}

/// `[dims, length]` matrix whose column `i` is the vector of token `i`
/// (`<unk>` for unknown words); columns past the tokens are zero.
pub fn embed_sequence<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    emb: &EmbeddingMatrix,
    length: usize,
) -> Result<Tensor, TextError> {
    if length == 0 {
        return Err(TextError::InvalidArgument("sequence length must be positive".into()));
    }
    if tokens.len() > length {
        return Err(TextError::OverLength {
            len: tokens.len(),
            max: length,
        });
    }
    let d = emb.dims();
    let mut out = vec![0.0; d * length];
    for (t, tok) in tokens.iter().enumerate() {
        for (k, v) in emb.row(vocab.index_of(tok.as_ref())).iter().enumerate() {
            out[k * length + t] = *v;
        }
    }
    Ok(Tensor::new(vec![d, length], out).expect("shape matches data"))
}

/// Mean of the token vectors; zero for an empty list.
pub fn mean_embedding<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, emb: &EmbeddingMatrix) -> Tensor {
    let d = emb.dims();
    let mut out = vec![0.0; d];
    for tok in tokens {
        out.iter_mut().zip(emb.row(vocab.index_of(tok.as_ref()))).for_each(|(o, v)| *o += v);
    }
    if !tokens.is_empty() {
        out.iter_mut().for_each(|o| *o /= tokens.len() as f64);
    }
    Tensor::from_vec(out)
}

#[cfg(test)]
mod tests;
