//! Skip-gram (or CBOW) word2vec with negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingMatrix, TextError, Vocabulary, EMBED_DIM};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Word2VecMode {
    SkipGram,
    Cbow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word2VecConfig {
    pub dims: usize,
    /// Maximum context distance; each center draws its effective window
    /// uniformly from `1..=window`.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
    pub mode: Word2VecMode,
    pub seed: u64,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Self {
            dims: EMBED_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 1,
            mode: Word2VecMode::SkipGram,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word2VecModel {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    /// Mean negative-sampling loss per update, one entry per epoch.
    pub loss_history: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cumulative unigram^0.75 distribution over non-UNK indices.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(vocab: &Vocabulary) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..vocab.len())
            .map(|i| {
                acc += (vocab.count(i) as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("vocabulary has words");
        let u = rng.gen::<f64>() * total;
        1 + self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// One positive and `negatives` noise targets for hidden vector `h`.
/// Accumulates the gradient w.r.t. `h` into `grad_h`, updates the output
/// vectors in place, and returns the loss.
#[allow(clippy::too_many_arguments)]
fn ns_update(
    h: &[f64],
    target: usize,
    w_out: &mut [f64],
    dims: usize,
    negatives: usize,
    noise: &NoiseTable,
    rng: &mut impl Rng,
    lr: f64,
    grad_h: &mut [f64],
) -> f64 {
    let mut loss = 0.0;
    for n in 0..=negatives {
        let (idx, label) = if n == 0 {
            (target, 1.0)
        } else {
            let s = noise.sample(rng);
            if s == target {
                continue;
            }
            (s, 0.0)
        };
        let out = &mut w_out[idx * dims..(idx + 1) * dims];
        let score = sigmoid(h.iter().zip(out.iter()).map(|(a, b)| a * b).sum());
        loss -= if label == 1.0 { score.max(1e-12).ln() } else { (1.0 - score).max(1e-12).ln() };
        let g = lr * (label - score);
        for k in 0..dims {
            grad_h[k] += g * out[k];
            out[k] += g * h[k];
        }
    }
    loss
}

/// Trains embeddings on tokenized sentences. The learning rate decays
/// linearly to `1e-4` of its start over all epochs; the `<unk>` row is the
/// mean of the trained vectors.
pub fn train_word2vec<S: AsRef<str>>(corpus: &[Vec<S>], cfg: &Word2VecConfig) -> Result<Word2VecModel, TextError> {
    if cfg.window == 0 || cfg.negatives == 0 || cfg.dims == 0 || cfg.epochs == 0 {
        return Err(TextError::InvalidArgument("window, negatives, dims and epochs must be positive".into()));
    }
    let vocab = Vocabulary::from_corpus(corpus, cfg.min_count);
    if vocab.len() < 2 {
        return Err(TextError::EmptyCorpus);
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().map(|w| vocab.index_of(w.as_ref())).filter(|&i| i != 0).collect())
        .collect();
    let total_words: usize = sentences.iter().map(Vec::len).sum();
    let d = cfg.dims;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_in: Vec<f64> = (0..v * d).map(|_| (rng.gen::<f64>() - 0.5) / d as f64).collect();
    let mut w_out = vec![0.0; v * d];
    let noise = NoiseTable::new(&vocab);
    let total_steps = (cfg.epochs * total_words).max(1) as f64;
    let mut step = 0usize;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; d];
    let mut hidden = vec![0.0; d];
    for _ in 0..cfg.epochs {
        let (mut loss_sum, mut updates) = (0.0, 0usize);
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let lr = (cfg.learning_rate * (1.0 - step as f64 / total_steps)).max(cfg.learning_rate * 1e-4);
                step += 1;
                let b = rng.gen_range(1..=cfg.window);
                let lo = pos.saturating_sub(b);
                let hi = (pos + b).min(sent.len() - 1);
                let context: Vec<usize> = (lo..=hi).filter(|&j| j != pos).map(|j| sent[j]).collect();
                if context.is_empty() {
                    continue;
                }
                match cfg.mode {
                    Word2VecMode::SkipGram => {
                        for &ctx in &context {
                            grad.fill(0.0);
                            let h = &w_in[center * d..(center + 1) * d];
                            hidden.copy_from_slice(h);
                            loss_sum += ns_update(&hidden, ctx, &mut w_out, d, cfg.negatives, &noise, &mut rng, lr, &mut grad);
                            updates += 1;
                            w_in[center * d..(center + 1) * d].iter_mut().zip(&grad).for_each(|(w, g)| *w += g);
                        }
                    }
                    Word2VecMode::Cbow => {
                        hidden.fill(0.0);
                        for &ctx in &context {
                            hidden.iter_mut().zip(&w_in[ctx * d..(ctx + 1) * d]).for_each(|(h, w)| *h += w);
                        }
                        hidden.iter_mut().for_each(|h| *h /= context.len() as f64);
                        grad.fill(0.0);
                        loss_sum += ns_update(&hidden, center, &mut w_out, d, cfg.negatives, &noise, &mut rng, lr, &mut grad);
                        updates += 1;
                        for &ctx in &context {
                            w_in[ctx * d..(ctx + 1) * d].iter_mut().zip(&grad).for_each(|(w, g)| *w += g);
                        }
                    }
                }
            }
        }
        loss_history.push(if updates > 0 { loss_sum / updates as f64 } else { 0.0 });
    }
    let mut unk = vec![0.0; d];
    for i in 1..v {
        unk.iter_mut().zip(&w_in[i * d..(i + 1) * d]).for_each(|(u, w)| *u += w / (v - 1) as f64);
    }
    w_in[..d].copy_from_slice(&unk);
    Ok(Word2VecModel {
        vocab,
        embeddings: EmbeddingMatrix {
            vectors: Tensor::new(vec![v, d], w_in).expect("shape matches data"),
        },
        loss_history,
    })
}
