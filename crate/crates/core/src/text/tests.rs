use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn toks(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_string).collect()
}

#[test]
fn tokenize_examples() {
    assert_eq!(tokenize("Hello, world!"), vec!["hello", "world"]);
    assert_eq!(tokenize("Don't STOP"), vec!["don't", "stop"]);
    assert!(tokenize("").is_empty());
    assert_eq!(tokenize("  ... 'quoted' --  rock'n'roll\n"), vec!["quoted", "rock'n'roll"]);
}

fn cluster_corpus(seed: u64) -> (Vec<Vec<String>>, Vec<String>, Vec<String>) {
    let a: Vec<String> = (0..8).map(|i| format!("sun{i}")).collect();
    let b: Vec<String> = (0..8).map(|i| format!("rain{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = (0..400)
        .map(|s| {
            let topic = if s % 2 == 0 { &a } else { &b };
            (0..10).map(|_| topic[rng.gen_range(0..topic.len())].clone()).collect()
        })
        .collect();
    (corpus, a, b)
}

fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nx * ny)
}

fn mean_cosines(m: &Word2VecModel, a: &[String], b: &[String]) -> (f64, f64) {
    let row = |w: &String| m.embeddings.row(m.vocab.index_of(w)).to_vec();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for (i, x) in a.iter().chain(b).enumerate() {
        for (j, y) in a.iter().chain(b).enumerate() {
            if i >= j {
                continue;
            }
            let c = cosine(&row(x), &row(y));
            if (i < a.len()) == (j < a.len()) {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    (within / nw as f64, cross / nc as f64)
}

#[test]
fn skipgram_separates_topic_clusters() {
    let (corpus, a, b) = cluster_corpus(1);
    let cfg = Word2VecConfig {
        dims: 20,
        epochs: 5,
        seed: 3,
        ..Word2VecConfig::default()
    };
    let m = train_word2vec(&corpus, &cfg).unwrap();
    let (within, cross) = mean_cosines(&m, &a, &b);
    assert!(within > cross + 0.2, "within {within} cross {cross}");
    // Loss non-increasing across epochs within a 5% band.
    for w in m.loss_history.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "{:?}", m.loss_history);
    }
}

#[test]
fn cbow_separates_topic_clusters() {
    let (corpus, a, b) = cluster_corpus(2);
    let cfg = Word2VecConfig {
        dims: 20,
        epochs: 8,
        mode: Word2VecMode::Cbow,
        seed: 3,
        ..Word2VecConfig::default()
    };
    let m = train_word2vec(&corpus, &cfg).unwrap();
    let (within, cross) = mean_cosines(&m, &a, &b);
    assert!(within > cross, "within {within} cross {cross}");
}

#[test]
fn single_sentence_and_determinism() {
    let corpus = vec![toks("the cat sat on the mat")];
    let cfg = Word2VecConfig {
        epochs: 1,
        seed: 9,
        ..Word2VecConfig::default()
    };
    let m = train_word2vec(&corpus, &cfg).unwrap();
    assert_eq!(m.vocab.len(), 5 + 1);
    assert_eq!(m.vocab.word(0), UNK);
    assert_eq!(m.vocab.word(1), "the");
    assert_eq!(m.embeddings.vectors.shape(), &[6, 100]);
    let again = train_word2vec(&corpus, &cfg).unwrap();
    let bits = |m: &Word2VecModel| m.embeddings.vectors.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&m), bits(&again));
    // UNK row is the mean of the word rows.
    for k in 0..100 {
        let mean = (1..6).map(|i| m.embeddings.row(i)[k]).sum::<f64>() / 5.0;
        assert!((m.embeddings.row(0)[k] - mean).abs() < 1e-15);
    }
}

#[test]
fn empty_corpus_is_an_error() {
    let empty: Vec<Vec<String>> = vec![vec![]];
    assert!(matches!(train_word2vec(&empty, &Word2VecConfig::default()), Err(TextError::EmptyCorpus)));
    let cfg = Word2VecConfig {
        window: 0,
        ..Word2VecConfig::default()
    };
    assert!(train_word2vec(&[toks("a b")], &cfg).is_err());
}

fn toy_embeddings() -> (Vocabulary, EmbeddingMatrix) {
    let vocab = Vocabulary::from_corpus(&[toks("up up down")], 1);
    let vectors = Tensor::new(vec![3, 2], vec![0.5, 0.5, 1.0, 2.0, -1.0, -2.0]).unwrap();
    (vocab, EmbeddingMatrix { vectors })
}

#[test]
fn embed_sequence_padding_and_unknowns() {
    let (vocab, emb) = toy_embeddings();
    let t = embed_sequence(&toks("up zzz down"), &vocab, &emb, 5).unwrap();
    assert_eq!(t.shape(), &[2, 5]);
    assert_eq!(t.data(), &[1.0, 0.5, -1.0, 0.0, 0.0, 2.0, 0.5, -2.0, 0.0, 0.0]);
    assert!(matches!(embed_sequence(&toks("up up up"), &vocab, &emb, 2), Err(TextError::OverLength { len: 3, max: 2 })));
}

#[test]
fn embed_full_segment_has_no_zero_columns() {
    let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
    let m = train_word2vec(&[words.clone()], &Word2VecConfig { epochs: 1, ..Word2VecConfig::default() }).unwrap();
    let t = embed_sequence(&words, &m.vocab, &m.embeddings, SEGMENT_WORDS).unwrap();
    assert_eq!(t.shape(), &[100, 50]);
    for c in 0..50 {
        assert!((0..100).any(|k| t.at(&[k, c]) != 0.0));
    }
    let t = embed_sequence(&words[..30], &m.vocab, &m.embeddings, SEGMENT_WORDS).unwrap();
    for c in 30..50 {
        assert!((0..100).all(|k| t.at(&[k, c]) == 0.0));
    }
}

#[test]
fn mean_embedding_examples() {
    let (vocab, emb) = toy_embeddings();
    assert_eq!(mean_embedding(&toks("up"), &vocab, &emb).data(), &[1.0, 2.0]);
    assert_eq!(mean_embedding(&toks("up down"), &vocab, &emb).data(), &[0.0, 0.0]);
    assert_eq!(mean_embedding::<String>(&[], &vocab, &emb).data(), &[0.0, 0.0]);
}

#[test]
fn vocab_and_embedding_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = train_word2vec(&[toks("a b c a")], &Word2VecConfig { epochs: 1, dims: 4, ..Word2VecConfig::default() }).unwrap();
    let vp = dir.path().join("vocab.tsv");
    m.vocab.save(&vp).unwrap();
    assert_eq!(std::fs::read_to_string(&vp).unwrap(), "<unk>\t0\na\t2\nb\t1\nc\t1\n");
    assert_eq!(Vocabulary::load(&vp).unwrap(), m.vocab);

    let ep = dir.path().join("emb.txt");
    m.embeddings.save_text(&m.vocab, &ep).unwrap();
    let (vocab, emb) = EmbeddingMatrix::load_text(&ep).unwrap();
    assert_eq!(vocab.words(), m.vocab.words());
    assert_eq!(emb, m.embeddings);

    // Pretrained file without an <unk> line gets the mean row.
    std::fs::write(&ep, "x 1 2\ny 3 4\n").unwrap();
    let (vocab, emb) = EmbeddingMatrix::load_text(&ep).unwrap();
    assert_eq!(vocab.index_of("y"), 2);
    assert_eq!(emb.row(0), &[2.0, 3.0]);
    std::fs::write(&ep, "x 1 2\ny 3\n").unwrap();
    assert!(matches!(EmbeddingMatrix::load_text(&ep), Err(TextError::Parse { line: 2, .. })));
}

proptest! {
    #[test]
    fn embed_columns_match_rows(idx in prop::collection::vec(0usize..4, 0..8)) {
        let (vocab, emb) = toy_embeddings();
        let words = ["<unk>", "up", "down", "nope"];
        let tokens: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
        let t = embed_sequence(&tokens, &vocab, &emb, 8).unwrap();
        for c in 0..8 {
            for k in 0..2 {
                let expect = if c < tokens.len() { emb.row(vocab.index_of(tokens[c]))[k] } else { 0.0 };
                prop_assert_eq!(t.at(&[k, c]), expect);
            }
        }
    }

    #[test]
    fn mean_embedding_is_permutation_invariant(idx in prop::collection::vec(0usize..3, 1..10), seed in 0u64..100) {
        let (vocab, emb) = toy_embeddings();
        let words = ["up", "down", "other"];
        let tokens: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
        let mut shuffled = tokens.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let (a, b) = (mean_embedding(&tokens, &vocab, &emb), mean_embedding(&shuffled, &vocab, &emb));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
