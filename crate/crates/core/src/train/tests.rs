use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::Augmentation;
use crate::nn::{Architecture, Branch, BuildOptions, LayerSpec};

fn small_model(seed: u64) -> ModelGraph {
    let arch = Architecture {
        branches: vec![Branch {
            name: "audio".into(),
            input: vec![4, 5],
            layers: vec![LayerSpec::MeanEmbed],
        }],
        head: vec![LayerSpec::Dense { units: 2 }],
    };
    let opts = BuildOptions {
        seed,
        ..BuildOptions::default()
    };
    ModelGraph::from_architecture(ModelKind::AudioConvNet, arch, opts).unwrap()
}

fn linear_segments(n: usize, seed: u64) -> Vec<SegmentSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let data: Vec<f64> = (0..20).map(|_| rng.gen_range(0.1..1.0)).collect();
            let means: Vec<f64> = data.chunks(5).map(|r| r.iter().sum::<f64>() / 5.0).collect();
            let label = MoodLabel::new(means[0] - means[1], 0.5 * means[2] + means[3]);
            SegmentSample {
                track_id: format!("t{i}"),
                augmentation: Augmentation::Original,
                audio: Some(Tensor::new(vec![4, 5], data).unwrap()),
                lyrics: None,
                label,
            }
        })
        .collect()
}

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: 8,
        epochs,
        patience: epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn learns_a_linear_map_of_input_means() {
    let data = linear_segments(32, 1);
    let mut model = small_model(3);
    let h = train(&mut model, &data, &[], &cfg(200, 0.05)).unwrap();
    assert!(h.epochs.len() <= 200);
    let last = h.epochs.last().unwrap().train_loss;
    assert!(last < 0.05, "final loss {last}");
    assert!(evaluate_loss(&model, &data, 8).unwrap() < 0.05);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = linear_segments(16, 2);
    let mut model = small_model(4);
    let before = model.params().clone();
    train(&mut model, &data, &[], &cfg(3, 0.0)).unwrap();
    for (a, b) in before.iter().zip(model.params().iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn same_seed_gives_identical_history() {
    let data = linear_segments(24, 5);
    let valid = linear_segments(8, 6);
    let run = || {
        let mut m = small_model(7);
        train(&mut m, &data, &valid, &cfg(10, 0.01)).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let data = linear_segments(24, 8);
    // Validation targets unrelated to the inputs, so validation loss soon
    // stops improving.
    let mut valid = linear_segments(8, 9);
    for v in &mut valid {
        v.label = MoodLabel::new(-v.label.valence, 3.0);
    }
    let mut model = small_model(1);
    let c = TrainConfig {
        patience: 3,
        ..cfg(60, 0.05)
    };
    let h = train(&mut model, &data, &valid, &c).unwrap();
    let best = h.epochs.iter().filter_map(|e| e.valid_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[h.best_epoch - 1].valid_loss, Some(best));
    assert!(h.epochs.len() < 60);
    assert!(h.epochs.len() - h.best_epoch == 3);
    assert!(evaluate_loss(&model, &valid, 8).unwrap() <= best);
}

#[test]
fn divergence_names_the_epoch() {
    let data = linear_segments(8, 3);
    let mut model = small_model(0);
    // The first Adam step moves every weight by about 1e300, so the second
    // batch of the first epoch overflows.
    let c = TrainConfig {
        batch_size: 4,
        ..cfg(5, 1e300)
    };
    let r = train(&mut model, &data, &[], &c);
    assert!(matches!(
        r,
        Err(TrainError::Diverged { epoch: 1 })
    ), "{r:?}");
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    assert!(c.validate().is_ok());
    c.patience = 200;
    assert!(c.validate().is_err());
    c = TrainConfig {
        mode: Mode::Lyrics,
        ..TrainConfig::default()
    };
    assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
    let mut model = small_model(0);
    assert!(matches!(train(&mut model, &[], &[], &TrainConfig::default()), Err(TrainError::EmptyTrainingSet)));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut data = linear_segments(4, 1);
    data[0].audio = Some(Tensor::zeros(&[4, 6]));
    let mut model = small_model(0);
    assert!(train(&mut model, &data, &[], &cfg(1, 0.01)).is_err());
}

fn lyric_record(words: usize) -> TrackRecord {
    let mut r = TrackRecord::new("TRX", "a", "t", MoodLabel::new(0.0, 0.0));
    r.lyrics = Some((0..words).map(|i| format!("w{}", i % 3)).collect::<Vec<_>>().join(" "));
    r
}

fn embedder() -> LyricsEmbedder {
    use crate::text::{EmbeddingMatrix, Vocabulary};
    let corpus = vec![vec!["w0", "w1", "w2"]];
    let vocab = Vocabulary::from_corpus(&corpus, 1);
    let rows = vocab.len();
    let data = (0..rows * 4).map(|i| 1.0 + (i / 4) as f64 + (i % 4) as f64 * 0.1).collect();
    let vectors = Tensor::new(vec![rows, 4], data).unwrap();
    LyricsEmbedder {
        vocab,
        embeddings: EmbeddingMatrix { vectors },
    }
}

fn lyric_model() -> ModelGraph {
    let arch = Architecture {
        branches: vec![Branch {
            name: "lyrics".into(),
            input: vec![4, 6],
            layers: vec![LayerSpec::Flatten],
        }],
        head: vec![LayerSpec::Dense { units: 2 }],
    };
    ModelGraph::from_architecture(ModelKind::Lyrics(crate::nn::LyricsVariant::Lstm), arch, BuildOptions::default()).unwrap()
}

#[test]
fn short_track_prediction_equals_its_single_padded_segment() {
    let model = lyric_model();
    let seg = SegmentConfig {
        words: 6,
        ..SegmentConfig::default()
    };
    let r = lyric_record(4);
    let e = embedder();
    let p = predict_track(&model, &r, None, Some(&e), Mode::Lyrics, &seg).unwrap();
    let segs = inference_segments(&r, None, Some(&e), Mode::Lyrics, &seg).unwrap();
    let one = model.predict(&[Tensor::stack(&[segs[0].lyrics.clone().unwrap()]).unwrap()]).unwrap();
    assert!((p.valence - one.data()[0]).abs() < 1e-12);
    assert!((p.arousal - one.data()[1]).abs() < 1e-12);
}

#[test]
fn prediction_is_the_mean_over_segments() {
    let model = lyric_model();
    let seg = SegmentConfig {
        words: 6,
        ..SegmentConfig::default()
    };
    let r = lyric_record(40);
    let e = embedder();
    let segs = inference_segments(&r, None, Some(&e), Mode::Lyrics, &seg).unwrap();
    assert_eq!(segs.len(), 7);
    let batch = Tensor::stack(&segs.iter().map(|s| s.lyrics.clone().unwrap()).collect::<Vec<_>>()).unwrap();
    let out = model.predict(&[batch]).unwrap();
    let mean_v = out.data().chunks(2).map(|r| r[0]).sum::<f64>() / 7.0;
    let p = predict_track(&model, &r, None, Some(&e), Mode::Lyrics, &seg).unwrap();
    assert!((p.valence - mean_v).abs() < 1e-12);
    assert_eq!(p, predict_track(&model, &r, None, Some(&e), Mode::Lyrics, &seg).unwrap());

    let mut missing = r.clone();
    missing.lyrics = None;
    assert!(matches!(
        predict_track(&model, &missing, None, Some(&e), Mode::Lyrics, &seg),
        Err(TrainError::Dataset(DatasetError::MissingModality { .. }))
    ));
}

#[test]
fn history_csv_has_the_documented_header() {
    let h = TrainHistory {
        epochs: vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                valid_loss: Some(0.25),
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.4,
                valid_loss: None,
            },
        ],
        best_epoch: 1,
    };
    assert_eq!(h.to_csv_string(), "epoch,train_loss,valid_loss\n1,0.5,0.25\n2,0.4,\n");
}
