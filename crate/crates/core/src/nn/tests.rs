use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{GradCheckOptions, Graph, Mode};
use crate::tensor::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn small_opts(seed: u64) -> BuildOptions {
    BuildOptions {
        audio: AudioGeometry { bands: 5, frames: 64 },
        lyrics: LyricsGeometry { dims: 8, words: 12 },
        seed,
        ..BuildOptions::default()
    }
}

fn inputs_for(model: &ModelGraph, batch: usize, seed: u64) -> Vec<Tensor> {
    model
        .input_shapes()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut shape = vec![batch];
            shape.extend(s);
            random(&shape, seed + i as u64)
        })
        .collect()
}

#[test]
fn audio_convnet_time_trace() {
    let opts = BuildOptions::default();
    let full = Architecture::audio_convnet(&opts);
    let x = random(&[2, 40, 1292], 1);
    // Execute growing prefixes of the trunk and read the time axis after
    // each convolution and pooling stage.
    let mut trace = vec![1292];
    for upto in [1, 4, 5, 8] {
        let arch = Architecture {
            branches: vec![Branch {
                layers: full.branches[0].layers[..upto].to_vec(),
                ..full.branches[0].clone()
            }],
            head: vec![],
        };
        let m = ModelGraph::from_architecture(ModelKind::AudioConvNet, arch, opts.clone()).unwrap();
        let y = m.predict(std::slice::from_ref(&x)).unwrap();
        trace.push(*y.shape().last().unwrap());
    }
    assert_eq!(trace, vec![1292, 1285, 321, 314, 78]);

    let model = build_audio_convnet(&opts).unwrap();
    assert_eq!(model.branch_output_shapes(), &[vec![16 * 78]]);
    let y = model.predict(&[x]).unwrap();
    assert_eq!(y.shape(), &[2, 2]);
}

#[test]
fn zero_weights_give_zero_output() {
    let mut model = build_audio_convnet(&small_opts(3)).unwrap();
    for p in model.params_mut().iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let x = inputs_for(&model, 3, 9);
    let y = model.predict(&x).unwrap();
    assert_eq!(y.shape(), &[3, 2]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lyrics_variants_at_full_geometry() {
    let opts = BuildOptions::default();
    for v in LyricsVariant::ALL {
        let model = build_lyrics_model(v, &opts).unwrap();
        assert_eq!(model.input_shapes(), vec![vec![100, 50]]);
        let y = model.predict(&[random(&[3, 100, 50], 2)]).unwrap();
        assert_eq!(y.shape(), &[3, 2], "{v}");
    }
    let lstm = build_lyrics_model(LyricsVariant::Lstm, &opts).unwrap();
    let u = lstm.params().id_of("lyrics.0.lstm.u").unwrap();
    assert_eq!(lstm.params().get(u).value.shape(), &[80, 320]);

    let bi = build_lyrics_model(LyricsVariant::BiLstm, &opts).unwrap();
    assert_eq!(bi.branch_output_shapes(), &[vec![80]]);
    let d = bi.params().id_of("head.1.dense.w").unwrap();
    assert_eq!(bi.params().get(d).value.shape(), &[80, 64]);

    // Two conv stages: 100x50 -> 99x49 -> 49x24 -> 48x23 -> 24x11.
    let two = build_lyrics_model(LyricsVariant::TwoConvTwoLstms, &opts).unwrap();
    let w = two.params().id_of("lyrics.8.lstm.w").unwrap();
    assert_eq!(two.params().get(w).value.shape(), &[16 * 24, 160]);
    let d = two.params().id_of("head.1.dense.w").unwrap();
    assert_eq!(two.params().get(d).value.shape(), &[40, 32]);
}

#[test]
fn fusion_concatenates_branch_outputs() {
    let opts = BuildOptions::default();
    let model = build_fusion_model(&opts).unwrap();
    assert_eq!(model.branch_output_shapes(), &[vec![1248], vec![40]]);
    let w = model.params().id_of("head.0.dense.w").unwrap();
    assert_eq!(model.params().get(w).value.shape(), &[1248 + 40, 100]);
    let y = model.predict(&inputs_for(&model, 2, 5)).unwrap();
    assert_eq!(y.shape(), &[2, 2]);
    assert!(model.architecture().layer_specs().contains(&LayerSpec::ConcatPoint));
}

#[test]
fn every_builder_passes_gradient_check() {
    let opts = GradCheckOptions {
        max_entries_per_param: Some(12),
        seed: 11,
        ..GradCheckOptions::default()
    };
    let mut kinds = vec![ModelKind::AudioConvNet, ModelKind::Fusion(LyricsVariant::ConvLstm)];
    kinds.extend(LyricsVariant::ALL.map(ModelKind::Lyrics));
    for kind in kinds {
        let mut model = ModelGraph::build(kind, &small_opts(21)).unwrap();
        let x = inputs_for(&model, 2, 33);
        let t = random(&[2, 2], 44);
        let report = model.gradient_check(&x, &t, opts).unwrap();
        assert!(report.passed(), "{kind}: {:?}", report.failures());
    }
}

#[test]
fn fusion_gradient_reaches_both_branches() {
    let mut model = build_fusion_model(&small_opts(8)).unwrap();
    let x = inputs_for(&model, 4, 2);
    // Target depends on the lyrics input only.
    let lyr = x[1].data();
    let per = lyr.len() / 4;
    let t: Vec<f64> = (0..4)
        .flat_map(|b| {
            let m = lyr[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64;
            [m, -m]
        })
        .collect();
    let t = Tensor::new(vec![4, 2], t).unwrap();
    let mut g = Graph::with_seed(Mode::Train, 1);
    let out = model.forward(&mut g, &x).unwrap();
    let tv = g.input(t.clone()).unwrap();
    let loss = g.mse_loss(out, tv).unwrap();
    g.backward(loss, model.params_mut()).unwrap();
    let norm = |prefix: &str| -> f64 {
        model
            .params()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .flat_map(|p| p.grad.data().iter().map(|v| v * v))
            .sum::<f64>()
    };
    assert!(norm("audio.") > 0.0);
    assert!(norm("lyrics.") > 0.0);

    let report = model
        .gradient_check(
            &x,
            &t,
            GradCheckOptions {
                max_entries_per_param: Some(4),
                seed: 3,
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
    let audio_conv = report.params.iter().find(|p| p.name == "audio.0.conv1d.w").unwrap();
    assert!(audio_conv.passed && audio_conv.analytic != 0.0);
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_step_matches_hand_equations() {
    let (input, hidden, batch) = (3, 2, 2);
    let cell = LstmCell {
        input,
        hidden,
        w: random(&[input, 4 * hidden], 1).into_data(),
        u: random(&[hidden, 4 * hidden], 2).into_data(),
        b: random(&[4 * hidden], 3).into_data(),
    };
    let x = random(&[batch, input], 4).into_data();
    let h = random(&[batch, hidden], 5).into_data();
    let c = random(&[batch, hidden], 6).into_data();
    let (h2, c2) = cell.step(&x, &h, &c);
    for b in 0..batch {
        for j in 0..hidden {
            let pre = |gate: usize| {
                let col = gate * hidden + j;
                cell.b[col]
                    + (0..input).map(|k| x[b * input + k] * cell.w[k * 4 * hidden + col]).sum::<f64>()
                    + (0..hidden).map(|k| h[b * hidden + k] * cell.u[k * 4 * hidden + col]).sum::<f64>()
            };
            let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
            let c_expect = f * c[b * hidden + j] + i * g;
            let h_expect = o * c_expect.tanh();
            assert!((c2[b * hidden + j] - c_expect).abs() < 1e-14);
            assert!((h2[b * hidden + j] - h_expect).abs() < 1e-14);
        }
    }
}

#[test]
fn gru_step_matches_hand_equations() {
    let (input, hidden, batch) = (3, 2, 2);
    let cell = GruCell {
        input,
        hidden,
        w: random(&[input, 3 * hidden], 1).into_data(),
        u: random(&[hidden, 3 * hidden], 2).into_data(),
        b: random(&[3 * hidden], 3).into_data(),
    };
    let x = random(&[batch, input], 4).into_data();
    let h = random(&[batch, hidden], 5).into_data();
    let h2 = cell.step(&x, &h);
    for b in 0..batch {
        let xw = |col: usize| cell.b[col] + (0..input).map(|k| x[b * input + k] * cell.w[k * 3 * hidden + col]).sum::<f64>();
        let hu = |v: &[f64], col: usize| (0..hidden).map(|k| v[k] * cell.u[k * 3 * hidden + col]).sum::<f64>();
        let hb = &h[b * hidden..(b + 1) * hidden];
        let r: Vec<f64> = (0..hidden).map(|j| sig(xw(hidden + j) + hu(hb, hidden + j))).collect();
        let rh: Vec<f64> = (0..hidden).map(|j| r[j] * hb[j]).collect();
        for j in 0..hidden {
            let z = sig(xw(j) + hu(hb, j));
            let n = (xw(2 * hidden + j) + hu(&rh, 2 * hidden + j)).tanh();
            let expect = (1.0 - z) * n + z * hb[j];
            assert!((h2[b * hidden + j] - expect).abs() < 1e-14);
        }
    }
}

/// Runs a single-branch trunk with no head, returning the raw branch output.
fn trunk_output(model: &ModelGraph, x: &Tensor) -> Tensor {
    let arch = Architecture {
        branches: model.architecture().branches.clone(),
        head: vec![],
    };
    let mut m = ModelGraph::from_architecture(model.kind(), arch, model.options().clone()).unwrap();
    for p in m.params_mut().iter_mut() {
        let id = model.params().id_of(&p.name).unwrap();
        p.value = model.params().get(id).value.clone();
    }
    m.predict(std::slice::from_ref(x)).unwrap()
}

#[test]
fn lstm_layer_unrolls_the_step_function() {
    let opts = BuildOptions {
        lyrics: LyricsGeometry { dims: 4, words: 5 },
        seed: 2,
        ..BuildOptions::default()
    };
    let model = build_lyrics_model(LyricsVariant::Lstm, &opts).unwrap();
    let get = |n: &str| model.params().get(model.params().id_of(n).unwrap()).value.data().to_vec();
    let cell = LstmCell {
        input: 4,
        hidden: 80,
        w: get("lyrics.0.lstm.w"),
        u: get("lyrics.0.lstm.u"),
        b: get("lyrics.0.lstm.b"),
    };
    let x = random(&[2, 4, 5], 7);
    let (mut h, mut c) = (vec![0.0; 160], vec![0.0; 160]);
    for t in 0..5 {
        let xt: Vec<f64> = (0..8).map(|bf| x.data()[bf * 5 + t]).collect();
        (h, c) = cell.step(&xt, &h, &c);
    }
    let y = trunk_output(&model, &x);
    assert_eq!(y.shape(), &[2, 80]);
    for (a, b) in y.data().iter().zip(&h) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn bilstm_palindrome_with_tied_weights() {
    let opts = BuildOptions {
        lyrics: LyricsGeometry { dims: 3, words: 7 },
        seed: 5,
        ..BuildOptions::default()
    };
    let mut model = build_lyrics_model(LyricsVariant::BiLstm, &opts).unwrap();
    for suffix in ["w", "u", "b"] {
        let src = model.params().id_of(&format!("lyrics.0.bilstm.fwd.{suffix}")).unwrap();
        let dst = model.params().id_of(&format!("lyrics.0.bilstm.bwd.{suffix}")).unwrap();
        let v = model.params().get(src).value.clone();
        model.params_mut().get_mut(dst).value = v;
    }
    let base = random(&[2, 3, 7], 9);
    let mut x = base.clone();
    for b in 0..2 {
        for f in 0..3 {
            for t in 0..7 {
                let v = base.at(&[b, f, t.min(6 - t)]);
                x.set(&[b, f, t], v);
            }
        }
    }
    let y = trunk_output(&model, &x);
    for b in 0..2 {
        for j in 0..40 {
            assert_eq!(y.at(&[b, j]), y.at(&[b, 40 + j]));
        }
    }
    // A non-palindromic input separates the two directions.
    let y = trunk_output(&model, &base);
    assert!((0..40).any(|j| y.at(&[0, j]) != y.at(&[0, 40 + j])));
}

#[test]
fn mean_embed_ignores_padding() {
    let arch = Architecture {
        branches: vec![Branch {
            name: "lyrics".into(),
            input: vec![2, 4],
            layers: vec![LayerSpec::MeanEmbed],
        }],
        head: vec![],
    };
    let m = ModelGraph::from_architecture(ModelKind::Lyrics(LyricsVariant::Lstm), arch, BuildOptions::default()).unwrap();
    let x = Tensor::new(vec![1, 2, 4], vec![1.0, 3.0, 0.0, 0.0, 2.0, 4.0, 0.0, 0.0]).unwrap();
    assert_eq!(m.predict(&[x]).unwrap().data(), &[2.0, 3.0]);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    for kind in [ModelKind::AudioConvNet, ModelKind::Lyrics(LyricsVariant::Gru), ModelKind::Fusion(LyricsVariant::TwoConvTwoLstms)] {
        let mut model = ModelGraph::build(kind, &small_opts(4)).unwrap();
        let x = inputs_for(&model, 3, 1);
        let mut g = Graph::with_seed(Mode::Train, 0);
        model.forward(&mut g, &x).unwrap();
        let stats = g.take_batchnorm_stats();
        model.update_batchnorm(&stats);
        model.save(&path).unwrap();
        let back = ModelGraph::load(&path).unwrap();
        assert_eq!(back.kind(), kind);
        assert_eq!(back.running_stats(), model.running_stats());
        let (a, b) = (model.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert_eq!(a, b);
        let raw = crate::checkpoint::load(&path).unwrap();
        assert_eq!(raw.get_str("meta.kind").unwrap(), kind.to_string());
    }
}

#[test]
fn batchnorm_running_update_uses_momentum_and_unbiased_variance() {
    let mut model = build_audio_convnet(&small_opts(1)).unwrap();
    let stats = vec![crate::autodiff::BatchNormStats {
        slot: 0,
        mean: vec![2.0; 32],
        var: vec![3.0; 32],
        count: 4,
    }];
    model.update_batchnorm(&stats);
    let (m, v) = &model.running_stats()[0];
    assert!((m[0] - 0.2).abs() < 1e-15);
    assert!((v[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
}

#[test]
fn rejects_bad_specs_and_inputs() {
    assert!(matches!("CNN".parse::<LyricsVariant>(), Err(ModelError::UnknownVariant(_))));
    assert_eq!("convnet+lstm".parse::<LyricsVariant>().unwrap(), LyricsVariant::ConvLstm);
    let tiny = BuildOptions {
        audio: AudioGeometry { bands: 4, frames: 7 },
        ..BuildOptions::default()
    };
    assert!(matches!(build_audio_convnet(&tiny), Err(ModelError::InvalidSpec(_))));
    let model = build_audio_convnet(&small_opts(0)).unwrap();
    assert!(matches!(model.predict(&[random(&[1, 5, 63], 0)]), Err(ModelError::InputShape { .. })));
    assert!(matches!(model.predict(&[]), Err(ModelError::InputArity { .. })));
    for s in ["audio:ConvNet", "lyrics:2LSTMs", "bimodal:ConvNet+LSTM"] {
        assert_eq!(s.parse::<ModelKind>().unwrap().to_string(), s);
    }
}

#[test]
fn lstm_forget_bias_starts_at_one() {
    let model = build_lyrics_model(LyricsVariant::TwoLstms, &small_opts(0)).unwrap();
    let b = model.params().get(model.params().id_of("lyrics.0.lstm.b").unwrap()).value.data();
    assert!(b[..40].iter().all(|&v| v == 0.0));
    assert!(b[40..80].iter().all(|&v| v == 1.0));
    assert!(b[80..].iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn output_is_batch_by_two(batch in 1usize..4, frames in 61usize..90, words in 12usize..20, v in 0usize..6) {
        let opts = BuildOptions {
            audio: AudioGeometry { bands: 3, frames },
            lyrics: LyricsGeometry { dims: 8, words },
            fusion_lyrics: LyricsVariant::ALL[v],
            ..BuildOptions::default()
        };
        for model in [
            build_audio_convnet(&opts).unwrap(),
            build_lyrics_model(LyricsVariant::ALL[v], &opts).unwrap(),
            build_fusion_model(&opts).unwrap(),
        ] {
            let y = model.predict(&inputs_for(&model, batch, 0)).unwrap();
            prop_assert_eq!(y.shape(), &[batch, 2]);
        }
    }
}
