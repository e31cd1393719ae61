use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Layer;
use super::{
    Activation, AudioGeometry, LayerSpec, LyricsGeometry, LyricsVariant, ModelError, ModelKind,
};
use crate::autodiff::{
    check_gradients, BatchNormStats, GradCheckOptions, GradCheckReport, Graph, Mode, ParamStore, Var,
};
use crate::checkpoint::{self, NamedTensors};
use crate::tensor::Tensor;

pub const BATCHNORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub audio: AudioGeometry,
    pub lyrics: LyricsGeometry,
    /// Hidden-layer activation (output layers are always linear).
    pub activation: Activation,
    pub dropout: f64,
    pub seed: u64,
    /// Lyrics branch of the mid-level fusion model.
    pub fusion_lyrics: LyricsVariant,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            audio: AudioGeometry::default(),
            lyrics: LyricsGeometry::default(),
            activation: Activation::Relu,
            dropout: 0.5,
            seed: 0,
            fusion_lyrics: LyricsVariant::ConvLstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: String,
    /// Per-item input shape.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Layer specs of a model: one or more input branches whose (flat) outputs
/// are concatenated and fed to the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub branches: Vec<Branch>,
    pub head: Vec<LayerSpec>,
}

impl Architecture {
    /// Every spec in order, with a `ConcatPoint` marking the join of a
    /// multi-branch model.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut out: Vec<LayerSpec> = self.branches.iter().flat_map(|b| b.layers.clone()).collect();
        if self.branches.len() > 1 {
            out.push(LayerSpec::ConcatPoint);
        }
        out.extend(self.head.iter().cloned());
        out
    }
}

fn audio_trunk(act: Activation) -> Vec<LayerSpec> {
    let mut v = Vec::new();
    for maps in [32, 16] {
        v.push(LayerSpec::Conv1d { maps, kernel: 8, stride: 1 });
        v.push(LayerSpec::BatchNorm);
        v.push(LayerSpec::Activation(act));
        v.push(LayerSpec::MaxPool1d { size: 4, stride: 4 });
    }
    v.push(LayerSpec::Flatten);
    v
}

fn lyrics_conv_stage(act: Activation) -> [LayerSpec; 3] {
    [
        LayerSpec::Conv2d { maps: 16, kernel: 2, stride: 1 },
        LayerSpec::Activation(act),
        LayerSpec::MaxPool2d { size: 2, stride: 2 },
    ]
}

fn lyrics_trunk(variant: LyricsVariant, act: Activation) -> Vec<LayerSpec> {
    use LyricsVariant::*;
    let lstm = |units, return_sequences| LayerSpec::Lstm { units, return_sequences };
    match variant {
        Gru => vec![LayerSpec::Gru { units: 40, return_sequences: false }],
        Lstm => vec![lstm(80, false)],
        BiLstm => vec![LayerSpec::BiLstm { units: 40 }],
        TwoLstms => vec![lstm(40, true), lstm(40, false)],
        ConvLstm => {
            let mut v = vec![LayerSpec::AddChannel];
            v.extend(lyrics_conv_stage(act));
            v.push(LayerSpec::FoldToSequence);
            v.push(lstm(40, false));
            v
        }
        TwoConvTwoLstms => {
            let mut v = vec![LayerSpec::AddChannel];
            v.extend(lyrics_conv_stage(act));
            v.extend(lyrics_conv_stage(act));
            v.push(LayerSpec::FoldToSequence);
            v.push(lstm(40, true));
            v.push(lstm(40, false));
            v
        }
    }
}

fn lyrics_dense_units(variant: LyricsVariant) -> usize {
    match variant {
        LyricsVariant::ConvLstm | LyricsVariant::TwoConvTwoLstms => 32,
        _ => 64,
    }
}

impl Architecture {
    pub fn audio_convnet(opts: &BuildOptions) -> Self {
        Self {
            branches: vec![Branch {
                name: "audio".into(),
                input: vec![opts.audio.bands, opts.audio.frames],
                layers: audio_trunk(opts.activation),
            }],
            head: vec![
                LayerSpec::Dense { units: 64 },
                LayerSpec::Activation(opts.activation),
                LayerSpec::Dense { units: 2 },
            ],
        }
    }

    pub fn lyrics(variant: LyricsVariant, opts: &BuildOptions) -> Self {
        let p = opts.dropout;
        Self {
            branches: vec![Branch {
                name: "lyrics".into(),
                input: vec![opts.lyrics.dims, opts.lyrics.words],
                layers: lyrics_trunk(variant, opts.activation),
            }],
            head: vec![
                LayerSpec::Dropout { p },
                LayerSpec::Dense { units: lyrics_dense_units(variant) },
                LayerSpec::Activation(opts.activation),
                LayerSpec::Dropout { p },
                LayerSpec::Dense { units: 2 },
            ],
        }
    }

    pub fn fusion(opts: &BuildOptions) -> Self {
        let audio = Self::audio_convnet(opts).branches.remove(0);
        let lyrics = Self::lyrics(opts.fusion_lyrics, opts).branches.remove(0);
        Self {
            branches: vec![audio, lyrics],
            head: vec![
                LayerSpec::Dense { units: 100 },
                LayerSpec::Activation(opts.activation),
                LayerSpec::Dense { units: 2 },
            ],
        }
    }

    pub fn for_kind(kind: ModelKind, opts: &BuildOptions) -> Self {
        match kind {
            ModelKind::AudioConvNet => Self::audio_convnet(opts),
            ModelKind::Lyrics(v) => Self::lyrics(v, opts),
            ModelKind::Fusion(v) => Self::fusion(&BuildOptions {
                fusion_lyrics: v,
                ..opts.clone()
            }),
        }
    }
}

/// A built network: layers, named parameters, and batch-norm running
/// statistics.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    kind: ModelKind,
    options: BuildOptions,
    arch: Architecture,
    branches: Vec<Vec<Layer>>,
    branch_outputs: Vec<Vec<usize>>,
    head: Vec<Layer>,
    output: Vec<usize>,
    store: ParamStore,
    running: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ModelGraph {
    /// Instantiates an architecture, checking every layer against the shape
    /// reaching it.
    pub fn from_architecture(kind: ModelKind, arch: Architecture, options: BuildOptions) -> Result<Self, ModelError> {
        if arch.branches.is_empty() {
            return Err(ModelError::InvalidSpec("model has no input branch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut store = ParamStore::new();
        let mut bn_slots = Vec::new();
        let mut branches = Vec::new();
        let mut branch_outputs = Vec::new();
        for branch in &arch.branches {
            let mut shape = branch.input.clone();
            let mut layers = Vec::new();
            for (i, spec) in branch.layers.iter().enumerate() {
                let prefix = format!("{}.{i}", branch.name);
                let (layer, out) = Layer::build(spec, &shape, &prefix, &mut store, &mut rng, &mut bn_slots)?;
                layers.push(layer);
                shape = out;
            }
            branches.push(layers);
            branch_outputs.push(shape);
        }
        let mut shape = if branch_outputs.len() == 1 {
            branch_outputs[0].clone()
        } else {
            if let Some(bad) = branch_outputs.iter().find(|s| s.len() != 1) {
                return Err(ModelError::InvalidSpec(format!("branch output {bad:?} is not flat")));
            }
            vec![branch_outputs.iter().map(|s| s[0]).sum()]
        };
        let mut head = Vec::new();
        for (i, spec) in arch.head.iter().enumerate() {
            let (layer, out) = Layer::build(spec, &shape, &format!("head.{i}"), &mut store, &mut rng, &mut bn_slots)?;
            head.push(layer);
            shape = out;
        }
        let running = bn_slots.iter().map(|&c| (vec![0.0; c], vec![1.0; c])).collect();
        Ok(Self {
            kind,
            options,
            arch,
            branches,
            branch_outputs,
            head,
            output: shape,
            store,
            running,
        })
    }

    pub fn build(kind: ModelKind, options: &BuildOptions) -> Result<Self, ModelError> {
        let arch = Architecture::for_kind(kind, options);
        let mut options = options.clone();
        if let ModelKind::Fusion(v) = kind {
            options.fusion_lyrics = v;
        }
        Self::from_architecture(kind, arch, options)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn options(&self) -> &BuildOptions {
        &self.options
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Per-item input shape of each branch.
    pub fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.arch.branches.iter().map(|b| b.input.clone()).collect()
    }

    /// Per-item output shape of each branch before concatenation.
    pub fn branch_output_shapes(&self) -> &[Vec<usize>] {
        &self.branch_outputs
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn running_stats(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.running
    }

    fn check_inputs(&self, inputs: &[Tensor]) -> Result<(), ModelError> {
        if inputs.len() != self.arch.branches.len() {
            return Err(ModelError::InputArity {
                expected: self.arch.branches.len(),
                got: inputs.len(),
            });
        }
        let batch = inputs[0].shape()[0];
        for (i, (t, b)) in inputs.iter().zip(&self.arch.branches).enumerate() {
            if t.shape()[1..] != b.input[..] || t.shape()[0] != batch {
                return Err(ModelError::InputShape {
                    branch: i,
                    expected: b.input.clone(),
                    got: t.shape()[1..].to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Records the forward pass for batched inputs (one tensor per branch,
    /// each `[batch, ...input shape]`) using the parameters in `store`.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, inputs: &[Tensor]) -> Result<Var, ModelError> {
        self.check_inputs(inputs)?;
        let mut outs = Vec::with_capacity(inputs.len());
        for (layers, x) in self.branches.iter().zip(inputs) {
            let mut v = g.input(x.clone())?;
            for layer in layers {
                v = layer.forward(g, store, v, &self.running)?;
            }
            outs.push(v);
        }
        let mut v = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        for layer in &self.head {
            v = layer.forward(g, store, v, &self.running)?;
        }
        Ok(v)
    }

    pub fn forward(&self, g: &mut Graph, inputs: &[Tensor]) -> Result<Var, ModelError> {
        self.forward_with(g, &self.store, inputs)
    }

    /// Inference-mode prediction, `[batch, 2]`.
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Tensor, ModelError> {
        let mut g = Graph::new(Mode::Infer);
        let out = self.forward(&mut g, inputs)?;
        Ok(g.value(out).clone())
    }

    /// Folds training-mode batch statistics into the running estimates
    /// (momentum 0.9, unbiased variance).
    pub fn update_batchnorm(&mut self, stats: &[BatchNormStats]) {
        for s in stats {
            let (mean, var) = &mut self.running[s.slot];
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for c in 0..mean.len() {
                mean[c] = BATCHNORM_MOMENTUM * mean[c] + (1.0 - BATCHNORM_MOMENTUM) * s.mean[c];
                var[c] = BATCHNORM_MOMENTUM * var[c] + (1.0 - BATCHNORM_MOMENTUM) * s.var[c] * unbias;
            }
        }
    }

    /// Finite-difference check of the MSE loss gradient on `(inputs, targets)`.
    pub fn gradient_check(
        &mut self,
        inputs: &[Tensor],
        targets: &Tensor,
        opts: GradCheckOptions,
    ) -> Result<GradCheckReport, ModelError> {
        let mut store = std::mem::take(&mut self.store);
        let model = &*self;
        let report = check_gradients(
            &mut store,
            |g: &mut Graph, store: &ParamStore| -> Result<Var, ModelError> {
                let out = model.forward_with(g, store, inputs)?;
                let t = g.input(targets.clone())?;
                Ok(g.mse_loss(out, t)?)
            },
            opts,
        );
        self.store = store;
        report
    }

    pub fn to_named_tensors(&self) -> NamedTensors {
        let mut t = NamedTensors::new();
        let o = &self.options;
        t.push_str("meta.kind", &self.kind.to_string());
        t.push_str("meta.activation", o.activation.name());
        t.push(
            "meta.geometry",
            Tensor::from_vec(
                [o.audio.bands, o.audio.frames, o.lyrics.dims, o.lyrics.words]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
            ),
        );
        t.push("meta.dropout", Tensor::scalar(o.dropout));
        for p in self.store.iter() {
            t.push(p.name.clone(), p.value.clone());
        }
        for (i, (mean, var)) in self.running.iter().enumerate() {
            t.push(format!("bn.{i}.running_mean"), Tensor::from_vec(mean.clone()));
            t.push(format!("bn.{i}.running_var"), Tensor::from_vec(var.clone()));
        }
        t
    }

    pub fn from_named_tensors(t: &NamedTensors) -> Result<Self, ModelError> {
        let kind: ModelKind = t.get_str("meta.kind")?.parse()?;
        let activation: Activation = t.get_str("meta.activation")?.parse()?;
        let geo = t.get("meta.geometry")?.data();
        if geo.len() != 4 {
            return Err(ModelError::InvalidSpec("meta.geometry must hold 4 entries".into()));
        }
        let options = BuildOptions {
            audio: AudioGeometry {
                bands: geo[0] as usize,
                frames: geo[1] as usize,
            },
            lyrics: LyricsGeometry {
                dims: geo[2] as usize,
                words: geo[3] as usize,
            },
            activation,
            dropout: t.get("meta.dropout")?.item()?,
            ..BuildOptions::default()
        };
        let mut model = Self::build(kind, &options)?;
        for p in model.store.iter_mut() {
            let v = t.get(&p.name)?;
            if v.shape() != p.value.shape() {
                return Err(ModelError::InvalidSpec(format!(
                    "{} has shape {:?}, model expects {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        for (i, (mean, var)) in model.running.iter_mut().enumerate() {
            let m = t.get(&format!("bn.{i}.running_mean"))?.data();
            let v = t.get(&format!("bn.{i}.running_var"))?.data();
            if m.len() != mean.len() || v.len() != var.len() {
                return Err(ModelError::InvalidSpec(format!("bn.{i} statistics have the wrong length")));
            }
            mean.copy_from_slice(m);
            var.copy_from_slice(v);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(checkpoint::save(path, &self.to_named_tensors())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_named_tensors(&checkpoint::load(path)?)
    }
}

pub fn build_audio_convnet(opts: &BuildOptions) -> Result<ModelGraph, ModelError> {
    ModelGraph::build(ModelKind::AudioConvNet, opts)
}

pub fn build_lyrics_model(variant: LyricsVariant, opts: &BuildOptions) -> Result<ModelGraph, ModelError> {
    ModelGraph::build(ModelKind::Lyrics(variant), opts)
}

pub fn build_fusion_model(opts: &BuildOptions) -> Result<ModelGraph, ModelError> {
    ModelGraph::build(ModelKind::Fusion(opts.fusion_lyrics), opts)
}
