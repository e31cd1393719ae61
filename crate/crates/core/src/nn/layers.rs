use rand::Rng;

use super::init::{glorot_uniform, recurrent_blocks};
use super::recurrent::{CellKind, MeanEmbedOp, RecurrentOp};
use super::{Activation, LayerSpec, ModelError};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecurrentParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

/// A built layer: its spec plus the parameters it owns.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d { w: ParamId, b: ParamId, stride: usize },
    Conv2d { w: ParamId, b: ParamId, stride: usize },
    MaxPool1d { size: usize, stride: usize },
    MaxPool2d { size: usize, stride: usize },
    /// `slot` indexes the running statistics held by the model.
    BatchNorm { gamma: ParamId, beta: ParamId, slot: usize },
    Activation(Activation),
    Flatten,
    AddChannel,
    FoldToSequence,
    Dense { w: ParamId, b: ParamId },
    Dropout { p: f64 },
    Lstm { params: RecurrentParams, units: usize, return_sequences: bool },
    Gru { params: RecurrentParams, units: usize, return_sequences: bool },
    BiLstm { fwd: RecurrentParams, bwd: RecurrentParams, units: usize },
    ConcatPoint,
    MeanEmbed,
}

fn invalid(msg: String) -> ModelError {
    ModelError::InvalidSpec(msg)
}

fn positive(name: &str, v: usize) -> Result<(), ModelError> {
    if v == 0 {
        Err(invalid(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

fn recurrent_input(shape: &[usize], what: &str) -> Result<usize, ModelError> {
    match shape {
        [feat, _steps] => Ok(*feat),
        _ => Err(invalid(format!("{what} expects [features, time], got {shape:?}"))),
    }
}

fn add_recurrent(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    kind: CellKind,
    input: usize,
    units: usize,
) -> Result<RecurrentParams, ModelError> {
    let gw = kind.gates() * units;
    let w = store.add(format!("{prefix}.w"), glorot_uniform(rng, &[input, gw], input, gw))?;
    let u = store.add(format!("{prefix}.u"), recurrent_blocks(rng, units, kind.gates()))?;
    let mut bias = Tensor::zeros(&[gw]);
    if kind == CellKind::Lstm {
        bias.data_mut()[units..2 * units].fill(1.0);
    }
    let b = store.add(format!("{prefix}.b"), bias)?;
    Ok(RecurrentParams { w, u, b })
}

impl Layer {
    /// Instantiates `spec` for a per-item input of shape `input`, registering
    /// parameters under `prefix`. Returns the layer and its per-item output shape.
    pub(crate) fn build(
        spec: &LayerSpec,
        input: &[usize],
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut impl Rng,
        bn_slots: &mut Vec<usize>,
    ) -> Result<(Layer, Vec<usize>), ModelError> {
        Ok(match *spec {
            LayerSpec::Conv1d { maps, kernel, stride } => {
                positive("conv1d maps", maps)?;
                positive("conv1d kernel", kernel)?;
                positive("conv1d stride", stride)?;
                let [c_in, len] = input else {
                    return Err(invalid(format!("conv1d expects [channels, time], got {input:?}")));
                };
                if kernel > *len {
                    return Err(invalid(format!("conv1d kernel {kernel} exceeds input length {len}")));
                }
                let fan_in = c_in * kernel;
                let w = store.add(
                    format!("{prefix}.conv1d.w"),
                    glorot_uniform(rng, &[maps, *c_in, kernel], fan_in, maps * kernel),
                )?;
                let b = store.add(format!("{prefix}.conv1d.b"), Tensor::zeros(&[maps]))?;
                (Layer::Conv1d { w, b, stride }, vec![maps, (len - kernel) / stride + 1])
            }
            LayerSpec::Conv2d { maps, kernel, stride } => {
                positive("conv2d maps", maps)?;
                positive("conv2d kernel", kernel)?;
                positive("conv2d stride", stride)?;
                let [c_in, h, wd] = input else {
                    return Err(invalid(format!("conv2d expects [channels, height, width], got {input:?}")));
                };
                if kernel > *h || kernel > *wd {
                    return Err(invalid(format!("conv2d kernel {kernel} exceeds input {h}x{wd}")));
                }
                let k2 = kernel * kernel;
                let w = store.add(
                    format!("{prefix}.conv2d.w"),
                    glorot_uniform(rng, &[maps, *c_in, kernel, kernel], c_in * k2, maps * k2),
                )?;
                let b = store.add(format!("{prefix}.conv2d.b"), Tensor::zeros(&[maps]))?;
                let out = vec![maps, (h - kernel) / stride + 1, (wd - kernel) / stride + 1];
                (Layer::Conv2d { w, b, stride }, out)
            }
            LayerSpec::MaxPool1d { size, stride } => {
                positive("maxpool size", size)?;
                positive("maxpool stride", stride)?;
                let len = *input.last().unwrap_or(&0);
                if input.len() != 2 || size > len {
                    return Err(invalid(format!("maxpool1d({size}) does not fit {input:?}")));
                }
                (Layer::MaxPool1d { size, stride }, vec![input[0], (len - size) / stride + 1])
            }
            LayerSpec::MaxPool2d { size, stride } => {
                positive("maxpool size", size)?;
                positive("maxpool stride", stride)?;
                let [c, h, w] = input else {
                    return Err(invalid(format!("maxpool2d expects [channels, height, width], got {input:?}")));
                };
                if size > *h || size > *w {
                    return Err(invalid(format!("maxpool2d({size}) does not fit {h}x{w}")));
                }
                let out = vec![*c, (h - size) / stride + 1, (w - size) / stride + 1];
                (Layer::MaxPool2d { size, stride }, out)
            }
            LayerSpec::BatchNorm => {
                let channels = *input.first().ok_or_else(|| invalid("batchnorm on empty shape".into()))?;
                let gamma = store.add(format!("{prefix}.bn.gamma"), Tensor::full(&[channels], 1.0))?;
                let beta = store.add(format!("{prefix}.bn.beta"), Tensor::zeros(&[channels]))?;
                let slot = bn_slots.len();
                bn_slots.push(channels);
                (Layer::BatchNorm { gamma, beta, slot }, input.to_vec())
            }
            LayerSpec::Activation(a) => (Layer::Activation(a), input.to_vec()),
            LayerSpec::Flatten => (Layer::Flatten, vec![input.iter().product()]),
            LayerSpec::AddChannel => {
                let mut out = vec![1];
                out.extend_from_slice(input);
                (Layer::AddChannel, out)
            }
            LayerSpec::FoldToSequence => {
                let [c, h, w] = input else {
                    return Err(invalid(format!("fold expects [channels, height, width], got {input:?}")));
                };
                (Layer::FoldToSequence, vec![c * h, *w])
            }
            LayerSpec::Dense { units } => {
                positive("dense units", units)?;
                let [fan_in] = input else {
                    return Err(invalid(format!("dense expects a flat input, got {input:?}")));
                };
                let w = store.add(format!("{prefix}.dense.w"), glorot_uniform(rng, &[*fan_in, units], *fan_in, units))?;
                let b = store.add(format!("{prefix}.dense.b"), Tensor::zeros(&[units]))?;
                (Layer::Dense { w, b }, vec![units])
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(invalid(format!("dropout probability {p} outside [0, 1)")));
                }
                (Layer::Dropout { p }, input.to_vec())
            }
            LayerSpec::Lstm { units, return_sequences } => {
                positive("lstm units", units)?;
                let feat = recurrent_input(input, "lstm")?;
                let params = add_recurrent(store, rng, &format!("{prefix}.lstm"), CellKind::Lstm, feat, units)?;
                let out = if return_sequences { vec![units, input[1]] } else { vec![units] };
                (Layer::Lstm { params, units, return_sequences }, out)
            }
            LayerSpec::Gru { units, return_sequences } => {
                positive("gru units", units)?;
                let feat = recurrent_input(input, "gru")?;
                let params = add_recurrent(store, rng, &format!("{prefix}.gru"), CellKind::Gru, feat, units)?;
                let out = if return_sequences { vec![units, input[1]] } else { vec![units] };
                (Layer::Gru { params, units, return_sequences }, out)
            }
            LayerSpec::BiLstm { units } => {
                positive("bilstm units", units)?;
                let feat = recurrent_input(input, "bilstm")?;
                let fwd = add_recurrent(store, rng, &format!("{prefix}.bilstm.fwd"), CellKind::Lstm, feat, units)?;
                let bwd = add_recurrent(store, rng, &format!("{prefix}.bilstm.bwd"), CellKind::Lstm, feat, units)?;
                (Layer::BiLstm { fwd, bwd, units }, vec![2 * units])
            }
            LayerSpec::ConcatPoint => (Layer::ConcatPoint, input.to_vec()),
            LayerSpec::MeanEmbed => {
                let feat = recurrent_input(input, "mean_embed")?;
                (Layer::MeanEmbed, vec![feat])
            }
        })
    }

    /// Applies the layer to a batched `x`. `running` holds the model's batch
    /// norm statistics per slot.
    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        running: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Var, ModelError> {
        let recurrent = |g: &mut Graph, p: &RecurrentParams, op: RecurrentOp| -> Result<Var, ModelError> {
            let (w, u, b) = (g.param(store, p.w)?, g.param(store, p.u)?, g.param(store, p.b)?);
            Ok(g.custom(&[x, w, u, b], Box::new(op))?)
        };
        Ok(match self {
            Layer::Conv1d { w, b, stride } => {
                let (w, b) = (g.param(store, *w)?, g.param(store, *b)?);
                g.conv1d(x, w, b, *stride)?
            }
            Layer::Conv2d { w, b, stride } => {
                let (w, b) = (g.param(store, *w)?, g.param(store, *b)?);
                g.conv2d(x, w, b, *stride)?
            }
            Layer::MaxPool1d { size, stride } => g.maxpool1d(x, *size, *stride)?,
            Layer::MaxPool2d { size, stride } => g.maxpool2d(x, *size, *stride)?,
            Layer::BatchNorm { gamma, beta, slot } => {
                let (gm, bt) = (g.param(store, *gamma)?, g.param(store, *beta)?);
                let (mean, var) = &running[*slot];
                g.batchnorm(x, gm, bt, (mean, var), BATCHNORM_EPS, *slot)?
            }
            Layer::Activation(a) => match a {
                Activation::Relu => g.relu(x)?,
                Activation::Tanh => g.tanh(x)?,
                Activation::Sigmoid => g.sigmoid(x)?,
                Activation::Identity => x,
            },
            Layer::Flatten => {
                let s = g.shape(x).to_vec();
                g.reshape(x, &[s[0], s[1..].iter().product()])?
            }
            Layer::AddChannel => {
                let mut s = g.shape(x).to_vec();
                s.insert(1, 1);
                g.reshape(x, &s)?
            }
            Layer::FoldToSequence => {
                let s = g.shape(x).to_vec();
                g.reshape(x, &[s[0], s[1] * s[2], s[3]])?
            }
            Layer::Dense { w, b } => {
                let (w, b) = (g.param(store, *w)?, g.param(store, *b)?);
                let y = g.matmul(x, w)?;
                g.add(y, b)?
            }
            Layer::Dropout { p } => g.dropout(x, *p)?,
            Layer::Lstm { params, units, return_sequences } => {
                recurrent(g, params, RecurrentOp::new(CellKind::Lstm, *units, false, *return_sequences))?
            }
            Layer::Gru { params, units, return_sequences } => {
                recurrent(g, params, RecurrentOp::new(CellKind::Gru, *units, false, *return_sequences))?
            }
            Layer::BiLstm { fwd, bwd, units } => {
                let f = recurrent(g, fwd, RecurrentOp::new(CellKind::Lstm, *units, false, false))?;
                let b = recurrent(g, bwd, RecurrentOp::new(CellKind::Lstm, *units, true, false))?;
                g.concat(&[f, b], 1)?
            }
            Layer::ConcatPoint => x,
            Layer::MeanEmbed => g.custom(&[x], Box::new(MeanEmbedOp))?,
        })
    }
}
