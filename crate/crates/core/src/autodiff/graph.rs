//! Define-by-run tape. Every forward pass builds a fresh [`Graph`]; in
//! training mode each primitive records what its backward rule needs, and
//! [`Graph::backward`] replays the tape in reverse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, Conv1dDims, Conv2dDims};
use super::params::{ParamId, ParamStore};
use crate::tensor::{volume, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Handle to a value on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// User-supplied primitive with its own backward rule.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, TensorError>;
    /// Gradient with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

/// Batch statistics observed by a training-mode batch norm, to be folded
/// into the running statistics by whoever owns them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub slot: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dims: Conv1dDims,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: Conv2dDims,
    },
    Pool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch: usize,
        channels: usize,
        len: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
    requires_grad: bool,
}

pub struct Graph {
    mode: Mode,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    bn_stats: Vec<BatchNormStats>,
    backpropagated: bool,
}

/// `(outer, dim, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        volume(&shape[..axis]),
        shape[axis],
        volume(&shape[axis + 1..]),
    )
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0)
    }

    /// The seed drives dropout masks.
    pub fn with_seed(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_stats: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn take_batchnorm_stats(&mut self) -> Vec<BatchNormStats> {
        std::mem::take(&mut self.bn_stats)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name.into() });
        }
        let requires_grad =
            self.mode == Mode::Train && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            param: None,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "input".into() });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: None,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf bound to a parameter; `backward` accumulates into its gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, TensorError> {
        let value = store.get(id).value.clone();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: format!("parameter {}", store.get(id).name),
            });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: Some(id),
            requires_grad: self.mode == Mode::Train,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !is_suffix(ta.shape(), tb.shape()) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let inner = tb.len();
        let data = ta
            .data()
            .chunks(inner)
            .flat_map(|chunk| chunk.iter().zip(tb.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// `a + b`, where `b`'s shape is a trailing suffix of `a`'s (broadcast over leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// `a - b` with the same broadcast rule as [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push("affine", out, Op::Affine(x, scale), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        self.push("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x), &[x])
    }

    /// Temporal convolution: `x [B, C_in, L]`, `w [C_out, C_in, K]`, `b [C_out]`
    /// gives `[B, C_out, (L - K) / stride + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, TensorError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: sx.to_vec(),
                right: sw.to_vec(),
            });
        }
        if stride == 0 || sw[2] > sx[2] {
            return Err(TensorError::InvalidArgument {
                op: "conv1d",
                message: format!("kernel {} with stride {stride} does not fit length {}", sw[2], sx[2]),
            });
        }
        let dims = Conv1dDims {
            batch: sx[0],
            c_in: sx[1],
            len: sx[2],
            c_out: sw[0],
            kernel: sw[2],
            stride,
        };
        let data = kernels::conv1d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            dims,
        );
        let out = Tensor::new(vec![dims.batch, dims.c_out, dims.out_len()], data)?;
        self.push("conv1d", out, Op::Conv1d { x, w, b, dims }, &[x, w, b])
    }

    /// `x [B, C_in, H, W]`, `w [C_out, C_in, KH, KW]`, `b [C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, TensorError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: sx.to_vec(),
                right: sw.to_vec(),
            });
        }
        if stride == 0 || sw[2] > sx[2] || sw[3] > sx[3] {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                message: format!("kernel {:?} does not fit input {:?}", &sw[2..], &sx[2..]),
            });
        }
        let dims = Conv2dDims {
            batch: sx[0],
            c_in: sx[1],
            height: sx[2],
            width: sx[3],
            c_out: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
        };
        let (ho, wo) = dims.out_hw();
        let data = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            dims,
        );
        let out = Tensor::new(vec![dims.batch, dims.c_out, ho, wo], data)?;
        self.push("conv2d", out, Op::Conv2d { x, w, b, dims }, &[x, w, b])
    }

    /// Max pooling over the last axis; output length `floor((L - size) / stride) + 1`.
    pub fn maxpool1d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let len = *sx.last().expect("shape is never empty");
        if size == 0 || stride == 0 || size > len {
            return Err(TensorError::InvalidArgument {
                op: "maxpool1d",
                message: format!("window {size}/{stride} does not fit length {len}"),
            });
        }
        let rows = volume(&sx[..sx.len() - 1]);
        let (data, argmax) = kernels::maxpool1d(self.value(x).data(), rows, len, size, stride);
        let mut shape = sx;
        *shape.last_mut().unwrap() = (len - size) / stride + 1;
        let out = Tensor::new(shape, data)?;
        self.push("maxpool1d", out, Op::Pool { x, argmax }, &[x])
    }

    /// Square-window max pooling over the two trailing axes.
    pub fn maxpool2d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 3 {
            return Err(TensorError::InvalidArgument {
                op: "maxpool2d",
                message: format!("needs rank >= 3, got {sx:?}"),
            });
        }
        let (h, w) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        if size == 0 || stride == 0 || size > h || size > w {
            return Err(TensorError::InvalidArgument {
                op: "maxpool2d",
                message: format!("window {size}/{stride} does not fit {h}x{w}"),
            });
        }
        let planes = volume(&sx[..sx.len() - 2]);
        let (data, argmax) = kernels::maxpool2d(self.value(x).data(), planes, h, w, size, stride);
        let mut shape = sx;
        let n = shape.len();
        shape[n - 2] = (h - size) / stride + 1;
        shape[n - 1] = (w - size) / stride + 1;
        let out = Tensor::new(shape, data)?;
        self.push("maxpool2d", out, Op::Pool { x, argmax }, &[x])
    }

    /// Per-channel normalization of `x [B, C, ...]` over the batch and trailing axes.
    /// Training mode uses batch statistics (and reports them under `slot`);
    /// inference mode uses the supplied running statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        eps: f64,
        slot: usize,
    ) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                left: sx,
                right: self.shape(gamma).to_vec(),
            });
        }
        let (batch, channels) = (sx[0], sx[1]);
        let len = volume(&sx[2..]);
        let (mean, var) = match self.mode {
            Mode::Train => kernels::channel_stats(self.value(x).data(), batch, channels, len),
            Mode::Infer => (running.0.to_vec(), running.1.to_vec()),
        };
        if mean.len() != channels || var.len() != channels {
            return Err(TensorError::InvalidArgument {
                op: "batchnorm",
                message: "running statistics do not match channel count".into(),
            });
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut data = vec![0.0; xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * len;
                for i in off..off + len {
                    xhat[i] = (xv[i] - mean[c]) * inv_std[c];
                    data[i] = gv[c] * xhat[i] + bv[c];
                }
            }
        }
        if self.mode == Mode::Train {
            self.bn_stats.push(BatchNormStats {
                slot,
                mean,
                var,
                count: batch * len,
            });
        }
        let out = Tensor::new(sx, data)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch,
            channels,
            len,
        };
        self.push("batchnorm", out, op, &[x, gamma, beta])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(*parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            message: "nothing to concatenate".into(),
        })?)
        .to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                message: format!("axis {axis} out of range for {first:?}"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Mean over one axis; the axis is removed (a rank-1 input gives shape `[1]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(TensorError::InvalidArgument {
                op: "mean_axis",
                message: format!("axis {axis} out of range for {sx:?}"),
            });
        }
        let (outer, dim, inner) = split_axis(&sx, axis);
        let xv = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &xv[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        data.iter_mut().for_each(|v| *v /= dim as f64);
        let mut shape: Vec<usize> = sx.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let out = Tensor::new(shape, data)?;
        self.push("mean_axis", out, Op::MeanAxis { x, axis }, &[x])
    }

    /// Inverted dropout with drop probability `p`: identity in inference mode,
    /// otherwise kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                message: format!("drop probability {p} outside [0, 1)"),
            });
        }
        if self.mode == Mode::Infer || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("dropout", out, Op::Dropout { x, mask }, &[x])
    }

    /// Squared error summed over all entries and averaged over the leading
    /// (batch) axis.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                left: tp.shape().to_vec(),
                right: tt.shape().to_vec(),
            });
        }
        let batch = tp.shape()[0] as f64;
        let sum: f64 = tp.data().iter().zip(tt.data()).map(|(p, t)| (p - t).powi(2)).sum();
        self.push("mse_loss", Tensor::scalar(sum / batch), Op::Mse { pred, target }, &[pred, target])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).clone().reshape(shape.to_vec()).map_err(|_| TensorError::ShapeMismatch {
            op: "reshape",
            left: self.shape(x).to_vec(),
            right: shape.to_vec(),
        })?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || len == 0 || start + len > sx[axis] {
            return Err(TensorError::InvalidArgument {
                op: "narrow",
                message: format!("range {start}..{} invalid on axis {axis} of {sx:?}", start + len),
            });
        }
        let (outer, dim, inner) = split_axis(&sx, axis);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        self.push("narrow", out, Op::Narrow { x, axis, start }, &[x])
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var, TensorError> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        if !out.is_finite() {
            return Err(TensorError::NonFinite { op: op.name().to_string() });
        }
        self.push(
            "custom",
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar `loss`, accumulating `dLoss/dParam` into
    /// the gradient buffers of every parameter leaf on the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), TensorError> {
        if self.mode == Mode::Infer {
            return Err(TensorError::NotRecorded);
        }
        if self.backpropagated {
            return Err(TensorError::AlreadyBackpropagated);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.backpropagated = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(pid) = node.param {
                store.accumulate(pid, &g);
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    send(*a, kernels::matmul_grad_lhs(g, tb.data(), m, k, n));
                }
                if self.wants(*b) {
                    send(*b, kernels::matmul_grad_rhs(ta.data(), g, m, k, n));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                send(*a, g.to_vec());
                if self.wants(*b) {
                    let inner = self.value(*b).len();
                    let mut gb = vec![0.0; inner];
                    for chunk in g.chunks(inner) {
                        gb.iter_mut().zip(chunk).for_each(|(acc, v)| *acc += sign * v);
                    }
                    send(*b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    send(*a, g.iter().zip(tb).map(|(g, y)| g * y).collect());
                }
                if self.wants(*b) {
                    send(*b, g.iter().zip(ta).map(|(g, x)| g * x).collect());
                }
            }
            Op::Affine(x, scale) => send(*x, g.iter().map(|v| v * scale).collect()),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                send(*x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                send(*x, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                send(*x, g.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Conv1d { x, w, b, dims } => {
                let (dx, dw, db) = kernels::conv1d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    *dims,
                    self.wants(*x),
                );
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                send(*w, dw);
                send(*b, db);
            }
            Op::Conv2d { x, w, b, dims } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    *dims,
                    self.wants(*x),
                );
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                send(*w, dw);
                send(*b, db);
            }
            Op::Pool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&src, gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                send(*x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
                channels,
                len,
            } => {
                let (batch, channels, len) = (*batch, *channels, *len);
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                let mut sum_dxhat = vec![0.0; channels];
                let mut sum_dxhat_xhat = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * len;
                        for i in off..off + len {
                            dgamma[c] += g[i] * xhat[i];
                            dbeta[c] += g[i];
                            let dxh = g[i] * gv[c];
                            sum_dxhat[c] += dxh;
                            sum_dxhat_xhat[c] += dxh * xhat[i];
                        }
                    }
                }
                if self.wants(*x) {
                    let n = (batch * len) as f64;
                    let mut dx = vec![0.0; g.len()];
                    for b in 0..batch {
                        for c in 0..channels {
                            let off = (b * channels + c) * len;
                            for i in off..off + len {
                                let dxh = g[i] * gv[c];
                                dx[i] = inv_std[c] / n
                                    * (n * dxh - sum_dxhat[c] - xhat[i] * sum_dxhat_xhat[c]);
                            }
                        }
                    }
                    send(*x, dx);
                }
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let dim = self.shape(p)[*axis];
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(outer * dim * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + dim * inner]);
                        }
                        send(p, gp);
                    }
                    offset += dim;
                }
            }
            Op::MeanAxis { x, axis } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let mut dx = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    for d in 0..dim {
                        for j in 0..inner {
                            dx[(o * dim + d) * inner + j] = g[o * inner + j] / dim as f64;
                        }
                    }
                }
                send(*x, dx);
            }
            Op::Dropout { x, mask } => send(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::Mse { pred, target } => {
                let (tp, tt) = (self.value(*pred), self.value(*target));
                let scale = 2.0 * g[0] / tp.shape()[0] as f64;
                let dp: Vec<f64> = tp.data().iter().zip(tt.data()).map(|(p, t)| scale * (p - t)).collect();
                if self.wants(*target) {
                    send(*target, dp.iter().map(|v| -v).collect());
                }
                send(*pred, dp);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Narrow { x, axis, start } => {
                let sx = self.shape(*x);
                let (outer, dim, inner) = split_axis(sx, *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                send(*x, dx);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("gradient matches output");
                let input_grads = op.backward(&values, &node.value, &gt);
                for (&v, gi) in inputs.iter().zip(input_grads) {
                    send(v, gi.into_data());
                }
            }
        }
    }
}
