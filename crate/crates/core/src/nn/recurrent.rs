//! LSTM and GRU layers as fused tape primitives with hand-written BPTT.
//!
//! Sequences are laid out `[batch, features, time]`. Gate blocks are stored
//! side by side along the columns of `W [input, gates * hidden]` and
//! `U [hidden, gates * hidden]`: LSTM order `i, f, g, o`; GRU order `z, r, n`.

use std::cell::RefCell;

use crate::autodiff::CustomOp;
use crate::tensor::{Tensor, TensorError};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[m,n] += a[m,k] * b[k,n]`, with explicit row strides so column blocks
/// of wider matrices can be addressed through offset slices.
#[allow(clippy::too_many_arguments)]
fn gemm_nn(out: &mut [f64], ldo: usize, a: &[f64], lda: usize, b: &[f64], ldb: usize, m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * lda + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * ldb..p * ldb + n];
            for (o, bv) in out[i * ldo..i * ldo + n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
#[allow(clippy::too_many_arguments)]
fn gemm_nt(out: &mut [f64], ldo: usize, g: &[f64], ldg: usize, b: &[f64], ldb: usize, m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * ldg..i * ldg + n];
        for p in 0..k {
            let brow = &b[p * ldb..p * ldb + n];
            out[i * ldo + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
#[allow(clippy::too_many_arguments)]
fn gemm_tn(out: &mut [f64], ldo: usize, a: &[f64], lda: usize, g: &[f64], ldg: usize, m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * ldg..i * ldg + n];
        for p in 0..k {
            let av = a[i * lda + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * ldo..p * ldo + n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn bias_rows(b: &[f64], batch: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(batch * b.len());
    for _ in 0..batch {
        z.extend_from_slice(b);
    }
    z
}

/// One LSTM step. Returns the activated gates `[batch, 4H]`, the new hidden
/// state and the new cell state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_step(
    w: &[f64],
    u: &[f64],
    b: &[f64],
    x: &[f64],
    h: &[f64],
    c: &[f64],
    batch: usize,
    input: usize,
    hidden: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let gw = 4 * hidden;
    let mut z = bias_rows(b, batch);
    gemm_nn(&mut z, gw, x, input, w, gw, batch, input, gw);
    gemm_nn(&mut z, gw, h, hidden, u, gw, batch, hidden, gw);
    let mut h_new = vec![0.0; batch * hidden];
    let mut c_new = vec![0.0; batch * hidden];
    for bi in 0..batch {
        let row = &mut z[bi * gw..(bi + 1) * gw];
        for j in 0..hidden {
            let i_g = sigmoid(row[j]);
            let f_g = sigmoid(row[hidden + j]);
            let g_g = row[2 * hidden + j].tanh();
            let o_g = sigmoid(row[3 * hidden + j]);
            row[j] = i_g;
            row[hidden + j] = f_g;
            row[2 * hidden + j] = g_g;
            row[3 * hidden + j] = o_g;
            let k = bi * hidden + j;
            c_new[k] = f_g * c[k] + i_g * g_g;
            h_new[k] = o_g * c_new[k].tanh();
        }
    }
    (z, h_new, c_new)
}

/// One GRU step (reset gate applied before the candidate's recurrent
/// matrix). Returns the activated gates `[batch, 3H]`, `r * h`, and the new
/// hidden state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_step(
    w: &[f64],
    u: &[f64],
    b: &[f64],
    x: &[f64],
    h: &[f64],
    batch: usize,
    input: usize,
    hidden: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let gw = 3 * hidden;
    let mut z = bias_rows(b, batch);
    gemm_nn(&mut z, gw, x, input, w, gw, batch, input, gw);
    gemm_nn(&mut z, gw, h, hidden, u, gw, batch, hidden, 2 * hidden);
    let mut rh = vec![0.0; batch * hidden];
    for bi in 0..batch {
        for j in 0..hidden {
            let r = sigmoid(z[bi * gw + hidden + j]);
            z[bi * gw + j] = sigmoid(z[bi * gw + j]);
            z[bi * gw + hidden + j] = r;
            rh[bi * hidden + j] = r * h[bi * hidden + j];
        }
    }
    gemm_nn(&mut z[2 * hidden..], gw, &rh, hidden, &u[2 * hidden..], gw, batch, hidden, hidden);
    let mut h_new = vec![0.0; batch * hidden];
    for bi in 0..batch {
        for j in 0..hidden {
            let n = z[bi * gw + 2 * hidden + j].tanh();
            z[bi * gw + 2 * hidden + j] = n;
            let zg = z[bi * gw + j];
            let k = bi * hidden + j;
            h_new[k] = (1.0 - zg) * n + zg * h[k];
        }
    }
    (z, rh, h_new)
}

/// Owned LSTM weights with a plain (untaped) step function.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    /// `[input, 4 * hidden]`
    pub w: Vec<f64>,
    /// `[hidden, 4 * hidden]`
    pub u: Vec<f64>,
    /// `[4 * hidden]`
    pub b: Vec<f64>,
}

impl LstmCell {
    /// Advances `(h, c)` (each `[batch, hidden]`) by one input `x [batch, input]`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let batch = x.len() / self.input;
        let (_, h, c) = lstm_step(&self.w, &self.u, &self.b, x, h, c, batch, self.input, self.hidden);
        (h, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    /// `[input, 3 * hidden]`
    pub w: Vec<f64>,
    /// `[hidden, 3 * hidden]`
    pub u: Vec<f64>,
    /// `[3 * hidden]`
    pub b: Vec<f64>,
}

impl GruCell {
    pub fn step(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let batch = x.len() / self.input;
        gru_step(&self.w, &self.u, &self.b, x, h, batch, self.input, self.hidden).2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub(crate) fn gates(self) -> usize {
        match self {
            Self::Lstm => 4,
            Self::Gru => 3,
        }
    }
}

#[derive(Default)]
struct Tape {
    /// Per processing step: input `[B, F]`, activated gates, and `r * h` (GRU).
    xs: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    rh: Vec<Vec<f64>>,
    /// Hidden and cell states before step 0 and after every step.
    hs: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
}

/// Whole-sequence recurrent layer. Inputs `[x [B, F, T], W, U, b]`; output
/// `[B, H, T]` with `return_sequences`, else the final state `[B, H]`.
/// `reverse` processes time from the last step to the first; sequence
/// outputs stay aligned with input time.
pub(crate) struct RecurrentOp {
    pub kind: CellKind,
    pub hidden: usize,
    pub reverse: bool,
    pub return_sequences: bool,
    tape: RefCell<Tape>,
}

impl RecurrentOp {
    pub(crate) fn new(kind: CellKind, hidden: usize, reverse: bool, return_sequences: bool) -> Self {
        Self {
            kind,
            hidden,
            reverse,
            return_sequences,
            tape: RefCell::new(Tape::default()),
        }
    }

    fn time_of(&self, step: usize, steps: usize) -> usize {
        if self.reverse {
            steps - 1 - step
        } else {
            step
        }
    }
}

impl CustomOp for RecurrentOp {
    fn name(&self) -> &str {
        match self.kind {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
        let [x, w, u, b] = inputs else {
            return Err(TensorError::InvalidArgument {
                op: "recurrent",
                message: format!("expected 4 inputs, got {}", inputs.len()),
            });
        };
        let sx = x.shape();
        let hd = self.hidden;
        let gw = self.kind.gates() * hd;
        if sx.len() != 3 || w.shape() != [sx[1], gw] || u.shape() != [hd, gw] || b.shape() != [gw] {
            return Err(TensorError::ShapeMismatch {
                op: "recurrent",
                left: sx.to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let (batch, feat, steps) = (sx[0], sx[1], sx[2]);
        let xv = x.data();
        let mut tape = Tape::default();
        tape.hs.push(vec![0.0; batch * hd]);
        tape.cs.push(vec![0.0; batch * hd]);
        let mut out = vec![0.0; batch * hd * if self.return_sequences { steps } else { 1 }];
        for s in 0..steps {
            let t = self.time_of(s, steps);
            let xt: Vec<f64> = (0..batch * feat).map(|bf| xv[bf * steps + t]).collect();
            let h = tape.hs.last().unwrap();
            match self.kind {
                CellKind::Lstm => {
                    let c = tape.cs.last().unwrap();
                    let (gates, h2, c2) = lstm_step(w.data(), u.data(), b.data(), &xt, h, c, batch, feat, hd);
                    tape.gates.push(gates);
                    tape.hs.push(h2);
                    tape.cs.push(c2);
                }
                CellKind::Gru => {
                    let (gates, rh, h2) = gru_step(w.data(), u.data(), b.data(), &xt, h, batch, feat, hd);
                    tape.gates.push(gates);
                    tape.rh.push(rh);
                    tape.hs.push(h2);
                }
            }
            tape.xs.push(xt);
            if self.return_sequences {
                let h = tape.hs.last().unwrap();
                for bj in 0..batch * hd {
                    out[bj * steps + t] = h[bj];
                }
            }
        }
        let shape = if self.return_sequences {
            vec![batch, hd, steps]
        } else {
            out.copy_from_slice(tape.hs.last().unwrap());
            vec![batch, hd]
        };
        *self.tape.borrow_mut() = tape;
        Tensor::new(shape, out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (x, w, u) = (inputs[0], inputs[1], inputs[2]);
        let (batch, feat, steps) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let hd = self.hidden;
        let gw = self.kind.gates() * hd;
        let (wv, uv) = (w.data(), u.data());
        let g = grad.data();
        let tape = self.tape.borrow();

        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        let mut du = vec![0.0; u.len()];
        let mut db = vec![0.0; gw];
        let mut dh_next = vec![0.0; batch * hd];
        let mut dc_next = vec![0.0; batch * hd];
        for s in (0..steps).rev() {
            let t = self.time_of(s, steps);
            let mut dh = std::mem::take(&mut dh_next);
            if self.return_sequences {
                for (bj, d) in dh.iter_mut().enumerate() {
                    *d += g[bj * steps + t];
                }
            } else if s == steps - 1 {
                dh.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
            }
            let gates = &tape.gates[s];
            let h_prev = &tape.hs[s];
            let mut dpre = vec![0.0; batch * gw];
            dh_next = vec![0.0; batch * hd];
            match self.kind {
                CellKind::Lstm => {
                    let (c_prev, c) = (&tape.cs[s], &tape.cs[s + 1]);
                    for bi in 0..batch {
                        let row = &gates[bi * gw..(bi + 1) * gw];
                        for j in 0..hd {
                            let k = bi * hd + j;
                            let (i_g, f_g, g_g, o_g) = (row[j], row[hd + j], row[2 * hd + j], row[3 * hd + j]);
                            let tc = c[k].tanh();
                            let d_o = dh[k] * tc;
                            let dc = dc_next[k] + dh[k] * o_g * (1.0 - tc * tc);
                            let d = &mut dpre[bi * gw..(bi + 1) * gw];
                            d[j] = dc * g_g * i_g * (1.0 - i_g);
                            d[hd + j] = dc * c_prev[k] * f_g * (1.0 - f_g);
                            d[2 * hd + j] = dc * i_g * (1.0 - g_g * g_g);
                            d[3 * hd + j] = d_o * o_g * (1.0 - o_g);
                            dc_next[k] = dc * f_g;
                        }
                    }
                    gemm_tn(&mut du, gw, h_prev, hd, &dpre, gw, batch, hd, gw);
                    gemm_nt(&mut dh_next, hd, &dpre, gw, uv, gw, batch, hd, gw);
                }
                CellKind::Gru => {
                    for bi in 0..batch {
                        for j in 0..hd {
                            let k = bi * hd + j;
                            let (zg, ng) = (gates[bi * gw + j], gates[bi * gw + 2 * hd + j]);
                            dpre[bi * gw + j] = dh[k] * (h_prev[k] - ng) * zg * (1.0 - zg);
                            dpre[bi * gw + 2 * hd + j] = dh[k] * (1.0 - zg) * (1.0 - ng * ng);
                            dh_next[k] = dh[k] * zg;
                        }
                    }
                    let mut d_rh = vec![0.0; batch * hd];
                    gemm_nt(&mut d_rh, hd, &dpre[2 * hd..], gw, &uv[2 * hd..], gw, batch, hd, hd);
                    for bi in 0..batch {
                        for j in 0..hd {
                            let k = bi * hd + j;
                            let r = gates[bi * gw + hd + j];
                            dpre[bi * gw + hd + j] = d_rh[k] * h_prev[k] * r * (1.0 - r);
                            dh_next[k] += d_rh[k] * r;
                        }
                    }
                    gemm_tn(&mut du, gw, h_prev, hd, &dpre, gw, batch, hd, 2 * hd);
                    gemm_tn(&mut du[2 * hd..], gw, &tape.rh[s], hd, &dpre[2 * hd..], gw, batch, hd, hd);
                    gemm_nt(&mut dh_next, hd, &dpre, gw, uv, gw, batch, hd, 2 * hd);
                }
            }
            gemm_tn(&mut dw, gw, &tape.xs[s], feat, &dpre, gw, batch, feat, gw);
            for row in dpre.chunks(gw) {
                db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
            let mut dxt = vec![0.0; batch * feat];
            gemm_nt(&mut dxt, feat, &dpre, gw, wv, gw, batch, feat, gw);
            for (bf, v) in dxt.into_iter().enumerate() {
                dx[bf * steps + t] = v;
            }
        }
        let mk = |shape: &[usize], data| Tensor::new(shape.to_vec(), data).expect("gradient matches input");
        vec![
            mk(x.shape(), dx),
            mk(w.shape(), dw),
            mk(u.shape(), du),
            mk(&[gw], db),
        ]
    }
}

/// Mean over the time axis of `[batch, features, time]`, counting only
/// columns that are not entirely zero (padding). All-padding items give zeros.
pub(crate) struct MeanEmbedOp;

fn valid_columns(x: &Tensor) -> Vec<Vec<bool>> {
    let (batch, feat, steps) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xv = x.data();
    (0..batch)
        .map(|b| {
            (0..steps)
                .map(|t| (0..feat).any(|f| xv[(b * feat + f) * steps + t] != 0.0))
                .collect()
        })
        .collect()
}

impl CustomOp for MeanEmbedOp {
    fn name(&self) -> &str {
        "mean_embed"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
        let x = inputs[0];
        if x.rank() != 3 {
            return Err(TensorError::InvalidArgument {
                op: "mean_embed",
                message: format!("expects [batch, features, time], got {:?}", x.shape()),
            });
        }
        let (batch, feat, steps) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let valid = valid_columns(x);
        let mut out = vec![0.0; batch * feat];
        for b in 0..batch {
            let n = valid[b].iter().filter(|&&v| v).count();
            if n == 0 {
                continue;
            }
            for f in 0..feat {
                let row = &x.data()[(b * feat + f) * steps..(b * feat + f + 1) * steps];
                out[b * feat + f] = row.iter().sum::<f64>() / n as f64;
            }
        }
        Tensor::new(vec![batch, feat], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let (batch, feat, steps) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let valid = valid_columns(x);
        let mut dx = vec![0.0; x.len()];
        for b in 0..batch {
            let n = valid[b].iter().filter(|&&v| v).count();
            for f in 0..feat {
                for t in 0..steps {
                    if valid[b][t] {
                        dx[(b * feat + f) * steps + t] = grad.data()[b * feat + f] / n as f64;
                    }
                }
            }
        }
        vec![Tensor::new(x.shape().to_vec(), dx).expect("gradient matches input")]
    }
}
