//! Raw slice kernels behind the differentiable primitives.

/// `c[m,n] = a[m,k] * b[k,n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `g[m,n] * b[k,n]^T`
pub fn matmul_grad_lhs(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[m,k]^T * g[m,n]`
pub fn matmul_grad_rhs(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1dDims {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1dDims {
    pub fn out_len(&self) -> usize {
        (self.len - self.kernel) / self.stride + 1
    }
}

pub fn conv1d(x: &[f64], w: &[f64], bias: &[f64], d: Conv1dDims) -> Vec<f64> {
    let lo = d.out_len();
    let mut out = vec![0.0; d.batch * d.c_out * lo];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let orow = &mut out[(b * d.c_out + co) * lo..(b * d.c_out + co + 1) * lo];
            orow.fill(bias[co]);
            for ci in 0..d.c_in {
                let xrow = &x[(b * d.c_in + ci) * d.len..(b * d.c_in + ci + 1) * d.len];
                for k in 0..d.kernel {
                    let wv = w[(co * d.c_in + ci) * d.kernel + k];
                    if d.stride == 1 {
                        for (o, &xv) in orow.iter_mut().zip(&xrow[k..k + lo]) {
                            *o += wv * xv;
                        }
                    } else {
                        for (t, o) in orow.iter_mut().enumerate() {
                            *o += wv * xrow[t * d.stride + k];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`; `dx` is skipped when `need_dx` is false.
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: Conv1dDims,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let lo = d.out_len();
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.c_out];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let grow = &g[(b * d.c_out + co) * lo..(b * d.c_out + co + 1) * lo];
            db[co] += grow.iter().sum::<f64>();
            for ci in 0..d.c_in {
                let xoff = (b * d.c_in + ci) * d.len;
                let xrow = &x[xoff..xoff + d.len];
                for k in 0..d.kernel {
                    let widx = (co * d.c_in + ci) * d.kernel + k;
                    if d.stride == 1 {
                        dw[widx] += grow.iter().zip(&xrow[k..k + lo]).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(dx) = dx.as_mut() {
                            let wv = w[widx];
                            for (dxv, &gv) in dx[xoff + k..xoff + k + lo].iter_mut().zip(grow) {
                                *dxv += wv * gv;
                            }
                        }
                    } else {
                        for (t, &gv) in grow.iter().enumerate() {
                            dw[widx] += gv * xrow[t * d.stride + k];
                            if let Some(dx) = dx.as_mut() {
                                dx[xoff + t * d.stride + k] += w[widx] * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl Conv2dDims {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.height - self.kh) / self.stride + 1,
            (self.width - self.kw) / self.stride + 1,
        )
    }
}

pub fn conv2d(x: &[f64], w: &[f64], bias: &[f64], d: Conv2dDims) -> Vec<f64> {
    let (ho, wo) = d.out_hw();
    let plane_in = d.height * d.width;
    let plane_out = ho * wo;
    let mut out = vec![0.0; d.batch * d.c_out * plane_out];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let oplane = &mut out[(b * d.c_out + co) * plane_out..(b * d.c_out + co + 1) * plane_out];
            oplane.fill(bias[co]);
            for ci in 0..d.c_in {
                let xplane = &x[(b * d.c_in + ci) * plane_in..(b * d.c_in + ci + 1) * plane_in];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let wv = w[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                        for oy in 0..ho {
                            let iy = oy * d.stride + ky;
                            let orow = &mut oplane[oy * wo..(oy + 1) * wo];
                            let xrow = &xplane[iy * d.width..(iy + 1) * d.width];
                            if d.stride == 1 {
                                for (o, &xv) in orow.iter_mut().zip(&xrow[kx..kx + wo]) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * xrow[ox * d.stride + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: Conv2dDims,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = d.out_hw();
    let plane_in = d.height * d.width;
    let plane_out = ho * wo;
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.c_out];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let gplane = &g[(b * d.c_out + co) * plane_out..(b * d.c_out + co + 1) * plane_out];
            db[co] += gplane.iter().sum::<f64>();
            for ci in 0..d.c_in {
                let xoff = (b * d.c_in + ci) * plane_in;
                let xplane = &x[xoff..xoff + plane_in];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let widx = ((co * d.c_in + ci) * d.kh + ky) * d.kw + kx;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oy in 0..ho {
                            let iy = oy * d.stride + ky;
                            let grow = &gplane[oy * wo..(oy + 1) * wo];
                            for (ox, &gv) in grow.iter().enumerate() {
                                let ix = ox * d.stride + kx;
                                acc += gv * xplane[iy * d.width + ix];
                                if let Some(dx) = dx.as_mut() {
                                    dx[xoff + iy * d.width + ix] += wv * gv;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Max pooling along the last axis of `rows` contiguous rows of length `len`.
/// Returns the pooled values and the flat source index of every maximum.
pub fn maxpool1d(x: &[f64], rows: usize, len: usize, size: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let lo = (len - size) / stride + 1;
    let mut out = Vec::with_capacity(rows * lo);
    let mut arg = Vec::with_capacity(rows * lo);
    for r in 0..rows {
        for t in 0..lo {
            let start = r * len + t * stride;
            let (mut best, mut best_i) = (x[start], start);
            for i in start + 1..start + size {
                if x[i] > best {
                    best = x[i];
                    best_i = i;
                }
            }
            out.push(best);
            arg.push(best_i);
        }
    }
    (out, arg)
}

/// 2-D max pooling over the trailing `(height, width)` axes of `planes` planes.
pub fn maxpool2d(
    x: &[f64],
    planes: usize,
    height: usize,
    width: usize,
    size: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let ho = (height - size) / stride + 1;
    let wo = (width - size) / stride + 1;
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * height * width;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = base + (oy * stride + ky) * width + ox * stride + kx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

/// Per-channel batch statistics over batch and trailing axes of `[B, C, L]`.
pub fn channel_stats(x: &[f64], batch: usize, channels: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * len) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let row = &x[(b * channels + c) * len..(b * channels + c + 1) * len];
            mean[c] += row.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for b in 0..batch {
        for c in 0..channels {
            let row = &x[(b * channels + c) * len..(b * channels + c + 1) * len];
            var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}
