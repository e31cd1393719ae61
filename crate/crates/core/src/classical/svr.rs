//! ε-SVR trained by SMO on the signed dual.
//!
//! With one coefficient `β_i = α_i - α*_i ∈ [-C, C]` per point the dual is
//! `max W(β) = -½ βᵀKβ + yᵀβ - ε‖β‖₁` subject to `Σ β_i = 0`, and the
//! model is `f(x) = Σ β_i K(x_i, x) + b`.

use super::ClassicalError;
use crate::checkpoint::NamedTensors;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrOptions {
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the dual objective after every step in `SvrModel::trace`.
    pub trace: bool,
}

impl Default for SvrOptions {
    fn default() -> Self {
        Self {
            kernel: Kernel::Rbf { gamma: 1.0 },
            c: 1.0,
            epsilon: 0.1,
            tol: 1e-3,
            max_iter: 100_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// Signed dual coefficient of each support vector, in `[-C, C]`.
    pub coefs: Vec<f64>,
    pub bias: f64,
    pub dims: usize,
    pub iterations: usize,
    /// Dual objective at the solution.
    pub objective: f64,
    pub trace: Vec<f64>,
}

/// `W(β)` for a full coefficient vector.
pub fn dual_objective(k: &[Vec<f64>], y: &[f64], beta: &[f64], epsilon: f64) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        if beta[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += beta[i] * beta[j] * k[i][j];
        }
    }
    -0.5 * quad + y.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() - epsilon * beta.iter().map(|b| b.abs()).sum::<f64>()
}

pub fn kernel_matrix(x: &[Vec<f64>], kernel: Kernel) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&x[i], &x[j]);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Directional derivatives of W when `β_k` goes up or down by a small step,
/// given the smooth gradient `g_k = y_k - (Kβ)_k`.
fn up_down(g: f64, beta: f64, c: f64, eps: f64) -> (Option<f64>, Option<f64>) {
    let up = (beta < c).then(|| if beta >= 0.0 { g - eps } else { g + eps });
    let down = (beta > -c).then(|| if beta <= 0.0 { -g - eps } else { -g + eps });
    (up, down)
}

/// Exact maximizer over `t ∈ [lo, hi]` of
/// `t·s - ½ η t² - ε(|bi + t| + |bj - t|)`, which is concave and piecewise
/// quadratic with kinks at `-bi` and `bj`.
fn best_step(s: f64, eta: f64, bi: f64, bj: f64, eps: f64, lo: f64, hi: f64) -> f64 {
    let w = |t: f64| t * s - 0.5 * eta * t * t - eps * ((bi + t).abs() + (bj - t).abs());
    let mut knots = vec![lo, hi];
    for k in [-bi, bj] {
        if k > lo && k < hi {
            knots.push(k);
        }
    }
    knots.sort_by(f64::total_cmp);
    let mut cands = knots.clone();
    if eta > 0.0 {
        for seg in knots.windows(2) {
            let mid = 0.5 * (seg[0] + seg[1]);
            // Slope of the ε terms is constant inside a segment.
            let lin = s - eps * ((bi + mid).signum() - (bj - mid).signum());
            cands.push((lin / eta).clamp(seg[0], seg[1]));
        }
    }
    cands.into_iter().fold((0.0, w(0.0)), |best, t| {
        let v = w(t);
        if v > best.1 {
            (t, v)
        } else {
            best
        }
    })
    .0
}

/// Fits an ε-SVR. Iterates maximal-violating-pair SMO steps until the
/// first-order KKT gap `max_up + max_down` drops below `tol`.
pub fn svr_fit(x: &[Vec<f64>], y: &[f64], opts: &SvrOptions) -> Result<SvrModel, ClassicalError> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(ClassicalError::InvalidData(format!("{n} inputs for {} targets; need at least 2", y.len())));
    }
    let dims = x[0].len();
    if x.iter().any(|r| r.len() != dims) || x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ClassicalError::InvalidData("inputs must be finite with equal dimension".into()));
    }
    if !(opts.c > 0.0) || !(opts.epsilon >= 0.0) || !(opts.tol > 0.0) {
        return Err(ClassicalError::InvalidData("C and tol must be positive, epsilon non-negative".into()));
    }
    if let Kernel::Rbf { gamma } = opts.kernel {
        if !(gamma > 0.0) {
            return Err(ClassicalError::InvalidData("rbf gamma must be positive".into()));
        }
    }
    let (c, eps) = (opts.c, opts.epsilon);
    let k = kernel_matrix(x, opts.kernel);
    let mut beta = vec![0.0; n];
    // Smooth gradient y - Kβ.
    let mut g = y.to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let (up_max, down_max) = loop {
        // Two best candidates for each direction, so a pair of distinct
        // indices is available when both maxima fall on the same point.
        let mut up: [(usize, f64); 2] = [(usize::MAX, f64::NEG_INFINITY); 2];
        let mut down: [(usize, f64); 2] = [(usize::MAX, f64::NEG_INFINITY); 2];
        for t in 0..n {
            let (u, d) = up_down(g[t], beta[t], c, eps);
            for (val, top) in [(u, &mut up), (d, &mut down)] {
                if let Some(v) = val {
                    if v > top[0].1 {
                        top[1] = top[0];
                        top[0] = (t, v);
                    } else if v > top[1].1 {
                        top[1] = (t, v);
                    }
                }
            }
        }
        let (i, j, gap) = if up[0].0 != down[0].0 {
            (up[0].0, down[0].0, up[0].1 + down[0].1)
        } else if up[0].1 + down[1].1 >= up[1].1 + down[0].1 {
            (up[0].0, down[1].0, up[0].1 + down[1].1)
        } else {
            (up[1].0, down[0].0, up[1].1 + down[0].1)
        };
        if !(gap >= opts.tol) || i == usize::MAX || j == usize::MAX {
            break (up[0].1, down[0].1);
        }
        if iterations >= opts.max_iter {
            return Err(ClassicalError::NotConverged {
                iterations,
                violation: gap,
            });
        }
        iterations += 1;
        let eta = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(0.0);
        let lo = (-c - beta[i]).max(beta[j] - c);
        let hi = (c - beta[i]).min(beta[j] + c);
        let t = best_step(g[i] - g[j], eta, beta[i], beta[j], eps, lo, hi);
        if t == 0.0 {
            // The exact step rounds to zero: converged to machine precision.
            break (up[0].1, down[0].1);
        }
        beta[i] += t;
        beta[j] -= t;
        for (r, gr) in g.iter_mut().enumerate() {
            *gr -= t * (k[r][i] - k[r][j]);
        }
        if opts.trace {
            trace.push(dual_objective(&k, y, &beta, eps));
        }
    };
    // Any b in [max_up, -max_down] satisfies the KKT conditions; take the middle.
    let bias = match (up_max.is_finite(), down_max.is_finite()) {
        (true, true) => 0.5 * (up_max - down_max),
        (true, false) => up_max,
        (false, true) => -down_max,
        (false, false) => 0.0,
    };
    let objective = dual_objective(&k, y, &beta, eps);
    let (support_vectors, coefs) = x
        .iter()
        .zip(&beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(xv, b)| (xv.clone(), *b))
        .unzip();
    Ok(SvrModel {
        kernel: opts.kernel,
        c,
        epsilon: eps,
        support_vectors,
        coefs,
        bias,
        dims,
        iterations,
        objective,
        trace,
    })
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, ClassicalError> {
        if x.len() != self.dims {
            return Err(ClassicalError::DimensionMismatch {
                expected: self.dims,
                got: x.len(),
            });
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.coefs)
            .map(|(sv, a)| a * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// Largest KKT violation over the training set, measured on residuals
    /// `r = y - f(x)`: zero coefficients need `|r| <= ε`, free ones
    /// `|r| = ε` with the coefficient's sign, bounded ones `|r| >= ε`.
    pub fn kkt_violation(&self, x: &[Vec<f64>], y: &[f64]) -> Result<f64, ClassicalError> {
        let mut worst: f64 = 0.0;
        let tiny = 1e-12 * self.c;
        for (xi, yi) in x.iter().zip(y) {
            let beta = self
                .support_vectors
                .iter()
                .position(|sv| sv == xi)
                .map_or(0.0, |p| self.coefs[p]);
            let r = yi - self.predict(xi)?;
            let e = self.epsilon;
            let v = if beta.abs() <= tiny {
                (r.abs() - e).max(0.0)
            } else if beta >= self.c - tiny {
                (e - r).max(0.0)
            } else if beta <= -self.c + tiny {
                (r + e).max(0.0)
            } else if beta > 0.0 {
                (r - e).abs()
            } else {
                (r + e).abs()
            };
            worst = worst.max(v);
        }
        Ok(worst)
    }

    pub fn to_named_tensors(&self, prefix: &str, out: &mut NamedTensors) {
        let n = self.coefs.len();
        let (kind, gamma) = match self.kernel {
            Kernel::Linear => (0.0, 0.0),
            Kernel::Rbf { gamma } => (1.0, gamma),
        };
        out.push(
            format!("{prefix}.meta"),
            Tensor::from_vec(vec![
                kind,
                gamma,
                self.c,
                self.epsilon,
                self.bias,
                self.dims as f64,
                self.objective,
                self.iterations as f64,
            ]),
        );
        out.push(
            format!("{prefix}.support_vectors"),
            Tensor::new(vec![n, self.dims], self.support_vectors.concat()).expect("rows have model dimension"),
        );
        out.push(format!("{prefix}.coefs"), Tensor::new(vec![n], self.coefs.clone()).expect("vector"));
    }

    pub fn from_named_tensors(prefix: &str, t: &NamedTensors) -> Result<Self, ClassicalError> {
        let get = |name: &str| t.get(&format!("{prefix}.{name}"));
        let meta = get("meta")?.data();
        if meta.len() != 8 {
            return Err(ClassicalError::Format(format!("{prefix}.meta has {} values", meta.len())));
        }
        let kernel = if meta[0] == 0.0 { Kernel::Linear } else { Kernel::Rbf { gamma: meta[1] } };
        let dims = meta[5] as usize;
        let sv = get("support_vectors")?;
        let coefs = get("coefs")?.data().to_vec();
        if sv.len() != coefs.len() * dims {
            return Err(ClassicalError::Format(format!("{prefix}: support vector table does not match coefficients")));
        }
        Ok(Self {
            kernel,
            c: meta[2],
            epsilon: meta[3],
            bias: meta[4],
            dims,
            support_vectors: if dims == 0 { vec![Vec::new(); coefs.len()] } else { sv.data().chunks(dims).map(<[f64]>::to_vec).collect() },
            coefs,
            objective: meta[6],
            iterations: meta[7] as usize,
            trace: Vec::new(),
        })
    }
}
