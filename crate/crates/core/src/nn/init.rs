use rand::Rng;

use crate::tensor::Tensor;

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
        .expect("init shape is valid")
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Row-major `n x n` orthogonal matrix from Gram-Schmidt on Gaussian rows.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

/// `[hidden, gates * hidden]` recurrent matrix, one orthogonal block per gate.
pub fn recurrent_blocks(rng: &mut impl Rng, hidden: usize, gates: usize) -> Tensor {
    let blocks: Vec<Vec<f64>> = (0..gates).map(|_| orthogonal(rng, hidden)).collect();
    let mut data = vec![0.0; hidden * gates * hidden];
    for (g, block) in blocks.iter().enumerate() {
        for r in 0..hidden {
            for c in 0..hidden {
                data[r * gates * hidden + g * hidden + c] = block[r * hidden + c];
            }
        }
    }
    Tensor::new(vec![hidden, gates * hidden], data).expect("init shape is valid")
}
