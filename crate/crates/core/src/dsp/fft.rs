//! Iterative radix-2 FFT.

use num_complex::Complex64;

fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        // Direct per-index twiddles; no accumulated rotation.
        let twiddles: Vec<Complex64> = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

/// In-place forward transform, `X[k] = sum x[n] e^{-2 pi i k n / N}`.
/// Panics unless the length is a power of two.
pub fn fft(buf: &mut [Complex64]) {
    transform(buf, false);
}

/// In-place inverse transform including the `1/N` scale.
pub fn ifft(buf: &mut [Complex64]) {
    transform(buf, true);
}

/// Forward transform of a real signal, zero-padded to `n`.
pub fn rfft(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().take(n).map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fft(&mut buf);
    buf
}
