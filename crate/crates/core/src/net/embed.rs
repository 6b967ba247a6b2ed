use crate::real::Real;

/// Per-component Fourier features of a fractional displacement:
/// `sin(2πkx)` for `k = 0..=n_freq`, then `cos(2πkx)` for the same `k`.
/// Period 1 in every component.
pub fn sinusoidal_embedding<T: Real>(x: T, n_freq: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), 2 * (n_freq + 1));
    let theta = T::TAU() * x;
    for k in 0..=n_freq {
        let (s, c) = (theta * T::from_usize_lossy(k)).sin_cos();
        out[k] = s;
        out[n_freq + 1 + k] = c;
    }
}

pub fn edge_embedding_dim(n_freq: usize) -> usize {
    3 * 2 * (n_freq + 1)
}

/// Embedding of a displacement vector, one block of `2(n_freq+1)` per axis.
pub fn displacement_embedding<T: Real>(d: &[T; 3], n_freq: usize, out: &mut [T]) {
    let w = 2 * (n_freq + 1);
    for k in 0..3 {
        sinusoidal_embedding(d[k], n_freq, &mut out[k * w..(k + 1) * w]);
    }
}

/// `sin(ω_k t)` then `cos(ω_k t)` with `dim / 2` frequencies spaced
/// geometrically from 1 to 100.
pub fn time_embedding<T: Real>(t: T, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for k in 0..half {
        let omega = if half > 1 { (100f64).powf(k as f64 / (half - 1) as f64) } else { 1.0 };
        let (s, c) = (t * T::lit(omega)).sin_cos();
        out[k] = s;
        out[half + k] = c;
    }
    out
}
