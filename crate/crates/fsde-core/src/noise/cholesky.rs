//! Dense Cholesky sampling of a stationary Gaussian sequence. O(n^3) once per
//! call; exact for any positive-definite autocovariance. Serves as the
//! reference method and as the fallback when a circulant embedding fails.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Lower-triangular Cholesky factor of the Toeplitz covariance `cov(|i-j|)`,
/// stored row-packed: row i occupies entries `i(i+1)/2 ..`.
pub fn toeplitz_cholesky<C: Fn(usize) -> f64>(n: usize, cov: C) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; n * (n + 1) / 2];
    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
    for i in 0..n {
        for j in 0..=i {
            let mut s = cov(i - j);
            for k in 0..j {
                s -= l[idx(i, k)] * l[idx(j, k)];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[idx(i, j)] = s.sqrt();
            } else {
                l[idx(i, j)] = s / l[idx(j, j)];
            }
        }
    }
    Some(l)
}

/// One sample of length n via a precomputed factor.
pub fn sample_with_factor(n: usize, l: &[f64], rng: &mut ChaCha12Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
    (0..n)
        .map(|i| (0..=i).map(|j| l[idx(i, j)] * z[j]).sum())
        .collect()
}
