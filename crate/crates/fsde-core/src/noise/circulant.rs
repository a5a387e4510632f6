//! Exact stationary Gaussian sequence sampling by circulant embedding
//! (Davies-Harte / Wood-Chan). The autocovariance sequence is embedded in a
//! circulant matrix whose eigenvalues come from one FFT; a nonnegative
//! spectrum gives an exact sample in O(n log n).

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Outcome metadata: embedding size actually used and the smallest eigenvalue
/// encountered (before clamping roundoff negatives).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingInfo {
    pub size: usize,
    pub min_eigenvalue: f64,
}

pub enum EmbeddingOutcome {
    Sample(Vec<f64>, EmbeddingInfo),
    /// Spectrum stayed negative after maximal padding.
    NegativeSpectrum(EmbeddingInfo),
}

/// Draws one stationary sequence of length `n` with autocovariance `cov(k)`.
///
/// Embedding sizes tried: `2n`, then the next power of two and its 2x, 4x, 8x
/// paddings. Eigenvalues above `-1e-9 * max_eig` count as roundoff and are
/// clamped to zero; anything lower reports a negative spectrum so the caller
/// can fall back to Cholesky.
pub fn sample_stationary<C: Fn(usize) -> f64>(
    n: usize,
    cov: C,
    rng: &mut ChaCha12Rng,
) -> EmbeddingOutcome {
    assert!(n >= 1);
    let base = (2 * n).next_power_of_two();
    let mut worst = EmbeddingInfo { size: 0, min_eigenvalue: f64::INFINITY };
    for factor in [1usize, 2, 4, 8] {
        let m = base * factor;
        let half = m / 2;
        // First row of the embedding: cov(0..=half), mirrored.
        let mut row = vec![0.0f64; m];
        for (k, r) in row.iter_mut().enumerate().take(half + 1) {
            *r = cov(k);
        }
        for k in 1..half {
            row[m - k] = row[k];
        }
        let eigs = real_fft(&row);
        let max_eig = eigs.iter().cloned().fold(0.0f64, f64::max);
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < worst.min_eigenvalue {
            worst = EmbeddingInfo { size: m, min_eigenvalue: min_eig };
        }
        if min_eig >= -1e-9 * max_eig.max(1e-300) {
            let info = EmbeddingInfo { size: m, min_eigenvalue: min_eig };
            return EmbeddingOutcome::Sample(synthesize(n, &eigs, rng), info);
        }
    }
    EmbeddingOutcome::NegativeSpectrum(worst)
}

/// Wood-Chan synthesis: Hermitian random spectrum with the prescribed
/// eigenvalues, one forward FFT, real part of the first n entries.
fn synthesize(n: usize, eigs: &[f64], rng: &mut ChaCha12Rng) -> Vec<f64> {
    let m = eigs.len();
    let half = m / 2;
    let mf = m as f64;
    let mut spec = vec![Complex::new(0.0, 0.0); m];
    let lambda = |k: usize| eigs[k].max(0.0);

    let z0: f64 = rng.sample(StandardNormal);
    spec[0] = Complex::new((lambda(0) / mf).sqrt() * z0, 0.0);
    let zh: f64 = rng.sample(StandardNormal);
    spec[half] = Complex::new((lambda(half) / mf).sqrt() * zh, 0.0);
    for k in 1..half {
        let s = (lambda(k) / (2.0 * mf)).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        spec[k] = Complex::new(s * re, s * im);
        spec[m - k] = spec[k].conj();
    }

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut spec);
    spec[..n].iter().map(|c| c.re).collect()
}

fn real_fft(row: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = row.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}
