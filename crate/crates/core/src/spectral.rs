//! Thin wrappers around `rustfft` with the transform convention used across
//! the crate: unnormalized forward DFT, `1/N` on the inverse.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for one transform length.
#[derive(Clone)]
pub struct FftPair {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPair").field("len", &self.len).finish()
    }
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward DFT of a real sequence.
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.len);
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
    }

    /// Inverse DFT including the `1/N` factor.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Signed bin index for position `j` of a length-`n` DFT, in `[-n/2, n/2)`.
pub fn signed_bin(j: usize, n: usize) -> isize {
    if j < n.div_ceil(2) || (n % 2 == 1 && j <= n / 2) {
        j as isize
    } else {
        j as isize - n as isize
    }
}

/// Single DFT bin `sum_n x[n] e^{-2 pi i k n / N}` by direct summation.
pub fn dft_bin(x: &[f64], k: usize) -> Complex64 {
    let n = x.len();
    let w = -2.0 * std::f64::consts::PI / n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        if v != 0.0 {
            // index reduced mod n keeps the angle small and the sum exact-phase
            let ang = w * ((i * k) % n) as f64;
            acc += Complex64::new(v * ang.cos(), v * ang.sin());
        }
    }
    acc
}
