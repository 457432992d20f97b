//! Feature vector of the first echo: phase and magnitude of the three
//! dominant DFT bins, and the feature covariance of a reference plate.

use nalgebra::{Cholesky, Matrix6, SymmetricEigen, Vector6, U6};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::signal::{AScan, ScanSet, TimeGrid};
use crate::spectral::FftPair;

/// Number of DFT bins in a feature vector.
pub const FEATURE_BINS: usize = 3;
/// Length of the flattened feature vector.
pub const FEATURE_DIM: usize = 2 * FEATURE_BINS;
/// Default upper frequency for bin selection [MHz].
pub const DEFAULT_CUTOFF: f64 = 6.5;

/// Time window holding the first echo [μs].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoWindow {
    t_start: f64,
    t_end: f64,
}

impl EchoWindow {
    pub fn new(t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start < t_end) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(invalid(format!("echo window [{t_start}, {t_end}] is empty")));
        }
        Ok(Self { t_start, t_end })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Inclusive sample range `first..=last` inside the window.
    pub fn sample_range(&self, grid: &TimeGrid) -> Result<(usize, usize)> {
        let eps = 1e-9 * grid.dt();
        let end = grid.t0() + (grid.n_samples() - 1) as f64 * grid.dt();
        if self.t_end > end + eps {
            return Err(invalid(format!("echo window ends at {} beyond the record end {end}", self.t_end)));
        }
        let first = ((self.t_start - grid.t0() - eps) / grid.dt()).ceil().max(0.0) as usize;
        let last = ((self.t_end - grid.t0() + eps) / grid.dt()).floor() as usize;
        if first > last {
            return Err(invalid("echo window contains no samples"));
        }
        Ok((first, last))
    }
}

impl Default for EchoWindow {
    fn default() -> Self {
        Self { t_start: 11.8, t_end: 22.0 }
    }
}

/// `α = (φ_1, φ_2, φ_3, r_1, r_2, r_3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub phases: [f64; FEATURE_BINS],
    pub amplitudes: [f64; FEATURE_BINS],
    pub bin_indices: [usize; FEATURE_BINS],
}

impl FeatureVector {
    pub fn from_bins(values: &[Complex64], bins: [usize; FEATURE_BINS]) -> Self {
        let mut phases = [0.0; FEATURE_BINS];
        let mut amplitudes = [0.0; FEATURE_BINS];
        for (i, v) in values.iter().take(FEATURE_BINS).enumerate() {
            amplitudes[i] = v.norm();
            phases[i] = if amplitudes[i] == 0.0 { 0.0 } else { wrap_phase(v.arg()) };
        }
        Self { phases, amplitudes, bin_indices: bins }
    }

    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..FEATURE_BINS].copy_from_slice(&self.phases);
        out[FEATURE_BINS..].copy_from_slice(&self.amplitudes);
        out
    }

    /// `self - other` with phase differences wrapped to `(-π, π]`.
    pub fn residual(&self, other: &FeatureVector) -> [f64; FEATURE_DIM] {
        let mut r = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_BINS {
            r[i] = wrap_phase(self.phases[i] - other.phases[i]);
            r[FEATURE_BINS + i] = self.amplitudes[i] - other.amplitudes[i];
        }
        r
    }
}

/// Angle in `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// `sum_{i in first..=last} x[i] e^{-2πi k i / n}`.
pub fn window_bin(x: &[f64], first: usize, last: usize, k: usize, n: usize) -> Complex64 {
    let w = -2.0 * std::f64::consts::PI / n as f64;
    x[first..=last]
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let i = first + j;
            v * Complex64::from_polar(1.0, w * ((k * i) % n) as f64)
        })
        .sum()
}

/// Zero the scan outside the window and read off the three bins of the
/// full-length DFT.
pub fn extract_features(scan: &AScan, window: &EchoWindow, bins: [usize; FEATURE_BINS]) -> Result<FeatureVector> {
    let n = scan.grid().n_samples();
    if bins.iter().any(|&k| 2 * k >= n) {
        return Err(invalid(format!("bins {bins:?} must lie below N/2 = {}", n / 2)));
    }
    let (first, last) = window.sample_range(scan.grid())?;
    let values: Vec<Complex64> = bins.iter().map(|&k| window_bin(scan.samples(), first, last, k, n)).collect();
    Ok(FeatureVector::from_bins(&values, bins))
}

/// The three bins of largest mean windowed amplitude across the reference,
/// strictly above DC and below `cutoff` [MHz]; returned in ascending order.
pub fn select_dominant_bins(reference: &ScanSet, window: &EchoWindow, cutoff: f64) -> Result<[usize; FEATURE_BINS]> {
    if reference.is_empty() {
        return Err(invalid("reference scan set is empty"));
    }
    let grid = reference.grid();
    let n = grid.n_samples();
    let (first, last) = window.sample_range(grid)?;
    let df = 1.0 / (n as f64 * grid.dt());
    let top = ((cutoff / df).ceil() as usize).min(n.div_ceil(2));
    if top <= FEATURE_BINS {
        return Err(invalid(format!("cutoff {cutoff} MHz leaves fewer than {FEATURE_BINS} bins")));
    }
    let fft = FftPair::new(n);
    let mut mean = vec![0.0; top];
    let mut buf = vec![0.0; n];
    for scan in reference.present() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        buf[first..=last].copy_from_slice(&scan.samples()[first..=last]);
        let spec = fft.forward_real(&buf);
        for k in 1..top {
            if (k as f64) * df < cutoff {
                mean[k] += spec[k].norm();
            }
        }
    }
    let mut order: Vec<usize> = (1..top).filter(|&k| mean[k] > 0.0).collect();
    if order.len() < FEATURE_BINS {
        return Err(invalid("reference has no dominant echo frequencies"));
    }
    // stable sort keeps the lower index first among equal amplitudes
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
    let mut bins = [order[0], order[1], order[2]];
    bins.sort_unstable();
    Ok(bins)
}

/// Sample statistics of reference features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCovariance {
    pub sigma: Matrix6<f64>,
    pub mean: [f64; FEATURE_DIM],
    pub bin_indices: [usize; FEATURE_BINS],
    /// Number of reference locations used.
    pub count: usize,
    /// Ridge added to the diagonal (zero when none was needed).
    pub ridge: f64,
    /// The sample covariance had no variance at all.
    pub degenerate: bool,
}

/// Minimum number of reference locations for a non-singular estimate.
pub const MIN_REFERENCE: usize = FEATURE_DIM + 1;
/// Ridge used when the reference shows no variance at all.
const ZERO_VARIANCE_RIDGE: f64 = 1e-12;

impl FeatureCovariance {
    /// Mean and covariance of a set of feature vectors. Phases are averaged
    /// on the circle and their deviations wrapped.
    pub fn from_features(features: &[FeatureVector], bins: [usize; FEATURE_BINS]) -> Result<Self> {
        let n = features.len();
        if n < MIN_REFERENCE {
            return Err(Error::InsufficientData(format!(
                "{n} reference locations, need at least {MIN_REFERENCE}"
            )));
        }
        let mut mean = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_BINS {
            let sum: Complex64 = features.iter().map(|f| Complex64::from_polar(1.0, f.phases[i])).sum();
            mean[i] = if sum.norm() == 0.0 { 0.0 } else { wrap_phase(sum.arg()) };
            mean[FEATURE_BINS + i] = features.iter().map(|f| f.amplitudes[i]).sum::<f64>() / n as f64;
        }
        let centre = FeatureVector {
            phases: [mean[0], mean[1], mean[2]],
            amplitudes: [mean[3], mean[4], mean[5]],
            bin_indices: bins,
        };
        let mut sigma = Matrix6::<f64>::zeros();
        for f in features {
            let d = Vector6::from_row_slice(&f.residual(&centre));
            sigma += d * d.transpose();
        }
        sigma /= (n - 1) as f64;
        sigma = 0.5 * (sigma + sigma.transpose());
        let trace = sigma.trace();
        let min_eig = SymmetricEigen::new(sigma).eigenvalues.min();
        let degenerate = trace == 0.0;
        let ridge = if degenerate {
            ZERO_VARIANCE_RIDGE
        } else if min_eig < 1e-12 * trace {
            1e-10 * trace / FEATURE_DIM as f64
        } else {
            0.0
        };
        sigma += Matrix6::identity() * ridge;
        Ok(Self { sigma, mean, bin_indices: bins, count: n, ridge, degenerate })
    }

    /// Cholesky factor for quadratic forms.
    pub fn whitener(&self) -> Result<Whitener> {
        Cholesky::new(self.sigma)
            .map(|chol| Whitener { chol })
            .ok_or_else(|| Error::NumericalFailure("feature covariance is not positive definite".into()))
    }
}

/// Evaluates `rᵀ Σ⁻¹ r` through a Cholesky factorization.
#[derive(Debug, Clone)]
pub struct Whitener {
    chol: Cholesky<f64, U6>,
}

impl Whitener {
    pub fn quadratic_form(&self, r: &[f64; FEATURE_DIM]) -> f64 {
        let mut y = Vector6::from_row_slice(r);
        self.chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut y);
        y.norm_squared()
    }
}

/// Features of every present scan in `reference`, then their covariance.
pub fn estimate_covariance(
    reference: &ScanSet,
    window: &EchoWindow,
    bins: [usize; FEATURE_BINS],
) -> Result<FeatureCovariance> {
    let features = reference
        .present()
        .map(|s| extract_features(s, window, bins))
        .collect::<Result<Vec<_>>>()?;
    FeatureCovariance::from_features(&features, bins)
}
