//! Raw oscilloscope records to analysis-ready signals.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::signal::{AScan, ExcitationPulse, Location, TimeGrid};
use crate::spectral::{signed_bin, FftPair};

/// Count representing zero amplitude; also the normalization scale.
pub const ZERO_LINE: i32 = 256;
/// Largest count the digitizer produces.
pub const MAX_COUNT: i32 = 511;

/// Default successive-difference bound after the excitation.
pub const DEFAULT_ECHO_JUMP: f64 = 0.25;
/// Default bound during the excitation (effectively disabled).
pub const DEFAULT_EXCITATION_JUMP: f64 = 1.0;
/// Default Tukey taper fraction of the spectral smoothing window.
pub const DEFAULT_TAPER: f64 = 0.5;

/// Digitizer record in integer counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScan {
    pub grid: TimeGrid,
    pub counts: Vec<i32>,
    pub location: Location,
}

/// Result of the transmission-fault check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultReport {
    pub faulty: bool,
    pub first_violation_index: Option<usize>,
    /// Largest successive difference seen after the excitation.
    pub max_echo_jump: f64,
}

/// `(count - 256) / 256`.
pub fn normalize(raw: &RawScan) -> Result<AScan> {
    if raw.counts.len() != raw.grid.n_samples() {
        return Err(Error::CorruptInput(format!(
            "{} counts for a grid of {} samples",
            raw.counts.len(),
            raw.grid.n_samples()
        )));
    }
    let scale = 1.0 / ZERO_LINE as f64;
    let mut samples = Vec::with_capacity(raw.counts.len());
    for (i, &c) in raw.counts.iter().enumerate() {
        if !(0..=MAX_COUNT).contains(&c) {
            return Err(Error::CorruptInput(format!("count {c} at sample {i} outside 0..=511")));
        }
        samples.push((c - ZERO_LINE) as f64 * scale);
    }
    AScan::new(raw.grid, samples, raw.location)
}

/// Flag signals with a jump in successive differences. Larger jumps are
/// tolerated while `t <= t_ex`.
pub fn detect_faulty(scan: &AScan, t_ex: f64, echo_jump: f64, excitation_jump: f64) -> FaultReport {
    let grid = scan.grid();
    let s = scan.samples();
    let mut first = None;
    let mut max_echo: f64 = 0.0;
    for i in 0..s.len().saturating_sub(1) {
        let d = (s[i + 1] - s[i]).abs();
        // a step is attributed to the later of its two samples
        let in_excitation = grid.time(i + 1) <= t_ex;
        let limit = if in_excitation { excitation_jump } else { echo_jump };
        if !in_excitation {
            max_echo = max_echo.max(d);
        }
        if d > limit && first.is_none() {
            first = Some(i + 1);
        }
    }
    FaultReport { faulty: first.is_some(), first_violation_index: first, max_echo_jump: max_echo }
}

/// Remove the transducer's own ringing: `plate - free_head`.
pub fn subtract_head(plate: &AScan, free_head: &AScan) -> Result<AScan> {
    if !plate.grid().same_as(free_head.grid()) {
        return Err(invalid("plate and free-head scans use different time grids"));
    }
    let samples = plate
        .samples()
        .iter()
        .zip(free_head.samples())
        .map(|(a, b)| a - b)
        .collect();
    AScan::new(*plate.grid(), samples, plate.location())
}

/// Tukey window in frequency: flat up to `(1 - taper) cutoff`, cosine roll-off
/// to zero at `cutoff`.
pub fn tukey_gain(freq: f64, cutoff: f64, taper: f64) -> f64 {
    let f = freq.abs();
    let knee = cutoff * (1.0 - taper);
    if f <= knee {
        1.0
    } else if f >= cutoff {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (f - knee) / (cutoff - knee)).cos())
    }
}

/// Low-pass the forcing with a spectral Tukey window, then clamp the result
/// back onto the support `(0, t_ex)`.
pub fn smooth_excitation(pulse: &ExcitationPulse, cutoff: f64, taper: f64) -> Result<ExcitationPulse> {
    let grid = *pulse.grid();
    if !(cutoff > 0.0) || cutoff >= grid.nyquist() {
        return Err(invalid(format!(
            "cutoff {cutoff} MHz must lie in (0, {}) MHz",
            grid.nyquist()
        )));
    }
    if !(taper > 0.0 && taper <= 1.0) {
        return Err(invalid(format!("taper fraction {taper} outside (0, 1]")));
    }
    let n = grid.n_samples();
    let fft = FftPair::new(n);
    let mut spec = fft.forward_real(pulse.samples());
    let df = 1.0 / (n as f64 * grid.dt());
    for (j, v) in spec.iter_mut().enumerate() {
        let f = signed_bin(j, n) as f64 * df;
        *v *= tukey_gain(f, cutoff, taper);
    }
    // an even-length Nyquist bin has no partner; dropping its imaginary
    // part keeps the inverse real
    if n.is_multiple_of(2) {
        spec[n / 2] = Complex64::new(spec[n / 2].re, 0.0);
    }
    fft.inverse_in_place(&mut spec);
    let samples = spec.iter().map(|v| v.re).collect();
    ExcitationPulse::new(grid, samples, pulse.t_ex())
}

/// Forcing read off a measured scan: the surface trace up to `t_ex`.
pub fn excitation_from_scan(scan: &AScan, t_ex: f64) -> Result<ExcitationPulse> {
    ExcitationPulse::new(*scan.grid(), scan.samples().to_vec(), t_ex)
}
