//! Exact forward model for the pulse-echo telegraph problem.
//!
//! The displacement obeys `u_tt + b u_t = c^2 u_zz` on `0 <= z <= L`.
//! During the excitation phase `[0, T_ex]` the surface is driven,
//! `u(0,t) = f(t)`, and the bottom is stress free. This phase is solved in the
//! frequency domain: with `B(s) = sqrt(-s^2 + i b s) / c` the transform of the
//! field is
//!
//! ```text
//! V~(z, s) = F~(s) (e^{(L-z)B} + e^{-(L-z)B}) / (e^{LB} + e^{-LB})
//!          = F~(s) (e^{-zB} + e^{-(2L-z)B}) / (1 + e^{-2LB})
//! ```
//!
//! where the second form never forms a growing exponential because
//! `Re B >= 0`. The field and its time derivative at `T_ex` seed the echo
//! phase, in which both faces are stress free. Reflecting about `z = 0` turns
//! the Neumann problem into a `2L`-periodic one, solved mode by mode with
//! `a_k(t) = A_k e^{λ+ (t-T_ex)} + B_k e^{λ- (t-T_ex)}`,
//! `λ± = -b/2 ± i sqrt(c^2 k^2 π^2 / L^2 - b^2/4)`.
//!
//! The discrete inverse transform is periodic in the record length. The
//! telegraph response to a pulse is not negligible one record later when `b`
//! is small (and never decays for `b = 0`), so the spectrum is evaluated on the
//! line `s = τ - iσ` (an exponential window): the pulse is weighted by
//! `e^{-σt}` before the FFT and the result is reweighted by `e^{σt}`. Aliased
//! copies are then suppressed by `e^{-σ T_rec}`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{AScan, ExcitationPulse, MaterialParams, PlateModel, TimeGrid};
use crate::spectral::FftPair;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `B(s)` at a complex frequency `s`, principal square root, `B(0) = 0`.
pub fn transfer_exponent_at(params: MaterialParams, s: Complex64) -> Complex64 {
    let (x, y) = (s.re, s.im);
    if x == 0.0 && y == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    // -s^2 + i b s, written out to keep the sign of zero imaginary parts
    let arg = Complex64::new(y * y - x * x - params.b * y, params.b * x - 2.0 * x * y);
    arg.sqrt() / params.c
}

/// `B(τ) = sqrt(-τ^2 + i b τ) / c` for a real angular frequency.
pub fn transfer_exponent(params: MaterialParams, tau: f64) -> Complex64 {
    transfer_exponent_at(params, Complex64::new(tau, 0.0))
}

/// Numerical knobs of the spectral solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target attenuation `e^{-σ T_rec}` of the periodic images.
    pub wrap_suppression: f64,
    /// Frequency bins and echo modes whose magnitude stays below this
    /// fraction of the largest one, from some index on, are dropped.
    pub spectral_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { wrap_suppression: 1e-9, spectral_floor: 1e-8 }
    }
}

/// Field `V(z, T_ex)` and `V_t(z, T_ex)` on the plate z-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoState {
    pub z: Vec<f64>,
    pub w0: Vec<f64>,
    pub w0_t: Vec<f64>,
}

/// Frequency-domain field `V~(z, s)` on a set of depths and frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub z_grid: Vec<f64>,
    /// Complex frequencies `τ - iσ`, one per row of `values`.
    pub freq_grid: Vec<Complex64>,
    /// `values[j][m] = V~(z_m, s_j)`.
    pub values: Vec<Vec<Complex64>>,
}

/// Output of the excitation-phase solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSolution {
    /// `V(0, t)` on the whole record; equals the forcing by construction.
    pub surface_v: Vec<f64>,
    pub state: EchoState,
    /// Largest imaginary part met before it was discarded (two-sided
    /// spectral sum and mode coefficients).
    pub imag_residue: f64,
    /// Number of positive-frequency bins retained.
    pub bins_used: usize,
}

/// Time law of a single mode pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeKind {
    /// `A e^{λ+ s} + B e^{λ- s}` with `λ+ != λ-`.
    Distinct,
    /// `(A + B s) e^{-b s / 2}`; used when the discriminant vanishes.
    Repeated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: usize,
    /// 1 for `k = 0` and the Nyquist mode, 2 otherwise (`a_k = a_{-k}`).
    pub multiplicity: f64,
    pub lambda_plus: Complex64,
    pub lambda_minus: Complex64,
    pub a: Complex64,
    pub b: Complex64,
    pub kind: ModeKind,
    /// Fourier coefficients of the even extension at `T_ex`.
    pub value: f64,
    pub velocity: f64,
}

impl Mode {
    /// `a_k(T_ex + s)`.
    pub fn amplitude(&self, s: f64, damping: f64) -> Complex64 {
        match self.kind {
            ModeKind::Distinct => self.a * (self.lambda_plus * s).exp() + self.b * (self.lambda_minus * s).exp(),
            ModeKind::Repeated => (self.a + self.b * s) * (-0.5 * damping * s).exp(),
        }
    }

    /// `a_k'(T_ex + s)`.
    pub fn rate(&self, s: f64, damping: f64) -> Complex64 {
        match self.kind {
            ModeKind::Distinct => {
                self.a * self.lambda_plus * (self.lambda_plus * s).exp()
                    + self.b * self.lambda_minus * (self.lambda_minus * s).exp()
            }
            ModeKind::Repeated => {
                let e = (-0.5 * damping * s).exp();
                (self.b - 0.5 * damping * (self.a + self.b * s)) * e
            }
        }
    }

    /// Bound on `|a_k(T_ex + s)|` for `0 <= s <= horizon`.
    fn bound(&self, horizon: f64) -> f64 {
        match self.kind {
            ModeKind::Distinct => self.a.norm() + self.b.norm(),
            ModeKind::Repeated => self.a.norm() + self.b.norm() * horizon,
        }
    }
}

/// Mode expansion of the echo phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoefficients {
    pub params: MaterialParams,
    pub length: f64,
    pub modes: Vec<Mode>,
    /// Largest imaginary part of the even-extension coefficients.
    pub imag_residue: f64,
}

/// Discriminants below this magnitude use the repeated-root form.
const DEGENERATE_DISCRIMINANT: f64 = 1e-12;

impl ModeCoefficients {
    /// Expand an excitation-phase state into echo-phase modes through a
    /// length-`2M` transform of the evenly extended samples.
    pub fn from_state(state: &EchoState, params: MaterialParams, plate: &PlateModel) -> Result<Self> {
        let fft = FftPair::new(2 * plate.cells());
        Self::from_state_with(state, params, plate, &fft)
    }

    fn from_state_with(
        state: &EchoState,
        params: MaterialParams,
        plate: &PlateModel,
        fft: &FftPair,
    ) -> Result<Self> {
        let m = plate.cells();
        if state.w0.len() != m + 1 || state.w0_t.len() != m + 1 {
            return Err(Error::InvalidArgument(format!(
                "echo state has {} samples, plate grid needs {}",
                state.w0.len(),
                m + 1
            )));
        }
        let (value, res_v) = even_extension_coefficients(&state.w0, fft);
        let (velocity, res_t) = even_extension_coefficients(&state.w0_t, fft);
        let l = plate.length();
        let b = params.b;
        let mut modes = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let wavenumber = params.c * k as f64 * std::f64::consts::PI / l;
            let disc = wavenumber * wavenumber - 0.25 * b * b;
            let v = value[k];
            let vt = velocity[k];
            let multiplicity = if k == 0 || k == m { 1.0 } else { 2.0 };
            let mode = if disc.abs() < DEGENERATE_DISCRIMINANT {
                let lam = Complex64::new(-0.5 * b, 0.0);
                Mode {
                    k,
                    multiplicity,
                    lambda_plus: lam,
                    lambda_minus: lam,
                    a: Complex64::new(v, 0.0),
                    b: Complex64::new(vt + 0.5 * b * v, 0.0),
                    kind: ModeKind::Repeated,
                    value: v,
                    velocity: vt,
                }
            } else {
                let root = Complex64::new(disc, 0.0).sqrt();
                let lp = Complex64::new(-0.5 * b, 0.0) + I * root;
                let lm = Complex64::new(-0.5 * b, 0.0) - I * root;
                let a = (Complex64::new(vt, 0.0) - lm * v) / (lp - lm);
                let bb = Complex64::new(v, 0.0) - a;
                Mode {
                    k,
                    multiplicity,
                    lambda_plus: lp,
                    lambda_minus: lm,
                    a,
                    b: bb,
                    kind: ModeKind::Distinct,
                    value: v,
                    velocity: vt,
                }
            };
            modes.push(mode);
        }
        Ok(Self { params, length: l, modes, imag_residue: res_v.max(res_t) })
    }

    /// `W(0, T_ex + s)` summed directly over all modes (reference path).
    pub fn surface_at(&self, s: f64) -> Complex64 {
        self.modes
            .iter()
            .map(|md| md.amplitude(s, self.params.b) * md.multiplicity)
            .sum()
    }

    /// `W(z, T_ex + s)` for `z` in `[-L, L]`.
    pub fn field_at(&self, z: f64, s: f64) -> Complex64 {
        let l = self.length;
        self.modes
            .iter()
            .map(|md| {
                let phase = (md.k as f64 * std::f64::consts::PI * z / l).cos();
                md.amplitude(s, self.params.b) * md.multiplicity * phase
            })
            .sum()
    }

    /// `∫_{-L}^{L} W_t^2 + c^2 W_z^2 dz` at `T_ex + s`, via Parseval.
    pub fn energy(&self, s: f64) -> f64 {
        let l = self.length;
        let c = self.params.c;
        let b = self.params.b;
        let mut e = 0.0;
        for md in &self.modes {
            let kz = md.k as f64 * std::f64::consts::PI / l;
            let weight = 2.0 * l * md.multiplicity;
            let a = md.amplitude(s, b);
            let r = md.rate(s, b);
            e += weight * (r.norm_sqr() + c * c * kz * kz * a.norm_sqr());
        }
        e
    }

    /// Number of leading modes kept: everything up to the last mode whose
    /// amplitude bound over `[0, horizon]` exceeds `floor` times the largest.
    pub fn truncation(&self, floor: f64, horizon: f64) -> usize {
        let bounds: Vec<f64> = self.modes.iter().map(|md| md.multiplicity * md.bound(horizon)).collect();
        let peak = bounds.iter().cloned().fold(0.0, f64::max);
        bounds.iter().rposition(|&v| v > floor * peak).map_or(0, |i| i + 1)
    }

    /// `W(0, t)` at `count` times `T_ex + s0 + i dt`, summing the modes kept
    /// by [`truncation`](Self::truncation) with the given floor.
    pub fn surface_series(&self, s0: f64, dt: f64, count: usize, floor: f64) -> Vec<f64> {
        let horizon = s0 + dt * count as f64;
        let used = self.truncation(floor, horizon);
        let b = self.params.b;
        let mut out = vec![0.0; count];

        // Oscillatory modes with B = conj(A): a(s) = e^{-bs/2} 2 Re(A e^{iωs}).
        let mut freqs = Vec::new();
        let mut state_re = Vec::new();
        let mut state_im = Vec::new();
        let mut scale = Vec::new();
        for md in &self.modes[..used] {
            let is_oscillatory = md.kind == ModeKind::Distinct
                && md.lambda_plus.im > 0.0
                && (md.lambda_plus.re + 0.5 * b).abs() <= 1e-15 * (1.0 + b);
            if is_oscillatory {
                freqs.push(md.lambda_plus.im);
                scale.push(2.0 * md.multiplicity * md.a);
                state_re.push(0.0);
                state_im.push(0.0);
            } else {
                for (i, o) in out.iter_mut().enumerate() {
                    let s = s0 + dt * i as f64;
                    *o += md.multiplicity * md.amplitude(s, b).re;
                }
            }
        }
        if freqs.is_empty() {
            return out;
        }
        let rot_re: Vec<f64> = freqs.iter().map(|w| (w * dt).cos()).collect();
        let rot_im: Vec<f64> = freqs.iter().map(|w| (w * dt).sin()).collect();
        const REANCHOR: usize = 512;
        let mut i = 0;
        while i < count {
            // exact phase at the start of each block bounds recurrence drift
            let s_block = s0 + dt * i as f64;
            for j in 0..freqs.len() {
                let z = scale[j] * Complex64::from_polar(1.0, freqs[j] * s_block);
                state_re[j] = z.re;
                state_im[j] = z.im;
            }
            let end = (i + REANCHOR).min(count);
            for (offset, slot) in out[i..end].iter_mut().enumerate() {
                let acc: f64 = state_re.iter().sum();
                for j in 0..freqs.len() {
                    let re = state_re[j] * rot_re[j] - state_im[j] * rot_im[j];
                    let im = state_re[j] * rot_im[j] + state_im[j] * rot_re[j];
                    state_re[j] = re;
                    state_im[j] = im;
                }
                let s = s0 + dt * (i + offset) as f64;
                *slot += (-0.5 * b * s).exp() * acc;
            }
            i = end;
        }
        out
    }

    /// `sum_i W(0, T_ex + s0 + i dt) e^{-2πi k (n0 + i) / n}` for each `k` in
    /// `bins`, over `count` samples, in closed form per mode.
    #[allow(clippy::too_many_arguments)]
    pub fn windowed_dft(
        &self,
        s0: f64,
        dt: f64,
        count: usize,
        n0: usize,
        n: usize,
        bins: &[usize],
        floor: f64,
    ) -> Vec<Complex64> {
        let horizon = s0 + dt * count as f64;
        let used = self.truncation(floor, horizon);
        let b = self.params.b;
        let two_pi = 2.0 * std::f64::consts::PI;
        bins.iter()
            .map(|&k| {
                // reduce k n0 mod n first so the phase stays exact for long records
                let theta = two_pi * k as f64 / n as f64;
                let start = Complex64::from_polar(1.0, -two_pi * ((k * n0) % n) as f64 / n as f64);
                let mut acc = Complex64::new(0.0, 0.0);
                for md in &self.modes[..used] {
                    let term = match md.kind {
                        ModeKind::Distinct => {
                            md.a * (md.lambda_plus * s0).exp() * geometric(md.lambda_plus * dt - I * theta, count)
                                + md.b * (md.lambda_minus * s0).exp() * geometric(md.lambda_minus * dt - I * theta, count)
                        }
                        ModeKind::Repeated => (0..count)
                            .map(|i| {
                                let s = s0 + dt * i as f64;
                                md.amplitude(s, b) * Complex64::from_polar(1.0, -theta * i as f64)
                            })
                            .sum(),
                    };
                    acc += md.multiplicity * term;
                }
                acc * start
            })
            .collect()
    }
}

/// `sum_{i < count} e^{x i}`.
fn geometric(x: Complex64, count: usize) -> Complex64 {
    let den = expm1(x);
    if den == Complex64::new(0.0, 0.0) {
        return Complex64::new(count as f64, 0.0);
    }
    expm1(x * count as f64) / den
}

/// `e^x - 1` without cancellation for small `x`.
fn expm1(x: Complex64) -> Complex64 {
    let half = (0.5 * x.im).sin();
    Complex64::new(
        x.re.exp_m1() * x.im.cos() - 2.0 * half * half,
        x.re.exp() * x.im.sin(),
    )
}

fn even_extension_coefficients(half: &[f64], fft: &FftPair) -> (Vec<f64>, f64) {
    let m = half.len() - 1;
    let n = 2 * m;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, v) in buf.iter_mut().enumerate() {
        let src = if i <= m { i } else { n - i };
        *v = Complex64::new(half[src], 0.0);
    }
    fft.forward_in_place(&mut buf);
    let scale = 1.0 / n as f64;
    let mut residue: f64 = 0.0;
    let coeffs = buf[..=m]
        .iter()
        .map(|v| {
            residue = residue.max((v.im * scale).abs());
            v.re * scale
        })
        .collect();
    (coeffs, residue)
}

/// One positive-frequency bin of the weighted pulse spectrum.
#[derive(Debug, Clone, Copy)]
struct Bin {
    /// `τ_j - iσ`.
    s: Complex64,
    /// Raw DFT value `G_j` of the weighted pulse.
    g: Complex64,
    /// 2 for bins standing in for a `±τ` pair, 1 otherwise.
    one_sided: f64,
    /// `(w_j / N) G_j e^{i s T_ex}` with `w_j` the one-sided weight.
    weight: Complex64,
    /// Counterpart at `-τ_j` for the reality diagnostic.
    mirror_s: Complex64,
    mirror_g: Complex64,
}

/// Solver context for one excitation pulse and plate.
///
/// Holds the transform plans and the pulse spectrum, so repeated forward
/// solves at different material parameters only redo the parameter-dependent
/// work. Cloning is cheap (plans are shared) and a clone per thread is the
/// intended way to solve concurrently.
#[derive(Debug, Clone)]
pub struct TelegraphSolver {
    grid: TimeGrid,
    plate: PlateModel,
    t_ex: f64,
    t_ex_index: usize,
    sigma: f64,
    forcing: Vec<f64>,
    bins: Vec<Bin>,
    /// Leading bins kept; the pulse spectrum is below the floor beyond.
    used_bins: usize,
    mode_fft: FftPair,
    options: SolverOptions,
}

impl TelegraphSolver {
    pub fn new(pulse: &ExcitationPulse, plate: PlateModel) -> Result<Self> {
        Self::with_options(pulse, plate, SolverOptions::default())
    }

    pub fn with_options(pulse: &ExcitationPulse, plate: PlateModel, options: SolverOptions) -> Result<Self> {
        let grid = *pulse.grid();
        if grid.t0() != 0.0 {
            return Err(Error::InvalidArgument("pulse grid must start at t = 0".into()));
        }
        if !(options.wrap_suppression > 0.0 && options.wrap_suppression < 1.0) {
            return Err(Error::InvalidArgument("wrap suppression must be in (0, 1)".into()));
        }
        if !(options.spectral_floor >= 0.0 && options.spectral_floor < 1.0) {
            return Err(Error::InvalidArgument("spectral floor must be in [0, 1)".into()));
        }
        let n = grid.n_samples();
        let dt = grid.dt();
        let sigma = -options.wrap_suppression.ln() / grid.record_length();
        let t_ex = pulse.t_ex();

        let weighted: Vec<f64> = pulse
            .samples()
            .iter()
            .enumerate()
            .map(|(i, &f)| f * (-sigma * grid.time(i)).exp())
            .collect();
        let spectrum = FftPair::new(n).forward_real(&weighted);

        let half = n / 2;
        let mut bins = Vec::with_capacity(half + 1);
        for j in 0..=half {
            let tau = 2.0 * std::f64::consts::PI * j as f64 / (n as f64 * dt);
            let s = Complex64::new(tau, -sigma);
            let one_sided = if j == 0 || (n.is_multiple_of(2) && j == half) { 1.0 } else { 2.0 };
            let weight = spectrum[j] * (one_sided / n as f64) * (I * s * t_ex).exp();
            let mirror = (n - j) % n;
            bins.push(Bin {
                s,
                g: spectrum[j],
                one_sided,
                weight,
                mirror_s: Complex64::new(-tau, -sigma),
                mirror_g: spectrum[mirror],
            });
        }
        let peak = bins.iter().map(|b| b.g.norm()).fold(0.0, f64::max);
        let used_bins = bins
            .iter()
            .rposition(|b| b.g.norm() > options.spectral_floor * peak)
            .map_or(1, |j| j + 1);
        Ok(Self {
            grid,
            plate,
            t_ex,
            t_ex_index: pulse.t_ex_index(),
            sigma,
            forcing: pulse.samples().to_vec(),
            bins,
            used_bins,
            mode_fft: FftPair::new(2 * plate.cells()),
            options,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn plate(&self) -> &PlateModel {
        &self.plate
    }

    pub fn t_ex(&self) -> f64 {
        self.t_ex
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Number of positive-frequency bins entering every solve.
    pub fn bins_used(&self) -> usize {
        self.used_bins
    }

    /// Transfer-function field on the z-grid for the retained bins.
    pub fn spectral_field(&self, params: MaterialParams) -> SpectralField {
        let used = self.used_bins;
        let m = self.plate.cells();
        let dz = self.plate.dz();
        let mut e = Powers::new(2 * m + 1);
        let mut values = Vec::with_capacity(used);
        let mut freq_grid = Vec::with_capacity(used);
        for bin in &self.bins[..used] {
            let big_b = transfer_exponent_at(params, bin.s);
            e.fill(big_b, dz);
            let den = Complex64::new(1.0, 0.0) + e.at(2 * m);
            let g = bin.g;
            let row = (0..=m).map(|i| g * (e.at(i) + e.at(2 * m - i)) / den).collect();
            values.push(row);
            freq_grid.push(bin.s);
        }
        SpectralField {
            z_grid: (0..=m).map(|i| i as f64 * dz).collect(),
            freq_grid,
            values,
        }
    }

    /// Excitation phase: surface trace plus `V`, `V_t` at `T_ex`.
    pub fn solve_excitation(&self, params: MaterialParams) -> Result<ExcitationSolution> {
        self.excitation(params, true)
    }

    /// `check` adds the two-sided reality diagnostic; without it
    /// `imag_residue` is reported as zero.
    fn excitation(&self, params: MaterialParams, check: bool) -> Result<ExcitationSolution> {
        let m = self.plate.cells();
        let dz = self.plate.dz();
        let used = self.used_bins;
        let mut w0 = vec![0.0; m + 1];
        let mut w0_t = vec![0.0; m + 1];
        let mut e = Powers::new(2 * m + 1);
        let probes = [0, m / 2, m];
        let mut two_sided = [Complex64::new(0.0, 0.0); 3];
        let n = self.grid.n_samples() as f64;

        for bin in &self.bins[..used] {
            let big_b = transfer_exponent_at(params, bin.s);
            e.fill(big_b, dz);
            let d = bin.weight / (Complex64::new(1.0, 0.0) + e.at(2 * m));
            let ds = I * bin.s * d;
            let (d_re, d_im, ds_re, ds_im) = (d.re, d.im, ds.re, ds.im);
            let (er, ei) = (&e.re, &e.im);
            for i in 0..=m {
                let rr = er[i] + er[2 * m - i];
                let ri = ei[i] + ei[2 * m - i];
                w0[i] += d_re * rr - d_im * ri;
                w0_t[i] += ds_re * rr - ds_im * ri;
            }

            if !check {
                continue;
            }
            // independent two-sided evaluation at a few depths
            let mirror_b = transfer_exponent_at(params, bin.mirror_s);
            for (slot, &zi) in two_sided.iter_mut().zip(&probes) {
                let z = zi as f64 * dz;
                let pos = bin.g
                    * transfer_ratio(big_b, z, self.plate.length())
                    * (I * bin.s * self.t_ex).exp();
                *slot += pos / n;
                if bin.one_sided == 2.0 {
                    let neg = bin.mirror_g
                        * transfer_ratio(mirror_b, z, self.plate.length())
                        * (I * bin.mirror_s * self.t_ex).exp();
                    *slot += neg / n;
                }
            }
        }
        let mut imag_residue = 0.0_f64;
        if check {
            for (slot, &zi) in two_sided.iter().zip(&probes) {
                // the one-sided and two-sided sums must agree
                imag_residue = imag_residue.max(slot.im.abs()).max((slot.re - w0[zi]).abs());
            }
        }
        if w0.iter().chain(&w0_t).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite field at T_ex for b={}, c={}",
                params.b, params.c
            )));
        }
        Ok(ExcitationSolution {
            surface_v: self.forcing.clone(),
            state: EchoState {
                z: (0..=m).map(|i| i as f64 * dz).collect(),
                w0,
                w0_t,
            },
            imag_residue,
            bins_used: used,
        })
    }

    pub fn modes(&self, state: &EchoState, params: MaterialParams) -> Result<ModeCoefficients> {
        ModeCoefficients::from_state_with(state, params, &self.plate, &self.mode_fft)
    }

    /// Surface signal `u(0, t)` at the first `count` grid samples.
    pub fn surface_prefix(&self, params: MaterialParams, count: usize) -> Result<Vec<f64>> {
        let count = count.min(self.grid.n_samples());
        let mut out: Vec<f64> = self.forcing[..count.min(self.t_ex_index + 1)].to_vec();
        out.resize(count, 0.0);
        let first_echo = self.first_echo_index();
        if count <= first_echo {
            return Ok(out);
        }
        let exc = self.excitation(params, false)?;
        let modes = self.modes(&exc.state, params)?;
        let s0 = self.grid.time(first_echo) - self.t_ex;
        let echo = modes.surface_series(
            s0,
            self.grid.dt(),
            count - first_echo,
            self.options.spectral_floor,
        );
        out[first_echo..].copy_from_slice(&echo);
        Ok(out)
    }

    /// First grid index strictly after `T_ex`.
    pub fn first_echo_index(&self) -> usize {
        let mut i = self.grid.index_at_or_before(self.t_ex);
        while i < self.grid.n_samples() && self.grid.time(i) <= self.t_ex {
            i += 1;
        }
        i
    }

    /// Full A-scan `g_comp(t) = u(0, t)` on the pulse grid.
    pub fn forward(&self, params: MaterialParams) -> Result<AScan> {
        let samples = self.surface_prefix(params, self.grid.n_samples())?;
        AScan::new(self.grid, samples, Default::default())
    }
    /// DFT bins `bins` (record length `N`) of the surface trace zeroed
    /// outside the sample range `first..=last`, without forming the trace.
    pub fn window_dft(
        &self,
        params: MaterialParams,
        first: usize,
        last: usize,
        bins: &[usize],
    ) -> Result<Vec<Complex64>> {
        let n = self.grid.n_samples();
        if first > last || last >= n {
            return Err(Error::InvalidArgument(format!("sample range {first}..={last} outside the record")));
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let first_echo = self.first_echo_index();
        // the pulse support ends strictly after t0, so first_echo >= 1
        let driven_end = last.min(first_echo - 1);
        let mut out: Vec<Complex64> = bins
            .iter()
            .map(|&k| {
                (first..=driven_end)
                    .map(|i| {
                        let phase = -two_pi * ((k * i) % n) as f64 / n as f64;
                        self.forcing[i] * Complex64::from_polar(1.0, phase)
                    })
                    .sum()
            })
            .collect();
        let echo_first = first.max(first_echo);
        if echo_first <= last {
            let exc = self.excitation(params, false)?;
            let modes = self.modes(&exc.state, params)?;
            let s0 = self.grid.time(echo_first) - self.t_ex;
            let echo = modes.windowed_dft(
                s0,
                self.grid.dt(),
                last - echo_first + 1,
                echo_first,
                n,
                bins,
                self.options.spectral_floor,
            );
            for (o, e) in out.iter_mut().zip(echo) {
                *o += e;
            }
        }
        Ok(out)
    }
}

/// `(e^{-zB} + e^{-(2L-z)B}) / (1 + e^{-2LB})`.
fn transfer_ratio(big_b: Complex64, z: f64, l: f64) -> Complex64 {
    ((-z * big_b).exp() + (-(2.0 * l - z) * big_b).exp()) / (1.0 + (-2.0 * l * big_b).exp())
}

const POWER_BLOCK: usize = 64;

/// `exp(-i dz B)` for `i = 0..len`, stored as separate real and imaginary
/// parts. Each block of 64 is an exact anchor times a shared short table, so
/// the products are independent and the error does not accumulate.
struct Powers {
    re: Vec<f64>,
    im: Vec<f64>,
    table: Vec<Complex64>,
}

impl Powers {
    fn new(len: usize) -> Self {
        Self { re: vec![0.0; len], im: vec![0.0; len], table: vec![Complex64::new(0.0, 0.0); POWER_BLOCK] }
    }

    fn fill(&mut self, big_b: Complex64, dz: f64) {
        let q = (-dz * big_b).exp();
        let mut v = Complex64::new(1.0, 0.0);
        for slot in self.table.iter_mut() {
            *slot = v;
            v *= q;
        }
        for (block, (cre, cim)) in self.re.chunks_mut(POWER_BLOCK).zip(self.im.chunks_mut(POWER_BLOCK)).enumerate() {
            let anchor = (-((block * POWER_BLOCK) as f64) * dz * big_b).exp();
            for ((r, i), t) in cre.iter_mut().zip(cim.iter_mut()).zip(&self.table) {
                *r = anchor.re * t.re - anchor.im * t.im;
                *i = anchor.re * t.im + anchor.im * t.re;
            }
        }
    }

    fn at(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }
}

/// Solve the excitation phase for one parameter pair.
pub fn solve_excitation(
    params: MaterialParams,
    pulse: &ExcitationPulse,
    plate: PlateModel,
) -> Result<ExcitationSolution> {
    TelegraphSolver::new(pulse, plate)?.solve_excitation(params)
}

/// Echo-phase surface trace `w(0, t)` for grid times in `(t_ex, t_end]`.
pub fn solve_echo(
    state: &EchoState,
    params: MaterialParams,
    plate: PlateModel,
    t_ex: f64,
    t_end: f64,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    if !(t_end > t_ex) {
        return Err(Error::InvalidArgument("t_end must exceed t_ex".into()));
    }
    let modes = ModeCoefficients::from_state(state, params, &plate)?;
    let mut first = grid.index_at_or_before(t_ex);
    while first < grid.n_samples() && grid.time(first) <= t_ex {
        first += 1;
    }
    let last = grid.index_at_or_before(t_end);
    if first > last {
        return Ok(Vec::new());
    }
    let s0 = grid.time(first) - t_ex;
    Ok(modes.surface_series(s0, grid.dt(), last - first + 1, SolverOptions::default().spectral_floor))
}

/// `g_comp(t) = u(0, t)` on `grid` for material `params`.
pub fn forward_model(
    params: MaterialParams,
    pulse: &ExcitationPulse,
    plate: PlateModel,
    grid: &TimeGrid,
) -> Result<AScan> {
    if !grid.same_as(pulse.grid()) {
        return Err(Error::InvalidArgument("output grid must match the pulse grid".into()));
    }
    TelegraphSolver::new(pulse, plate)?.forward(params)
}
