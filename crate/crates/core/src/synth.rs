//! Ground truth for verification: synthetic excitation pulses, an
//! independent finite-difference solver, and synthetic scan sets with an
//! implanted damage patch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::signal::{AScan, ExcitationPulse, MaterialParams, PlateModel, ScanSet, TimeGrid};
use crate::solver::TelegraphSolver;

/// Hann-windowed sinusoid starting at `start` and lasting `n_cycles / f0`.
///
/// The envelope `sin^2` makes both the pulse and its first derivative vanish
/// at the support endpoints.
pub fn make_pulse(
    center_freq: f64,
    n_cycles: f64,
    amplitude: f64,
    start: f64,
    grid: TimeGrid,
    t_ex: f64,
) -> Result<ExcitationPulse> {
    if !(center_freq > 0.0) || !(n_cycles > 0.0) {
        return Err(invalid("pulse frequency and cycle count must be positive"));
    }
    let duration = n_cycles / center_freq;
    if !(start > grid.t0()) || start + duration >= t_ex {
        return Err(invalid(format!(
            "pulse support [{start}, {}] does not fit in (0, {t_ex})",
            start + duration
        )));
    }
    let samples = (0..grid.n_samples())
        .map(|i| pulse_value(grid.time(i), center_freq, duration, amplitude, start))
        .collect();
    ExcitationPulse::new(grid, samples, t_ex)
}

fn pulse_value(t: f64, f0: f64, duration: f64, amplitude: f64, start: f64) -> f64 {
    let u = t - start;
    if u <= 0.0 || u >= duration {
        return 0.0;
    }
    let env = (std::f64::consts::PI * u / duration).sin();
    amplitude * env * env * (2.0 * std::f64::consts::PI * f0 * u).sin()
}

/// Catmull-Rom interpolation of uniformly sampled data.
fn interpolate(samples: &[f64], x: f64) -> f64 {
    let n = samples.len();
    if x <= 0.0 {
        return samples[0];
    }
    let i = x.floor() as usize;
    if i + 1 >= n {
        return samples[n - 1];
    }
    let t = x - i as f64;
    let at = |k: isize| samples[(k.max(0) as usize).min(n - 1)];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    0.5 * (2.0 * p1
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t)
}

/// Finite-difference trace plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FdtdRun {
    pub scan: AScan,
    /// Discrete energy sampled at every output time after `T_ex`.
    pub energy: Vec<(f64, f64)>,
}

/// Second-order centred scheme for `u_tt + b u_t = c^2 u_zz`.
///
/// The step sizes are the plate and pulse grids divided by `refinement`.
/// The surface is Dirichlet (`u = f`) up to `T_ex` and Neumann afterwards;
/// the bottom is Neumann throughout.
pub fn fdtd_solve(
    params: MaterialParams,
    pulse: &ExcitationPulse,
    plate: PlateModel,
    grid: &TimeGrid,
    refinement: usize,
) -> Result<AScan> {
    Ok(fdtd_run(params, pulse, plate, grid, refinement)?.scan)
}

pub fn fdtd_run(
    params: MaterialParams,
    pulse: &ExcitationPulse,
    plate: PlateModel,
    grid: &TimeGrid,
    refinement: usize,
) -> Result<FdtdRun> {
    if refinement == 0 {
        return Err(invalid("refinement must be at least 1"));
    }
    if !grid.same_as(pulse.grid()) {
        return Err(invalid("output grid must match the pulse grid"));
    }
    let m = plate.cells() * refinement;
    let dz = plate.length() / m as f64;
    let dt = grid.dt() / refinement as f64;
    let courant = params.c * dt / dz;
    if courant > 1.0 {
        return Err(invalid(format!("CFL violated: c dt / dz = {courant}")));
    }
    let a = courant * courant;
    let beta = 0.5 * params.b * dt;
    let inv = 1.0 / (1.0 + beta);
    let t_ex = pulse.t_ex();
    let forcing = pulse.samples();

    let mut prev = vec![0.0; m + 1];
    let mut cur = vec![0.0; m + 1];
    let mut next = vec![0.0; m + 1];
    let n_out = grid.n_samples();
    let mut out = vec![0.0; n_out];
    let mut energy = Vec::new();
    let steps = (n_out - 1) * refinement;
    for step in 0..steps {
        let t_next = (step + 1) as f64 * dt;
        let driven = t_next <= t_ex + 1e-9 * dt;
        for i in 1..m {
            let lap = cur[i - 1] - 2.0 * cur[i] + cur[i + 1];
            next[i] = (2.0 * cur[i] - (1.0 - beta) * prev[i] + a * lap) * inv;
        }
        next[m] = (2.0 * cur[m] - (1.0 - beta) * prev[m] + a * 2.0 * (cur[m - 1] - cur[m])) * inv;
        next[0] = if driven {
            interpolate(forcing, t_next / grid.dt())
        } else {
            (2.0 * cur[0] - (1.0 - beta) * prev[0] + a * 2.0 * (cur[1] - cur[0])) * inv
        };
        if (step + 1) % refinement == 0 {
            let idx = (step + 1) / refinement;
            out[idx] = next[0];
            if !driven && t_next - dt > t_ex {
                energy.push((t_next, staggered_energy(&cur, &next, dt, dz, params.c)));
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    let scan = AScan::new(*grid, out, Default::default())?;
    Ok(FdtdRun { scan, energy })
}

/// Leapfrog energy between two time levels on `[0, L]`; conserved exactly
/// by the undamped Neumann scheme.
fn staggered_energy(old: &[f64], new: &[f64], dt: f64, dz: f64, c: f64) -> f64 {
    let m = old.len() - 1;
    let mut kinetic = 0.0;
    for i in 0..=m {
        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
        let v = (new[i] - old[i]) / dt;
        kinetic += w * v * v;
    }
    let mut potential = 0.0;
    for i in 0..m {
        potential += (new[i + 1] - new[i]) * (old[i + 1] - old[i]);
    }
    (kinetic + c * c * potential / (dz * dz)) * dz
}

/// Rectangle of grid cells `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Patch {
    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix < self.x0 + self.width && iy >= self.y0 && iy < self.y0 + self.height
    }
}

/// Damaged region and the parameter shift applied inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damage {
    pub patch: Patch,
    pub delta_b: f64,
    pub delta_c: f64,
}

/// Description of a synthetic specimen.
///
/// Material parameters per cell are the base values, optionally perturbed by
/// independent Gaussian jitter (a homogeneous random field), plus the damage
/// shift inside the patch. Gaussian noise of standard deviation
/// `noise_sigma` is then added to every time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlateSpec {
    pub nx: usize,
    pub ny: usize,
    pub resolution_mm: (f64, f64),
    pub base: MaterialParams,
    pub jitter: (f64, f64),
    pub damage: Option<Damage>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticPlateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(invalid("plate grid must be non-empty"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.jitter.0 >= 0.0) || !(self.jitter.1 >= 0.0) {
            return Err(invalid("noise levels must be non-negative"));
        }
        if let Some(d) = &self.damage {
            MaterialParams::new(self.base.b + d.delta_b, self.base.c + d.delta_c)?;
            if d.patch.x0 + d.patch.width > self.nx || d.patch.y0 + d.patch.height > self.ny {
                return Err(invalid("damage patch extends outside the plate"));
            }
        }
        Ok(())
    }

    /// Nominal (jitter-free) parameters at a cell.
    pub fn nominal(&self, ix: usize, iy: usize) -> MaterialParams {
        match &self.damage {
            Some(d) if d.patch.contains(ix, iy) => MaterialParams {
                b: self.base.b + d.delta_b,
                c: self.base.c + d.delta_c,
            },
            _ => self.base,
        }
    }

    pub fn is_damaged(&self, ix: usize, iy: usize) -> bool {
        self.damage.is_some_and(|d| d.patch.contains(ix, iy))
    }
}

/// Per-cell true parameters and the generated scans.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlate {
    pub scans: ScanSet,
    /// Row-major true parameters.
    pub truth: Vec<MaterialParams>,
}

/// Random stream for cell `index` derived from a root seed.
pub fn cell_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Synthesize a scan set: forward model per cell plus sample noise.
pub fn make_synthetic_plate(
    spec: &SyntheticPlateSpec,
    pulse: &ExcitationPulse,
    plate: PlateModel,
    grid: &TimeGrid,
) -> Result<SyntheticPlate> {
    spec.validate()?;
    if !grid.same_as(pulse.grid()) {
        return Err(invalid("output grid must match the pulse grid"));
    }
    let solver = TelegraphSolver::new(pulse, plate)?;
    let mut set = ScanSet::new(
        *grid,
        (spec.nx, spec.ny),
        spec.resolution_mm,
        pulse.t_ex(),
        format!("synthetic seed={}", spec.seed),
    )?;
    set.set_excitation(Some(pulse.clone()))?;
    let mut truth = Vec::with_capacity(spec.nx * spec.ny);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let mut rng = cell_rng(spec.seed, (iy * spec.nx + ix) as u64);
            let nominal = spec.nominal(ix, iy);
            let jb = spec.jitter.0 * std_normal.sample(&mut rng);
            let jc = spec.jitter.1 * std_normal.sample(&mut rng);
            let params = MaterialParams::new((nominal.b + jb).max(0.0), nominal.c + jc)?;
            let mut samples = solver.forward(params)?.into_samples();
            if spec.noise_sigma > 0.0 {
                for s in samples.iter_mut() {
                    *s += spec.noise_sigma * std_normal.sample(&mut rng);
                }
            }
            set.insert(AScan::new(*grid, samples, set.location_of(ix, iy))?)?;
            truth.push(params);
        }
    }
    Ok(SyntheticPlate { scans: set, truth })
}
