//! Least-squares point estimates of `(b, c)` by Nelder–Mead.

use crate::error::{invalid, Error, Result};
use crate::signal::{AScan, ExcitationPulse, MaterialParams, PlateModel, PriorBox, ScanSet};
use crate::solver::TelegraphSolver;

/// Trapezoid-weighted discrete `L2` norm of `a - b` on a uniform grid.
pub fn l2_distance(a: &[f64], b: &[f64], dt: f64) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        let d = a[i] - b[i];
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        sum += w * d * d;
    }
    (sum * dt).sqrt()
}

/// `‖g_meas - g_comp(params)‖` over the whole record.
pub fn misfit(params: MaterialParams, g_meas: &AScan, pulse: &ExcitationPulse, plate: PlateModel) -> Result<f64> {
    if !g_meas.grid().same_as(pulse.grid()) {
        return Err(invalid("measured scan and pulse use different time grids"));
    }
    let solver = TelegraphSolver::new(pulse, plate)?;
    MisfitObjective::new(&solver, g_meas)?.eval(params)
}

/// Misfit against one measurement, reusing a solver.
#[derive(Debug, Clone)]
pub struct MisfitObjective<'a> {
    solver: &'a TelegraphSolver,
    measured: &'a [f64],
}

impl<'a> MisfitObjective<'a> {
    pub fn new(solver: &'a TelegraphSolver, g_meas: &'a AScan) -> Result<Self> {
        if !g_meas.grid().same_as(solver.grid()) {
            return Err(invalid("measured scan and solver use different time grids"));
        }
        Ok(Self { solver, measured: g_meas.samples() })
    }

    pub fn eval(&self, params: MaterialParams) -> Result<f64> {
        let comp = self.solver.surface_prefix(params, self.measured.len())?;
        Ok(l2_distance(self.measured, &comp, self.solver.grid().dt()))
    }
}

/// Simplex coefficients and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Initial step along each coordinate.
    pub initial_step: f64,
    /// Stop when the simplex diameter falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.05,
            tolerance: 1e-5,
            max_iterations: 500,
        }
    }
}

/// Best vertex found by [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub evaluations: usize,
}

/// Derivative-free minimization. Non-finite objective values are treated as
/// `+∞`, which the contraction steps move away from.
pub fn nelder_mead<F>(mut objective: F, start: &[f64], options: &NelderMeadOptions) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    if dim == 0 {
        return Err(invalid("empty start vector"));
    }
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = objective(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), eval(start)));
    for i in 0..dim {
        let mut x = start.to_vec();
        x[i] += options.initial_step;
        let v = eval(&x);
        simplex.push((x, v));
    }
    if simplex.iter().all(|(_, v)| !v.is_finite()) {
        return Err(Error::OptimizationFailure("objective is not finite at any initial vertex".into()));
    }

    let mut iterations = 0;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < options.tolerance {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / dim as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, x)| c + t * (x - c)).collect()
        };
        let best = simplex[0].1;
        let second_worst = simplex[dim - 1].1;
        let worst = simplex[dim].1;

        let xr = along(-options.reflection, &simplex[dim].0);
        let fr = eval(&xr);
        if fr < best {
            let xe = along(-options.reflection * options.expansion, &simplex[dim].0);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < second_worst {
            simplex[dim] = (xr, fr);
            continue;
        }
        if fr < worst {
            let xc = along(options.contraction, &xr);
            let fc = eval(&xc);
            if fc <= fr {
                simplex[dim] = (xc, fc);
                continue;
            }
        } else {
            let xc = along(options.contraction, &simplex[dim].0);
            let fc = eval(&xc);
            if fc < worst {
                simplex[dim] = (xc, fc);
                continue;
            }
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, x)| a + options.shrink * (x - a)).collect();
            let v = eval(&x);
            *vertex = (x, v);
        }
    }
    let (x, value) = simplex.swap_remove(0);
    Ok(SimplexResult { x, value, iterations, converged, evaluations })
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..simplex.len() {
        for j in i + 1..simplex.len() {
            let dist = simplex[i].0.iter().zip(&simplex[j].0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            d = d.max(dist.sqrt());
        }
    }
    d
}

/// Point estimate at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub params: MaterialParams,
    pub misfit: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize the misfit over `bounds`, in coordinates scaled to the unit
/// square. Points outside the box score `+∞`.
pub fn calibrate(
    objective: &MisfitObjective<'_>,
    start: MaterialParams,
    bounds: &PriorBox,
    options: &NelderMeadOptions,
) -> Result<CalibrationResult> {
    if !bounds.contains(start) {
        return Err(invalid(format!("start ({}, {}) lies outside the box", start.b, start.c)));
    }
    let mut failure = None;
    let result = nelder_mead(
        |u| {
            let p = bounds.from_unit([u[0], u[1]]);
            if !bounds.contains(p) {
                return f64::INFINITY;
            }
            match objective.eval(p) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            }
        },
        &bounds.to_unit(start),
        options,
    );
    let result = match (result, failure) {
        (Err(_), Some(e)) => return Err(e),
        (r, _) => r?,
    };
    Ok(CalibrationResult {
        params: bounds.from_unit([result.x[0], result.x[1]]),
        misfit: result.value,
        iterations: result.iterations,
        converged: result.converged,
    })
}

/// Per-location estimates on a scan-set grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMap {
    pub nx: usize,
    pub ny: usize,
    /// Row-major; `None` where no scan was available or the fit failed.
    pub cells: Vec<Option<CalibrationResult>>,
    /// `(row-major index, message)` for locations whose fit failed.
    pub failures: Vec<(usize, String)>,
    pub label: String,
}

impl ParameterMap {
    pub fn get(&self, ix: usize, iy: usize) -> Option<&CalibrationResult> {
        self.cells.get(iy * self.nx + ix).and_then(|c| c.as_ref())
    }
}

/// Calibrate every present scan from the same start.
pub fn calibrate_grid(
    scans: &ScanSet,
    pulse: &ExcitationPulse,
    plate: PlateModel,
    start: MaterialParams,
    bounds: &PriorBox,
    options: &NelderMeadOptions,
) -> Result<ParameterMap> {
    let solver = TelegraphSolver::new(pulse, plate)?;
    let (nx, ny) = scans.shape();
    let mut cells = Vec::with_capacity(nx * ny);
    let mut failures = Vec::new();
    for (index, cell) in scans.cells().iter().enumerate() {
        let Some(scan) = cell else {
            cells.push(None);
            continue;
        };
        let fit = MisfitObjective::new(&solver, scan).and_then(|obj| calibrate(&obj, start, bounds, options));
        match fit {
            Ok(r) => cells.push(Some(r)),
            Err(e) => {
                failures.push((index, e.to_string()));
                cells.push(None);
            }
        }
    }
    Ok(ParameterMap { nx, ny, cells, failures, label: scans.label().to_string() })
}
