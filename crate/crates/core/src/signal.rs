//! Shared signal and plate types.
//!
//! All values here are immutable after construction. The time axis is
//! implicit (`t0 + i * dt`), matching uniformly sampled oscilloscope data.

use crate::error::{invalid, Result};

/// Uniform sampling grid in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n_samples: usize,
    t0: f64,
}

impl TimeGrid {
    pub fn new(dt: f64, n_samples: usize, t0: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if n_samples < 2 {
            return Err(invalid(format!("need at least 2 samples, got {n_samples}")));
        }
        if !t0.is_finite() {
            return Err(invalid("start time must be finite"));
        }
        Ok(Self { dt, n_samples, t0 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// `n_samples * dt`.
    pub fn record_length(&self) -> f64 {
        self.n_samples as f64 * self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Nyquist frequency in MHz.
    pub fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }

    /// Index of the last sample with `time(i) <= t` (clamped to the grid).
    pub fn index_at_or_before(&self, t: f64) -> usize {
        let x = ((t - self.t0) / self.dt + 1e-9).floor();
        if x < 0.0 {
            0
        } else {
            (x as usize).min(self.n_samples - 1)
        }
    }

    /// Bitwise equality of all parameters.
    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.dt.to_bits() == other.dt.to_bits()
            && self.n_samples == other.n_samples
            && self.t0.to_bits() == other.t0.to_bits()
    }
}

/// Grid with `t0 = 0`.
pub fn make_time_grid(dt: f64, n: usize) -> Result<TimeGrid> {
    TimeGrid::new(dt, n, 0.0)
}

/// Position of a scan on the positioning platform.
///
/// Integer grid indices key the location; the millimetre offsets carry the
/// physical spacing so 5 mm and 1 mm scans share one type.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Location {
    pub ix: usize,
    pub iy: usize,
    pub x_mm: f64,
    pub y_mm: f64,
}

impl Location {
    pub fn new(ix: usize, iy: usize, x_mm: f64, y_mm: f64) -> Self {
        Self { ix, iy, x_mm, y_mm }
    }
}

/// One time-sampled signal in normalized amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct AScan {
    grid: TimeGrid,
    samples: Vec<f64>,
    location: Location,
}

impl AScan {
    pub fn new(grid: TimeGrid, samples: Vec<f64>, location: Location) -> Result<Self> {
        if samples.len() != grid.n_samples() {
            return Err(invalid(format!(
                "sample count {} does not match grid ({})",
                samples.len(),
                grid.n_samples()
            )));
        }
        Ok(Self { grid, samples, location })
    }

    pub fn zeros(grid: TimeGrid, location: Location) -> Self {
        Self { grid, samples: vec![0.0; grid.n_samples()], location }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn with_location(mut self, location: Location) -> Self {
        self.location = location;
        self
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Rescale so the largest magnitude is at most one. Signals already in
    /// `[-1, 1]` are returned unchanged, so the operation is idempotent.
    pub fn normalized(&self) -> AScan {
        let peak = self.max_abs();
        if peak <= 1.0 {
            return self.clone();
        }
        AScan {
            grid: self.grid,
            samples: self.samples.iter().map(|s| s / peak).collect(),
            location: self.location,
        }
    }
}

/// Smooth forcing `f(t)` applied at the surface during `[0, t_ex]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationPulse {
    grid: TimeGrid,
    samples: Vec<f64>,
    t_ex: f64,
}

impl ExcitationPulse {
    /// Samples at `t = 0` and `t >= t_ex` are forced to zero.
    pub fn new(grid: TimeGrid, mut samples: Vec<f64>, t_ex: f64) -> Result<Self> {
        if samples.len() != grid.n_samples() {
            return Err(invalid("pulse sample count does not match grid"));
        }
        if !(t_ex > grid.t0()) || t_ex >= grid.time(grid.n_samples() - 1) {
            return Err(invalid(format!("excitation end {t_ex} outside record")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("pulse contains non-finite samples"));
        }
        for (i, s) in samples.iter_mut().enumerate() {
            let t = grid.time(i);
            if t <= grid.t0() || t >= t_ex - 1e-9 * grid.dt() {
                *s = 0.0;
            }
        }
        Ok(Self { grid, samples, t_ex })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn t_ex(&self) -> f64 {
        self.t_ex
    }

    /// Index of the first sample at or after `t_ex`.
    pub fn t_ex_index(&self) -> usize {
        let x = ((self.t_ex - self.grid.t0()) / self.grid.dt() - 1e-9).ceil();
        (x.max(0.0) as usize).min(self.grid.n_samples() - 1)
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }
}

/// Damping `b` [1/us] and wave speed `c` [L/us].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub b: f64,
    pub c: f64,
}

impl MaterialParams {
    pub fn new(b: f64, c: f64) -> Result<Self> {
        if !(b >= 0.0) || !b.is_finite() {
            return Err(invalid(format!("damping must be >= 0, got {b}")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(invalid(format!("wave speed must be > 0, got {c}")));
        }
        Ok(Self { b, c })
    }
}

/// Closed rectangle of admissible `(b, c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorBox {
    pub b_min: f64,
    pub b_max: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl PriorBox {
    pub fn new(b_min: f64, b_max: f64, c_min: f64, c_max: f64) -> Result<Self> {
        let finite = [b_min, b_max, c_min, c_max].iter().all(|v| v.is_finite());
        if !finite || !(b_min < b_max) || !(c_min < c_max) {
            return Err(invalid(format!(
                "box [{b_min}, {b_max}] x [{c_min}, {c_max}] is empty or not finite"
            )));
        }
        if b_min < 0.0 || c_min <= 0.0 {
            return Err(invalid("box must lie in b >= 0, c > 0"));
        }
        Ok(Self { b_min, b_max, c_min, c_max })
    }

    pub fn contains(&self, p: MaterialParams) -> bool {
        p.b >= self.b_min && p.b <= self.b_max && p.c >= self.c_min && p.c <= self.c_max
    }

    pub fn midpoint(&self) -> MaterialParams {
        MaterialParams { b: 0.5 * (self.b_min + self.b_max), c: 0.5 * (self.c_min + self.c_max) }
    }

    pub fn b_range(&self) -> f64 {
        self.b_max - self.b_min
    }

    pub fn c_range(&self) -> f64 {
        self.c_max - self.c_min
    }

    pub fn area(&self) -> f64 {
        self.b_range() * self.c_range()
    }

    /// Map to the unit square.
    pub fn to_unit(&self, p: MaterialParams) -> [f64; 2] {
        [(p.b - self.b_min) / self.b_range(), (p.c - self.c_min) / self.c_range()]
    }

    pub fn from_unit(&self, u: [f64; 2]) -> MaterialParams {
        MaterialParams { b: self.b_min + u[0] * self.b_range(), c: self.c_min + u[1] * self.c_range() }
    }
}

impl Default for PriorBox {
    fn default() -> Self {
        Self { b_min: 0.05, b_max: 0.6, c_min: 0.2, c_max: 0.25 }
    }
}

/// Virtual plate of unit thickness discretized with step `dz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateModel {
    length: f64,
    dz: f64,
    cells: usize,
}

impl PlateModel {
    pub fn new(dz: f64) -> Result<Self> {
        if !(dz > 0.0 && dz <= 0.01) {
            return Err(invalid(format!("spatial step must be in (0, 0.01], got {dz}")));
        }
        let cells_f = 1.0 / dz;
        let cells = cells_f.round();
        if (cells_f - cells).abs() > 1e-9 * cells_f {
            return Err(invalid(format!("1/dz must be an integer, got {cells_f}")));
        }
        let cells = cells as usize;
        Ok(Self { length: 1.0, dz: 1.0 / cells as f64, cells })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    /// Number of intervals `L / dz`; the z-grid has `cells + 1` points.
    pub fn cells(&self) -> usize {
        self.cells
    }
}

impl Default for PlateModel {
    fn default() -> Self {
        Self::new(0.001).expect("default plate")
    }
}

/// A rectangular grid of A-scans sharing one time grid.
///
/// Cells are stored row-major (`iy * nx + ix`). Missing cells (never
/// measured or excluded as faulty) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSet {
    grid: TimeGrid,
    nx: usize,
    ny: usize,
    resolution: (f64, f64),
    t_ex: f64,
    label: String,
    cells: Vec<Option<AScan>>,
    excitation: Option<ExcitationPulse>,
}

impl ScanSet {
    pub fn new(
        grid: TimeGrid,
        shape: (usize, usize),
        resolution: (f64, f64),
        t_ex: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        let (nx, ny) = shape;
        if nx == 0 || ny == 0 {
            return Err(invalid("scan grid must be non-empty"));
        }
        if !(resolution.0 > 0.0 && resolution.1 > 0.0) {
            return Err(invalid("resolution must be positive"));
        }
        let label = label.into();
        if label.contains('\n') {
            return Err(invalid("label must be a single line"));
        }
        Ok(Self {
            grid,
            nx,
            ny,
            resolution,
            t_ex,
            label,
            cells: vec![None; nx * ny],
            excitation: None,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn resolution(&self) -> (f64, f64) {
        self.resolution
    }

    pub fn t_ex(&self) -> f64 {
        self.t_ex
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Number of present scans.
    pub fn len(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.present().next().is_none()
    }

    pub fn location_of(&self, ix: usize, iy: usize) -> Location {
        Location::new(ix, iy, ix as f64 * self.resolution.0, iy as f64 * self.resolution.1)
    }

    /// Store a scan at its location's grid indices.
    pub fn insert(&mut self, scan: AScan) -> Result<()> {
        if !scan.grid().same_as(&self.grid) {
            return Err(invalid("scan time grid differs from scan set"));
        }
        let loc = scan.location();
        if loc.ix >= self.nx || loc.iy >= self.ny {
            return Err(invalid(format!("location ({}, {}) outside grid", loc.ix, loc.iy)));
        }
        let idx = loc.iy * self.nx + loc.ix;
        self.cells[idx] = Some(scan);
        Ok(())
    }

    pub fn remove(&mut self, ix: usize, iy: usize) -> Option<AScan> {
        self.cells.get_mut(iy * self.nx + ix).and_then(Option::take)
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<&AScan> {
        if ix >= self.nx || iy >= self.ny {
            return None;
        }
        self.cells[iy * self.nx + ix].as_ref()
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> &[Option<AScan>] {
        &self.cells
    }

    /// Present scans in row-major order.
    pub fn present(&self) -> impl Iterator<Item = &AScan> {
        self.cells.iter().flatten()
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn excitation(&self) -> Option<&ExcitationPulse> {
        self.excitation.as_ref()
    }

    pub fn set_excitation(&mut self, pulse: Option<ExcitationPulse>) -> Result<()> {
        if let Some(p) = &pulse {
            if !p.grid().same_as(&self.grid) {
                return Err(invalid("excitation grid differs from scan set"));
            }
        }
        self.excitation = pulse;
        Ok(())
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_of_default_record() {
        let g = make_time_grid(0.0025, 14000).unwrap();
        assert!((g.record_length() - 35.0).abs() < 1e-12);
    }

    #[test]
    fn minimal_grid() {
        let g = make_time_grid(1.0, 2).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(1), 1.0);
        let g = make_time_grid(0.5, 70).unwrap();
        assert_eq!(g.record_length(), 35.0);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(make_time_grid(0.0, 10).is_err());
        assert!(make_time_grid(-1.0, 10).is_err());
        assert!(make_time_grid(1.0, 1).is_err());
        assert!(make_time_grid(f64::NAN, 10).is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let g = make_time_grid(1.0, 4).unwrap();
        let s = AScan::new(g, vec![0.0, 2.0, -4.0, 1.0], Location::default()).unwrap();
        let once = s.normalized();
        assert_eq!(once.samples(), &[0.0, 0.5, -1.0, 0.25]);
        assert_eq!(once.normalized(), once);
    }

    #[test]
    fn pulse_is_clamped_to_support() {
        let g = make_time_grid(1.0, 10).unwrap();
        let p = ExcitationPulse::new(g, vec![1.0; 10], 5.0).unwrap();
        assert_eq!(p.samples(), &[0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.t_ex_index(), 5);
    }

    #[test]
    fn plate_requires_integer_cell_count() {
        assert_eq!(PlateModel::new(0.001).unwrap().cells(), 1000);
        assert!(PlateModel::new(0.003).is_err());
        assert!(PlateModel::new(0.02).is_err());
    }

    #[test]
    fn material_params_validated() {
        assert!(MaterialParams::new(0.0, 0.2).is_ok());
        assert!(MaterialParams::new(-0.1, 0.2).is_err());
        assert!(MaterialParams::new(0.1, 0.0).is_err());
    }

    #[test]
    fn scan_set_rejects_foreign_grid() {
        let g = make_time_grid(1.0, 4).unwrap();
        let h = make_time_grid(0.5, 4).unwrap();
        let mut set = ScanSet::new(g, (2, 2), (5.0, 5.0), 2.0, "x").unwrap();
        let loc = set.location_of(1, 0);
        assert!(set.insert(AScan::zeros(h, loc)).is_err());
        set.insert(AScan::zeros(g, loc)).unwrap();
        assert_eq!(set.missing_count(), 3);
        assert!(set.get(1, 0).is_some());
    }
}
