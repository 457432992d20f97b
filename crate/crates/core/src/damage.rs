//! Per-location test of the undamaged hypothesis `b < b_crit, c > c_crit`.

use crate::bayes::{location_seed, region_probability, run_chain, ChainOptions, FeatureModel, PosteriorChain, PriorBox};
use crate::calibrate::ParameterMap;
use crate::error::{invalid, Error, Result};
use crate::features::{extract_features, EchoWindow, FeatureCovariance};
use crate::signal::{MaterialParams, ScanSet};

/// Minimum number of reference cells for the quantiles.
pub const MIN_REFERENCE_CELLS: usize = 20;
pub const DEFAULT_QUANTILE: f64 = 0.99;
pub const DEFAULT_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub b_crit: f64,
    pub c_crit: f64,
    pub quantile_level: f64,
    pub provenance: String,
}

/// Sorted-sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("quantile level {p} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// `b_crit` is the `q` quantile of the reference `b`, `c_crit` the `1 - q`
/// quantile of the reference `c`.
pub fn derive_thresholds(reference: &ParameterMap, undamaged: &[bool], q: f64) -> Result<Thresholds> {
    if undamaged.len() != reference.cells.len() {
        return Err(invalid("mask and map sizes differ"));
    }
    if !(q > 0.5 && q < 1.0) {
        return Err(invalid(format!("quantile level {q} must lie in (0.5, 1)")));
    }
    let params: Vec<MaterialParams> = reference
        .cells
        .iter()
        .zip(undamaged)
        .filter(|(_, &keep)| keep)
        .filter_map(|(c, _)| c.map(|r| r.params))
        .collect();
    if params.len() < MIN_REFERENCE_CELLS {
        return Err(Error::InsufficientData(format!(
            "{} reference cells, need at least {MIN_REFERENCE_CELLS}",
            params.len()
        )));
    }
    let b: Vec<f64> = params.iter().map(|p| p.b).collect();
    let c: Vec<f64> = params.iter().map(|p| p.c).collect();
    Ok(Thresholds {
        b_crit: quantile(&b, q)?,
        c_crit: quantile(&c, 1.0 - q)?,
        quantile_level: q,
        provenance: reference.label.clone(),
    })
}

/// `Θ0 = {b < b_crit, c > c_crit}`, strict on both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullRegion {
    pub b_crit: f64,
    pub c_crit: f64,
}

impl NullRegion {
    pub fn contains(&self, p: MaterialParams) -> bool {
        p.b < self.b_crit && p.c > self.c_crit
    }
}

pub fn null_region(t: &Thresholds) -> NullRegion {
    NullRegion { b_crit: t.b_crit, c_crit: t.c_crit }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub p_null: f64,
    pub rejected: bool,
    pub standard_error: f64,
    pub acceptance_rate: f64,
    /// Chain diagnostics fired; the result is reported but suspect.
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub nx: usize,
    pub ny: usize,
    pub level: f64,
    pub cells: Vec<Option<TestResult>>,
    pub failures: Vec<(usize, String)>,
}

impl ProbabilityMap {
    pub fn get(&self, ix: usize, iy: usize) -> Option<&TestResult> {
        self.cells.get(iy * self.nx + ix).and_then(|c| c.as_ref())
    }
}

/// Test outcome for one chain.
pub fn test_chain(chain: &PosteriorChain, region: &NullRegion, level: f64) -> Result<TestResult> {
    let rp = region_probability(chain, |p| region.contains(p))?;
    Ok(TestResult {
        p_null: rp.probability,
        rejected: rp.probability < level,
        standard_error: rp.standard_error,
        acceptance_rate: chain.diagnostics.acceptance_rate,
        unreliable: chain.diagnostics.flagged(),
    })
}

/// Everything [`test_grid`] needs besides the data.
#[derive(Debug, Clone)]
pub struct TestSetup<'a> {
    pub thresholds: &'a Thresholds,
    pub prior: &'a PriorBox,
    pub cov: &'a FeatureCovariance,
    pub model: &'a FeatureModel,
    pub window: &'a EchoWindow,
    pub level: f64,
    pub chain: &'a ChainOptions,
    pub root_seed: u64,
}

/// Run one chain per present location and test the null region.
pub fn test_grid(scans: &ScanSet, setup: &TestSetup<'_>) -> Result<ProbabilityMap> {
    if !(setup.level > 0.0 && setup.level < 1.0) {
        return Err(invalid(format!("rejection level {} outside (0, 1)", setup.level)));
    }
    let region = null_region(setup.thresholds);
    let (nx, ny) = scans.shape();
    let mut cells = Vec::with_capacity(nx * ny);
    let mut failures = Vec::new();
    for (index, cell) in scans.cells().iter().enumerate() {
        let Some(scan) = cell else {
            cells.push(None);
            continue;
        };
        let outcome = extract_features(scan, setup.window, setup.model.bins()).and_then(|alpha| {
            let seed = location_seed(setup.root_seed, index);
            let chain = run_chain(&alpha, setup.cov, setup.prior, setup.model, setup.chain, seed)?;
            test_chain(&chain, &region, setup.level)
        });
        match outcome {
            Ok(r) => cells.push(Some(r)),
            Err(e) => {
                failures.push((index, e.to_string()));
                cells.push(None);
            }
        }
    }
    Ok(ProbabilityMap { nx, ny, level: setup.level, cells, failures })
}
