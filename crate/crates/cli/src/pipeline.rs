//! The pipeline stages behind each subcommand, independent of argument
//! parsing so they can be driven from tests.

use telegraph_core::bayes::{
    location_seed, posterior_summary, run_chain, FeatureModel, PosteriorChain, PosteriorSummary,
};
use telegraph_core::calibrate::{calibrate, CalibrationResult, MisfitObjective, ParameterMap};
use telegraph_core::damage::{derive_thresholds, null_region, test_chain, ProbabilityMap, TestResult, Thresholds};
use telegraph_core::features::{estimate_covariance, extract_features, select_dominant_bins, FeatureCovariance};
use telegraph_core::preprocess::{
    detect_faulty, excitation_from_scan, normalize, smooth_excitation, subtract_head, FaultReport, RawScan,
};
use telegraph_core::solver::TelegraphSolver;
use telegraph_core::synth::{make_pulse, make_synthetic_plate, SyntheticPlate};
use telegraph_core::{AScan, ExcitationPulse, ScanSet};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::maps::{Matrix, MapFile};

/// Run `f` on every present cell, spread over `threads` workers. Results
/// come back in row-major order regardless of the thread count.
pub fn for_cells<T, F>(set: &ScanSet, threads: usize, f: F) -> (Vec<Option<T>>, Vec<(usize, String)>)
where
    T: Send,
    F: Fn(usize, &AScan) -> telegraph_core::Result<T> + Sync,
{
    let cells = set.cells();
    let threads = threads.max(1).min(cells.len());
    let mut results: Vec<Option<telegraph_core::Result<T>>> = (0..cells.len()).map(|_| None).collect();
    if threads == 1 {
        for (i, c) in cells.iter().enumerate() {
            results[i] = c.as_ref().map(|s| f(i, s));
        }
    } else {
        let f = &f;
        let parts: Vec<Vec<(usize, telegraph_core::Result<T>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    scope.spawn(move || {
                        cells
                            .iter()
                            .enumerate()
                            .skip(w)
                            .step_by(threads)
                            .filter_map(|(i, c)| c.as_ref().map(|s| (i, f(i, s))))
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for (i, r) in parts.into_iter().flatten() {
            results[i] = Some(r);
        }
    }
    let mut out = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            None => out.push(None),
            Some(Ok(v)) => out.push(Some(v)),
            Some(Err(e)) => {
                failures.push((i, e.to_string()));
                out.push(None);
            }
        }
    }
    (out, failures)
}

/// The configured synthetic burst, low-passed.
pub fn config_pulse(cfg: &RunConfig) -> Result<ExcitationPulse> {
    let raw = make_pulse(cfg.pulse_freq, cfg.pulse_cycles, cfg.pulse_amplitude, cfg.pulse_start, cfg.grid()?, cfg.t_ex)?;
    Ok(smooth_excitation(&raw, cfg.cutoff, cfg.taper)?)
}

/// The scan set's stored excitation, or the configured one if it has none.
pub fn excitation_of(set: &ScanSet, cfg: &RunConfig) -> Result<ExcitationPulse> {
    match set.excitation() {
        Some(p) => Ok(p.clone()),
        None => {
            let p = config_pulse(cfg)?;
            if !p.grid().same_as(set.grid()) {
                return Err(CliError::Usage("configured time grid differs from the scan set".into()));
            }
            Ok(p)
        }
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<SyntheticPlate> {
    cfg.validate()?;
    let pulse = config_pulse(cfg)?;
    Ok(make_synthetic_plate(&cfg.plate_spec()?, &pulse, cfg.plate()?, &cfg.grid()?)?)
}

pub fn truth_map(plate: &SyntheticPlate) -> MapFile {
    let (nx, ny) = plate.scans.shape();
    MapFile {
        meta: vec![format!("truth nx={nx} ny={ny}")],
        matrices: vec![
            Matrix::new("b", "1/us", nx, ny, plate.truth.iter().map(|p| Some(p.b)).collect()),
            Matrix::new("c", "L/us", nx, ny, plate.truth.iter().map(|p| Some(p.c)).collect()),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub scans: ScanSet,
    /// `(row-major index, report)` for every scan that was present.
    pub reports: Vec<(usize, FaultReport)>,
}

/// Normalize raw counts (when `raw`), subtract the free-head signal, drop
/// faulty scans and low-pass the excitation. Without a stored excitation the
/// mean of the clean scans up to `t_ex` is used.
pub fn preprocess(set: &ScanSet, cfg: &RunConfig, head: Option<&AScan>, raw: bool) -> Result<Preprocessed> {
    cfg.validate()?;
    let grid = *set.grid();
    let mut out = ScanSet::new(grid, set.shape(), set.resolution(), set.t_ex(), set.label())?;
    let mut reports = Vec::new();
    let mut sum = vec![0.0; grid.n_samples()];
    let mut clean = 0usize;
    for (index, cell) in set.cells().iter().enumerate() {
        let Some(scan) = cell else { continue };
        let mut s = if raw {
            let counts = scan
                .samples()
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && v.abs() < i32::MAX as f64 {
                        Ok(v as i32)
                    } else {
                        Err(telegraph_core::Error::CorruptInput(format!("cell {index}: {v} is not an integer count")))
                    }
                })
                .collect::<telegraph_core::Result<Vec<i32>>>()?;
            normalize(&RawScan { grid, counts, location: scan.location() })?
        } else {
            scan.clone()
        };
        if let Some(h) = head {
            s = subtract_head(&s, h)?;
        }
        let report = detect_faulty(&s, set.t_ex(), cfg.echo_jump, cfg.excitation_jump);
        let faulty = report.faulty;
        reports.push((index, report));
        if !faulty {
            for (a, v) in sum.iter_mut().zip(s.samples()) {
                *a += v;
            }
            clean += 1;
            out.insert(s)?;
        }
    }
    let pulse = match set.excitation() {
        Some(p) => p.clone(),
        None if clean > 0 => {
            let mean = AScan::new(grid, sum.iter().map(|v| v / clean as f64).collect(), Default::default())?;
            excitation_from_scan(&mean, set.t_ex())?
        }
        None => return Err(telegraph_core::Error::InsufficientData("no clean scans to take the excitation from".into()).into()),
    };
    out.set_excitation(Some(smooth_excitation(&pulse, cfg.cutoff, cfg.taper)?))?;
    Ok(Preprocessed { scans: out, reports })
}

pub fn fault_report_csv(p: &Preprocessed, nx: usize) -> String {
    let mut s = String::from("index,ix,iy,faulty,first_violation_index,max_echo_jump\n");
    for (i, r) in &p.reports {
        let first = r.first_violation_index.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{i},{},{},{},{first},{}\n", i % nx, i / nx, r.faulty as u8, r.max_echo_jump));
    }
    s
}

/// Calibrate the cells selected by `mask` (all when `None`).
pub fn calibrate_map(set: &ScanSet, cfg: &RunConfig, mask: Option<&[bool]>) -> Result<ParameterMap> {
    cfg.validate()?;
    let pulse = excitation_of(set, cfg)?;
    let solver = TelegraphSolver::new(&pulse, cfg.plate()?)?;
    let (start, bounds, opts) = (cfg.start()?, cfg.prior()?, cfg.simplex());
    let (cells, failures) = for_cells(set, cfg.threads, |i, scan| {
        if mask.is_some_and(|m| !m[i]) {
            return Ok(None);
        }
        let obj = MisfitObjective::new(&solver, scan)?;
        calibrate(&obj, start, &bounds, &opts).map(Some)
    });
    let cells: Vec<Option<CalibrationResult>> = cells.into_iter().map(Option::flatten).collect();
    let (nx, ny) = set.shape();
    Ok(ParameterMap { nx, ny, cells, failures, label: set.label().to_string() })
}

/// Feature bins, covariance and model built from the reference cells.
pub struct Reference {
    pub model: FeatureModel,
    pub cov: FeatureCovariance,
    pub mask: Vec<bool>,
}

pub fn reference(set: &ScanSet, cfg: &RunConfig) -> Result<Reference> {
    cfg.validate()?;
    let (nx, ny) = set.shape();
    let mask = cfg.reference_mask(nx, ny);
    let mut refs = ScanSet::new(*set.grid(), set.shape(), set.resolution(), set.t_ex(), set.label())?;
    for (scan, _) in set.cells().iter().zip(&mask).filter(|(_, &m)| m) {
        if let Some(s) = scan {
            refs.insert(s.clone())?;
        }
    }
    let window = cfg.window()?;
    let bins = match cfg.bins {
        Some(b) => b,
        None => select_dominant_bins(&refs, &window, cfg.bin_cutoff)?,
    };
    let cov = estimate_covariance(&refs, &window, bins)?;
    let pulse = excitation_of(set, cfg)?;
    let model = FeatureModel::new(&pulse, cfg.plate()?, &window, bins)?;
    Ok(Reference { model, cov, mask })
}

pub fn chain_at(set: &ScanSet, cfg: &RunConfig, r: &Reference, ix: usize, iy: usize) -> Result<PosteriorChain> {
    let (nx, ny) = set.shape();
    if ix >= nx || iy >= ny {
        return Err(CliError::Usage(format!("location {ix},{iy} outside the {nx}x{ny} grid")));
    }
    let scan = set.get(ix, iy).ok_or_else(|| CliError::Usage(format!("no scan at {ix},{iy}")))?;
    let alpha = extract_features(scan, &cfg.window()?, r.model.bins())?;
    let seed = location_seed(cfg.seed, iy * nx + ix);
    Ok(run_chain(&alpha, &r.cov, &cfg.prior()?, &r.model, &cfg.chain_options()?, seed)?)
}

/// Posterior mean and spread at every cell.
pub fn posterior_map(set: &ScanSet, cfg: &RunConfig, r: &Reference) -> Result<MapFile> {
    let (window, prior, opts) = (cfg.window()?, cfg.prior()?, cfg.chain_options()?);
    let (cells, failures) = for_cells(set, cfg.threads, |i, scan| {
        let alpha = extract_features(scan, &window, r.model.bins())?;
        let chain = run_chain(&alpha, &r.cov, &prior, &r.model, &opts, location_seed(cfg.seed, i))?;
        let s: PosteriorSummary = posterior_summary(&chain)?;
        Ok((s, chain.diagnostics))
    });
    let (nx, ny) = set.shape();
    let col = |f: &dyn Fn(&(PosteriorSummary, telegraph_core::bayes::ChainDiagnostics)) -> f64| {
        cells.iter().map(|c| c.as_ref().map(f)).collect::<Vec<_>>()
    };
    let mut meta = vec![format!("posterior-map nx={nx} ny={ny} seed={} bins={:?}", cfg.seed, r.model.bins())];
    for (i, m) in &failures {
        meta.push(format!("failure {i} {}", m.replace('\n', " ")));
    }
    Ok(MapFile {
        meta,
        matrices: vec![
            Matrix::new("b_mean", "1/us", nx, ny, col(&|c| c.0.mean.b)),
            Matrix::new("c_mean", "L/us", nx, ny, col(&|c| c.0.mean.c)),
            Matrix::new("b_sd", "1/us", nx, ny, col(&|c| c.0.covariance[0][0].sqrt())),
            Matrix::new("c_sd", "L/us", nx, ny, col(&|c| c.0.covariance[1][1].sqrt())),
            Matrix::new("acceptance_rate", "fraction", nx, ny, col(&|c| c.1.acceptance_rate)),
        ],
    })
}

pub fn thresholds(calibration: &ParameterMap, cfg: &RunConfig) -> Result<Thresholds> {
    let mask = cfg.reference_mask(calibration.nx, calibration.ny);
    Ok(derive_thresholds(calibration, &mask, cfg.quantile)?)
}

/// Damage test at every cell against thresholds from the reference cells.
pub fn test_map(set: &ScanSet, cfg: &RunConfig, r: &Reference, t: &Thresholds) -> Result<ProbabilityMap> {
    let (window, prior, opts) = (cfg.window()?, cfg.prior()?, cfg.chain_options()?);
    let region = null_region(t);
    let (cells, failures) = for_cells(set, cfg.threads, |i, scan| -> telegraph_core::Result<TestResult> {
        let alpha = extract_features(scan, &window, r.model.bins())?;
        let chain = run_chain(&alpha, &r.cov, &prior, &r.model, &opts, location_seed(cfg.seed, i))?;
        test_chain(&chain, &region, cfg.level)
    });
    let (nx, ny) = set.shape();
    Ok(ProbabilityMap { nx, ny, level: cfg.level, cells, failures })
}

pub fn rejection_matrix(map: &ProbabilityMap) -> Matrix {
    Matrix::new(
        "rejected",
        "flag",
        map.nx,
        map.ny,
        map.cells.iter().map(|c| c.map(|r| r.rejected as u8 as f64)).collect(),
    )
}
