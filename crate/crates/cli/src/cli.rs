//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::bench_forward;
use crate::chain::write_chain;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::maps::{
    kde_grid_csv, parameter_map_file, parameter_map_from_file, pgm, probability_map_file, MapFile, ThresholdInfo,
};
use crate::pipeline;
use crate::scanset::{read_scan_set, write_scan_set};

#[derive(Debug, Parser)]
#[command(name = "telegraph", version, about = "Simulate, calibrate and test ultrasonic A-scans with the telegraph equation")]
struct Cli {
    /// key = value file applied on top of --set
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Set one configuration key, e.g. --set seed=3
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic plate scan set
    Simulate {
        /// Plate description (a config file)
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the true parameters as a map
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Normalize, subtract the free-head signal, drop faulty scans
    Preprocess {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Samples are raw 9-bit counts
        #[arg(long)]
        raw: bool,
        /// Scan set whose first scan is the free-head signal
        #[arg(long)]
        head: Option<PathBuf>,
        /// Per-scan fault report CSV
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Least-squares (b, c) at every location
    Calibrate {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Posterior chain at one location, or posterior-mean maps
    Posterior {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Single cell as ix,iy; writes the chain instead of maps
        #[arg(long, value_parser = parse_location)]
        location: Option<(usize, usize)>,
        /// Kernel density grid CSV for the single-cell chain
        #[arg(long)]
        kde: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        kde_grid: usize,
    },
    /// Bayesian damage test at every location
    Test {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Calibrated map to take the thresholds from; computed if absent
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Rejection map CSV; defaults to <output stem>.rejected.csv
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Render one quantity of a map file as a graymap
    Render {
        input: PathBuf,
        #[arg(long)]
        quantity: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, requires = "max")]
        min: Option<f64>,
        #[arg(long, requires = "min")]
        max: Option<f64>,
    },
    /// Time the forward solver and the chain cache
    Bench {
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// Markdown report; printed when absent
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the effective configuration
    Config,
}

fn parse_location(s: &str) -> std::result::Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or("expected ix,iy")?;
    Ok((x.trim().parse().map_err(|_| "bad ix")?, y.trim().parse().map_err(|_| "bad iy")?))
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run(args: Vec<OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn load_config(cli: &Cli, spec: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
    }
    if let Some(p) = spec {
        cfg.apply_file(p)?;
    }
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match &cli.command {
        Command::Simulate { spec, output, truth } => {
            let cfg = load_config(&cli, spec.as_deref())?;
            let plate = pipeline::simulate(&cfg)?;
            write_scan_set(&plate.scans, output)?;
            if let Some(t) = truth {
                pipeline::truth_map(&plate).write(t)?;
            }
            let (nx, ny) = plate.scans.shape();
            say(out, format!("wrote {nx}x{ny} scan set to {}", output.display()));
        }
        Command::Preprocess { input, output, raw, head, report } => {
            let cfg = load_config(&cli, None)?;
            let set = read_scan_set(input)?;
            let head_scan = match head {
                Some(h) => Some(
                    read_scan_set(h)?
                        .present()
                        .next()
                        .cloned()
                        .ok_or_else(|| CliError::Usage(format!("{} holds no scan", h.display())))?,
                ),
                None => None,
            };
            let p = pipeline::preprocess(&set, &cfg, head_scan.as_ref(), *raw)?;
            write_scan_set(&p.scans, output)?;
            if let Some(r) = report {
                write_file(r, pipeline::fault_report_csv(&p, set.shape().0))?;
            }
            let faulty = p.reports.iter().filter(|(_, r)| r.faulty).count();
            say(out, format!("{} scans, {faulty} faulty and removed", p.reports.len()));
        }
        Command::Calibrate { input, output } => {
            let cfg = load_config(&cli, None)?;
            let set = read_scan_set(input)?;
            let map = pipeline::calibrate_map(&set, &cfg, None)?;
            parameter_map_file(&map).write(output)?;
            say(out, format!("calibrated {} cells, {} failures", map.cells.iter().flatten().count(), map.failures.len()));
        }
        Command::Posterior { input, output, location, kde, kde_grid } => {
            let cfg = load_config(&cli, None)?;
            let set = read_scan_set(input)?;
            let r = pipeline::reference(&set, &cfg)?;
            match location {
                Some((ix, iy)) => {
                    let chain = pipeline::chain_at(&set, &cfg, &r, *ix, *iy)?;
                    write_chain(&chain, output)?;
                    let s = telegraph_core::bayes::posterior_summary(&chain)?;
                    if let Some(k) = kde {
                        write_file(k, kde_grid_csv(&s.kde, *kde_grid, *kde_grid))?;
                    }
                    say(out, format!(
                        "cell {ix},{iy}: b = {:.5} +- {:.5}, c = {:.6} +- {:.6}, acceptance {:.3}",
                        s.mean.b,
                        s.covariance[0][0].sqrt(),
                        s.mean.c,
                        s.covariance[1][1].sqrt(),
                        chain.diagnostics.acceptance_rate
                    ));
                }
                None => {
                    if kde.is_some() {
                        return Err(CliError::Usage("--kde needs --location".into()));
                    }
                    pipeline::posterior_map(&set, &cfg, &r)?.write(output)?;
                    say(out, format!("wrote posterior maps to {}", output.display()));
                }
            }
        }
        Command::Test { input, output, calibration, rejected } => {
            let cfg = load_config(&cli, None)?;
            let set = read_scan_set(input)?;
            let (nx, ny) = set.shape();
            let cmap = match calibration {
                Some(p) => parameter_map_from_file(&MapFile::read(p)?, p)?,
                None => pipeline::calibrate_map(&set, &cfg, Some(&cfg.reference_mask(nx, ny)))?,
            };
            if (cmap.nx, cmap.ny) != (nx, ny) {
                return Err(CliError::Usage("calibration map and scan set differ in shape".into()));
            }
            let t = pipeline::thresholds(&cmap, &cfg)?;
            let r = pipeline::reference(&set, &cfg)?;
            let map = pipeline::test_map(&set, &cfg, &r, &t)?;
            let info = ThresholdInfo { b_crit: t.b_crit, c_crit: t.c_crit, quantile: t.quantile_level };
            probability_map_file(&map, Some(info)).write(output)?;
            let rej_path = rejected.clone().unwrap_or_else(|| sibling(output, "rejected.csv"));
            write_file(&rej_path, pipeline::rejection_matrix(&map).to_csv())?;
            let n_rej = map.cells.iter().flatten().filter(|c| c.rejected).count();
            say(out, format!(
                "b_crit = {:.5}, c_crit = {:.6}; {n_rej} of {} cells rejected at level {}",
                t.b_crit,
                t.c_crit,
                map.cells.iter().flatten().count(),
                map.level
            ));
        }
        Command::Render { input, quantity, output, min, max } => {
            let file = MapFile::read(input)?;
            let m = file.matrix(quantity).ok_or_else(|| {
                let names: Vec<&str> = file.matrices.iter().map(|m| m.name.as_str()).collect();
                CliError::Usage(format!("no quantity '{quantity}' in {}; have {}", input.display(), names.join(", ")))
            })?;
            let range = min.zip(*max);
            if range.is_some_and(|(lo, hi)| !(hi > lo)) {
                return Err(CliError::Usage("--max must exceed --min".into()));
            }
            write_file(output, pgm(m, range))?;
        }
        Command::Bench { repeats, output, csv } => {
            if *repeats == 0 {
                return Err(CliError::Usage("--repeats must be positive".into()));
            }
            let cfg = load_config(&cli, None)?;
            let report = bench_forward(&cfg, *repeats)?;
            match output {
                Some(p) => write_file(p, report.to_markdown())?,
                None => say(out, report.to_markdown()),
            }
            if let Some(p) = csv {
                write_file(p, report.to_csv())?;
            }
        }
        Command::Config => {
            let cfg = load_config(&cli, None)?;
            let _ = write!(out, "{}", cfg.to_text());
        }
    }
    Ok(())
}
