//! Forward-solver timing and the chain cache A/B comparison.

use std::fmt::Write as _;
use std::time::Instant;

use sha2::{Digest, Sha256};
use telegraph_core::bayes::{run_chain, ChainOptions, FeatureModel};
use telegraph_core::damage::quantile;
use telegraph_core::features::{extract_features, FeatureCovariance, FeatureVector};
use telegraph_core::solver::{forward_model, TelegraphSolver};
use telegraph_core::MaterialParams;

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::config_pulse;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub repeats: usize,
    /// Wall time of each cold `forward_model` call, seconds.
    pub cold: Vec<f64>,
    /// Wall time of each `TelegraphSolver::forward` call with a prepared solver.
    pub warm: Vec<f64>,
    pub checksum_before: String,
    pub checksum_after: String,
    /// Steps per benchmark chain, burn-in included.
    pub chain_steps: usize,
    pub chain_cached: f64,
    pub chain_uncached: f64,
    pub machine: String,
}

impl BenchReport {
    pub fn cold_median(&self) -> f64 {
        quantile(&self.cold, 0.5).unwrap_or(f64::NAN)
    }

    pub fn warm_median(&self) -> f64 {
        quantile(&self.warm, 0.5).unwrap_or(f64::NAN)
    }

    /// Cached over uncached chain throughput.
    pub fn cache_speedup(&self) -> f64 {
        self.chain_uncached / self.chain_cached
    }

    pub fn checksum_stable(&self) -> bool {
        self.checksum_before == self.checksum_after
    }

    pub fn to_markdown(&self) -> String {
        let q = |v: &[f64], p| quantile(v, p).unwrap_or(f64::NAN) * 1e3;
        let mut s = String::from("# Forward-model benchmark\n\n");
        writeln!(s, "{}\n", self.machine).unwrap();
        writeln!(s, "| call | repeats | median [ms] | p90 [ms] |").unwrap();
        writeln!(s, "|---|---|---|---|").unwrap();
        writeln!(s, "| forward_model (cold) | {} | {:.3} | {:.3} |", self.repeats, q(&self.cold, 0.5), q(&self.cold, 0.9)).unwrap();
        writeln!(s, "| solver.forward (warm) | {} | {:.3} | {:.3} |", self.repeats, q(&self.warm, 0.5), q(&self.warm, 0.9)).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "Reference figure for the original implementation: about 2.8 s per solve.\n").unwrap();
        writeln!(s, "Chain of {} steps: {:.3} s cached, {:.3} s uncached ({:.2}x).\n", self.chain_steps, self.chain_cached, self.chain_uncached, self.cache_speedup()).unwrap();
        writeln!(s, "Reference solve checksum: `{}` ({}).", self.checksum_before, if self.checksum_stable() { "unchanged" } else { "CHANGED" }).unwrap();
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,index,seconds\n");
        for (i, t) in self.cold.iter().enumerate() {
            writeln!(s, "cold,{i},{t}").unwrap();
        }
        for (i, t) in self.warm.iter().enumerate() {
            writeln!(s, "warm,{i},{t}").unwrap();
        }
        writeln!(s, "chain_cached,0,{}", self.chain_cached).unwrap();
        writeln!(s, "chain_uncached,0,{}", self.chain_uncached).unwrap();
        s
    }
}

pub fn machine_info() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|t| t.lines().find(|l| l.starts_with("model name")).map(|l| l.split(':').nth(1).unwrap_or("").trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{} {} / {cpu} / {threads} hardware threads", std::env::consts::OS, std::env::consts::ARCH)
}

pub fn checksum(samples: &[f64]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn bench_forward(cfg: &RunConfig, repeats: usize) -> Result<BenchReport> {
    cfg.validate()?;
    let pulse = config_pulse(cfg)?;
    let (plate, grid) = (cfg.plate()?, cfg.grid()?);
    let p = MaterialParams::new(cfg.base_b, cfg.base_c)?;
    let reference = || -> Result<String> { Ok(checksum(forward_model(p, &pulse, plate, &grid)?.samples())) };
    let checksum_before = reference()?;

    let mut cold = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(forward_model(p, &pulse, plate, &grid)?);
        cold.push(t.elapsed().as_secs_f64());
    }
    let solver = TelegraphSolver::new(&pulse, plate)?;
    let mut warm = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(solver.forward(p)?);
        warm.push(t.elapsed().as_secs_f64());
    }

    // A/B chain: identical chains, with and without reuse of the current
    // state's log-likelihood
    let window = cfg.window()?;
    let bins = cfg.bins.unwrap_or([34, 35, 36]);
    let model = FeatureModel::from_solver(solver, &window, bins)?;
    let alpha = extract_features(&model.solver().forward(p)?, &window, bins)?;
    let reference_features: Vec<FeatureVector> = [(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (-0.5, 1.0), (1.0, -0.5), (0.2, -1.0), (-1.0, 0.3)]
        .iter()
        .map(|&(db, dc)| {
            let q = MaterialParams::new(p.b + db * cfg.jitter_b.max(1e-3), p.c + dc * cfg.jitter_c.max(1e-4))?;
            extract_features(&model.solver().forward(q)?, &window, bins)
        })
        .collect::<telegraph_core::Result<_>>()?;
    let cov = FeatureCovariance::from_features(&reference_features, bins)?;
    let prior = cfg.prior()?;
    let opts = ChainOptions { cache: true, ..cfg.chain_options()? };
    let time_chain = |cache: bool| -> Result<f64> {
        let t = Instant::now();
        std::hint::black_box(run_chain(&alpha, &cov, &prior, &model, &ChainOptions { cache, ..opts }, cfg.seed)?);
        Ok(t.elapsed().as_secs_f64())
    };
    let chain_cached = time_chain(true)?;
    let chain_uncached = time_chain(false)?;

    let checksum_after = reference()?;
    Ok(BenchReport {
        repeats,
        cold,
        warm,
        checksum_before,
        checksum_after,
        chain_steps: opts.burn_in + opts.n,
        chain_cached,
        chain_uncached,
        machine: machine_info(),
    })
}
