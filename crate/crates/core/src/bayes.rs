//! Posterior of `(b, c)` given a feature vector: Gaussian likelihood in
//! feature space, flat prior on a box, random-walk Metropolis sampling, and
//! summaries of the resulting chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::features::{EchoWindow, FeatureCovariance, FeatureVector, Whitener, FEATURE_BINS};
use crate::signal::{ExcitationPulse, MaterialParams, PlateModel};
use crate::solver::TelegraphSolver;

pub use crate::signal::PriorBox;

/// Step sizes `ε_k` of the random-walk proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalSchedule {
    pub eps_early: f64,
    pub eps_late: f64,
    /// Steps `k < switch_step` use `eps_early`.
    pub switch_step: usize,
}

impl Default for ProposalSchedule {
    fn default() -> Self {
        Self { eps_early: 0.02, eps_late: 0.001, switch_step: 100 }
    }
}

impl ProposalSchedule {
    pub fn new(eps_early: f64, eps_late: f64, switch_step: usize) -> Result<Self> {
        if !(eps_early > 0.0) || !(eps_late > 0.0) || !eps_early.is_finite() || !eps_late.is_finite() {
            return Err(invalid("proposal step sizes must be positive"));
        }
        Ok(Self { eps_early, eps_late, switch_step })
    }

    pub fn eps(&self, k: usize) -> f64 {
        if k < self.switch_step { self.eps_early } else { self.eps_late }
    }

    /// Proposal standard deviations at step `k`: `sqrt(ε_k |range|)` per axis.
    pub fn std_dev(&self, k: usize, prior: &PriorBox) -> (f64, f64) {
        let e = self.eps(k);
        ((e * prior.b_range()).sqrt(), (e * prior.c_range()).sqrt())
    }
}

/// Model features `M(β)` computed straight from the solver.
#[derive(Debug, Clone)]
pub struct FeatureModel {
    solver: TelegraphSolver,
    first: usize,
    last: usize,
    bins: [usize; FEATURE_BINS],
}

impl FeatureModel {
    pub fn new(pulse: &ExcitationPulse, plate: PlateModel, window: &EchoWindow, bins: [usize; FEATURE_BINS]) -> Result<Self> {
        Self::from_solver(TelegraphSolver::new(pulse, plate)?, window, bins)
    }

    pub fn from_solver(solver: TelegraphSolver, window: &EchoWindow, bins: [usize; FEATURE_BINS]) -> Result<Self> {
        let n = solver.grid().n_samples();
        if bins.iter().any(|&k| 2 * k >= n) {
            return Err(invalid(format!("bins {bins:?} must lie below N/2")));
        }
        let (first, last) = window.sample_range(solver.grid())?;
        Ok(Self { solver, first, last, bins })
    }

    pub fn features(&self, params: MaterialParams) -> Result<FeatureVector> {
        let values = self.solver.window_dft(params, self.first, self.last, &self.bins)?;
        Ok(FeatureVector::from_bins(&values, self.bins))
    }

    pub fn bins(&self) -> [usize; FEATURE_BINS] {
        self.bins
    }

    pub fn solver(&self) -> &TelegraphSolver {
        &self.solver
    }
}

/// `-rᵀ Σ⁻¹ r / 2` for the wrapped residual between two feature vectors.
pub fn log_likelihood_features(model: &FeatureVector, measured: &FeatureVector, whitener: &Whitener) -> f64 {
    -0.5 * whitener.quadratic_form(&model.residual(measured))
}

/// Log-likelihood of `params`; `-∞` if the forward solve fails.
pub fn log_likelihood(params: MaterialParams, alpha: &FeatureVector, whitener: &Whitener, model: &FeatureModel) -> f64 {
    match model.features(params) {
        Ok(m) => log_likelihood_features(&m, alpha, whitener),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Log-likelihood inside the closed box, `-∞` outside.
pub fn log_posterior(
    params: MaterialParams,
    alpha: &FeatureVector,
    whitener: &Whitener,
    prior: &PriorBox,
    model: &FeatureModel,
) -> f64 {
    if !prior.contains(params) {
        return f64::NEG_INFINITY;
    }
    log_likelihood(params, alpha, whitener, model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    pub burn_in: usize,
    pub n: usize,
    pub schedule: ProposalSchedule,
    /// Keep the log density of the current state instead of recomputing it
    /// every step.
    pub cache: bool,
    /// Add the proposal density ratio to the acceptance test. It cancels for
    /// the symmetric random walk used here.
    pub hastings: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self { burn_in: 100, n: 1000, schedule: ProposalSchedule::default(), cache: true, hastings: false }
    }
}

/// Acceptance bounds outside which a chain is flagged.
pub const LOW_ACCEPTANCE: f64 = 0.02;
pub const HIGH_ACCEPTANCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    pub low_acceptance: bool,
    pub high_acceptance: bool,
    /// Log-density evaluations performed.
    pub evaluations: usize,
}

impl ChainDiagnostics {
    pub fn flagged(&self) -> bool {
        self.low_acceptance || self.high_acceptance
    }
}

/// Retained samples of a Metropolis run and how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub samples: Vec<MaterialParams>,
    pub accepted: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub schedule: ProposalSchedule,
    pub prior: PriorBox,
    pub diagnostics: ChainDiagnostics,
}

/// Random-walk Metropolis on an arbitrary log density, started at the box
/// midpoint. The first `burn_in` states are discarded.
pub fn run_metropolis<F>(mut log_density: F, prior: &PriorBox, options: &ChainOptions, seed: u64) -> PosteriorChain
where
    F: FnMut(MaterialParams) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluations = 0;
    let mut eval = |p: MaterialParams| {
        evaluations += 1;
        let v = log_density(p);
        if v.is_nan() { f64::NEG_INFINITY } else { v }
    };
    let mut current = prior.midpoint();
    let mut current_lp = eval(current);
    let total = options.burn_in + options.n;
    let mut samples = Vec::with_capacity(options.n);
    let mut accepted = 0;
    for k in 1..=total {
        let (sb, sc) = options.schedule.std_dev(k, prior);
        let zb: f64 = rng.sample(StandardNormal);
        let zc: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let proposal = MaterialParams { b: current.b + sb * zb, c: current.c + sc * zc };
        if !options.cache {
            current_lp = eval(current);
        }
        let proposal_lp = if prior.contains(proposal) { eval(proposal) } else { f64::NEG_INFINITY };
        let mut log_ratio = proposal_lp - current_lp;
        if options.hastings {
            log_ratio += log_proposal(current, proposal, sb, sc) - log_proposal(proposal, current, sb, sc);
        }
        // a start outside the support is left at the first admissible proposal
        let accept = proposal_lp > f64::NEG_INFINITY
            && (current_lp == f64::NEG_INFINITY || u < acceptance_probability(log_ratio));
        if accept {
            current = proposal;
            current_lp = proposal_lp;
            accepted += 1;
        }
        if k > options.burn_in {
            samples.push(current);
        }
    }
    let acceptance_rate = accepted as f64 / total.max(1) as f64;
    PosteriorChain {
        samples,
        accepted,
        burn_in: options.burn_in,
        seed,
        schedule: options.schedule,
        prior: *prior,
        diagnostics: ChainDiagnostics {
            acceptance_rate,
            low_acceptance: acceptance_rate < LOW_ACCEPTANCE,
            high_acceptance: acceptance_rate > HIGH_ACCEPTANCE,
            evaluations,
        },
    }
}

/// `min(1, e^{log_ratio})`, the Metropolis acceptance probability for a log
/// density ratio.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() }
}

/// `log q(to | from)` for the axis-aligned Gaussian random walk, up to a
/// constant.
fn log_proposal(to: MaterialParams, from: MaterialParams, sb: f64, sc: f64) -> f64 {
    let db = (to.b - from.b) / sb;
    let dc = (to.c - from.c) / sc;
    -0.5 * (db * db + dc * dc)
}

/// Posterior chain for a measured feature vector.
pub fn run_chain(
    alpha: &FeatureVector,
    cov: &FeatureCovariance,
    prior: &PriorBox,
    model: &FeatureModel,
    options: &ChainOptions,
    seed: u64,
) -> Result<PosteriorChain> {
    if cov.bin_indices != model.bins() || alpha.bin_indices != model.bins() {
        return Err(invalid("features, covariance and model use different bins"));
    }
    let whitener = cov.whitener()?;
    Ok(run_metropolis(|p| log_likelihood(p, alpha, &whitener, model), prior, options, seed))
}

/// Seed for the chain at a grid location, derived from a root seed.
pub fn location_seed(root: u64, index: usize) -> u64 {
    // splitmix64 finalizer applied to a Weyl sequence
    let mut z = root.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fraction of the chain in a region, with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionProbability {
    pub probability: f64,
    pub standard_error: f64,
}

pub fn region_probability<F>(chain: &PosteriorChain, region: F) -> Result<RegionProbability>
where
    F: Fn(MaterialParams) -> bool,
{
    let n = chain.samples.len();
    if n < 100 {
        return Err(Error::InsufficientData(format!("{n} chain samples, need at least 100")));
    }
    let inside = chain.samples.iter().filter(|&&p| region(p)).count();
    let p = inside as f64 / n as f64;
    Ok(RegionProbability { probability: p, standard_error: (p * (1.0 - p) / n as f64).sqrt() })
}

/// Gaussian product kernel density, each kernel renormalized to unit mass
/// on the box.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    points: Vec<MaterialParams>,
    /// Per-point `1 / (mass in box)`.
    inv_mass: Vec<f64>,
    pub bandwidth: (f64, f64),
    pub prior: PriorBox,
    /// A bandwidth had to be floored because the sample had no spread.
    pub floored: bool,
}

/// Bandwidth floor as a fraction of the box range.
const BANDWIDTH_FLOOR: f64 = 1e-3;

impl Kde {
    /// Bandwidths from Silverman's rule in two dimensions, `h_j = s_j n^{-1/6}`.
    pub fn new(points: &[MaterialParams], prior: &PriorBox) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InsufficientData("kernel density needs at least 2 points".into()));
        }
        let (_, cov) = moments(points);
        let factor = (n as f64).powf(-1.0 / 6.0);
        let mut floored = false;
        let mut h = |var: f64, range: f64| {
            let v = var.sqrt() * factor;
            if v < BANDWIDTH_FLOOR * range {
                floored = true;
                BANDWIDTH_FLOOR * range
            } else {
                v
            }
        };
        let hb = h(cov[0][0], prior.b_range());
        let hc = h(cov[1][1], prior.c_range());
        let inv_mass = points
            .iter()
            .map(|p| {
                let mb = interval_mass(p.b, hb, prior.b_min, prior.b_max);
                let mc = interval_mass(p.c, hc, prior.c_min, prior.c_max);
                1.0 / (mb * mc).max(f64::MIN_POSITIVE)
            })
            .collect();
        Ok(Self { points: points.to_vec(), inv_mass, bandwidth: (hb, hc), prior: *prior, floored })
    }

    /// Density at `p`; zero outside the box.
    pub fn density(&self, p: MaterialParams) -> f64 {
        if !self.prior.contains(p) {
            return 0.0;
        }
        let (hb, hc) = self.bandwidth;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * hb * hc * self.points.len() as f64);
        let mut sum = 0.0;
        for (q, w) in self.points.iter().zip(&self.inv_mass) {
            let db = (p.b - q.b) / hb;
            let dc = (p.c - q.c) / hc;
            sum += w * (-0.5 * (db * db + dc * dc)).exp();
        }
        sum * norm
    }

    /// Density on a `nb x nc` grid of cell centres, row `j` at the `j`-th `c`.
    pub fn grid(&self, nb: usize, nc: usize) -> Vec<Vec<f64>> {
        let pb = &self.prior;
        (0..nc)
            .map(|j| {
                let c = pb.c_min + (j as f64 + 0.5) * pb.c_range() / nc as f64;
                (0..nb)
                    .map(|i| {
                        let b = pb.b_min + (i as f64 + 0.5) * pb.b_range() / nb as f64;
                        self.density(MaterialParams { b, c })
                    })
                    .collect()
            })
            .collect()
    }

    /// Density level whose superlevel set holds `mass` of the posterior,
    /// estimated from the density at the sample points.
    pub fn credible_level(&self, mass: f64) -> f64 {
        let mut d: Vec<f64> = self.points.iter().map(|&p| self.density(p)).collect();
        d.sort_by(f64::total_cmp);
        let idx = ((1.0 - mass) * d.len() as f64).floor() as usize;
        d[idx.min(d.len() - 1)]
    }

    /// Whether `p` lies in the highest-density region of the given mass.
    /// Recomputes the level; use [`Kde::credible_region`] for repeated tests.
    pub fn in_credible_region(&self, p: MaterialParams, mass: f64) -> bool {
        self.credible_region(mass).contains(p)
    }

    pub fn credible_region(&self, mass: f64) -> CredibleRegion<'_> {
        CredibleRegion { kde: self, level: self.credible_level(mass) }
    }
}

/// Highest-density region with a precomputed density level.
#[derive(Debug, Clone, Copy)]
pub struct CredibleRegion<'a> {
    kde: &'a Kde,
    pub level: f64,
}

impl CredibleRegion<'_> {
    pub fn contains(&self, p: MaterialParams) -> bool {
        self.kde.density(p) >= self.level
    }
}

/// Mass of `N(mu, h^2)` on `[lo, hi]`.
fn interval_mass(mu: f64, h: f64, lo: f64, hi: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * h;
    0.5 * (libm::erf((hi - mu) / s) - libm::erf((lo - mu) / s))
}

fn moments(points: &[MaterialParams]) -> (MaterialParams, [[f64; 2]; 2]) {
    let n = points.len() as f64;
    let mb = points.iter().map(|p| p.b).sum::<f64>() / n;
    let mc = points.iter().map(|p| p.c).sum::<f64>() / n;
    let mut cov = [[0.0; 2]; 2];
    for p in points {
        let d = [p.b - mb, p.c - mc];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let denom = (points.len().max(2) - 1) as f64;
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    (MaterialParams { b: mb, c: mc }, cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: MaterialParams,
    pub covariance: [[f64; 2]; 2],
    pub kde: Kde,
    /// The chain never moved along at least one axis.
    pub degenerate: bool,
}

pub fn posterior_summary(chain: &PosteriorChain) -> Result<PosteriorSummary> {
    if chain.samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} chain samples, need at least 10",
            chain.samples.len()
        )));
    }
    let (mean, covariance) = moments(&chain.samples);
    let kde = Kde::new(&chain.samples, &chain.prior)?;
    let degenerate = covariance[0][0] == 0.0 || covariance[1][1] == 0.0;
    Ok(PosteriorSummary { mean, covariance, kde, degenerate })
}

/// Split-chain potential scale reduction of a scalar over several chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if chains.is_empty() || half < 2 {
        return Err(Error::InsufficientData("need chains of at least 4 draws".into()));
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[half..2 * half]);
    }
    let n = half as f64;
    let m = parts.len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = parts
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if within == 0.0 {
        return Err(Error::NumericalFailure("chains have zero within-chain variance".into()));
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    Ok((var_plus / within).sqrt())
}
