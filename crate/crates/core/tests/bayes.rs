use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telegraph_core::bayes::*;
use telegraph_core::*;

const MU: (f64, f64) = (0.3, 0.225);
const SD: (f64, f64) = (0.08, 0.01);

fn gauss_log_density(p: MaterialParams) -> f64 {
    let db = (p.b - MU.0) / SD.0;
    let dc = (p.c - MU.1) / SD.1;
    -0.5 * (db * db + dc * dc)
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Mean and variance of `N(mu, s^2)` truncated to `[lo, hi]`.
fn truncated_moments(mu: f64, s: f64, lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = ((lo - mu) / s, (hi - mu) / s);
    let z = big_phi(b) - big_phi(a);
    let mean = mu + s * (phi(a) - phi(b)) / z;
    let var = s * s * (1.0 + (a * phi(a) - b * phi(b)) / z - ((phi(a) - phi(b)) / z).powi(2));
    (mean, var)
}

fn batch_se(x: &[f64], batches: usize) -> f64 {
    let len = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|i| x[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[test]
fn truncated_moments_match_quadrature() {
    let (lo, hi) = (0.05, 0.6);
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = lo + (i as f64 + 0.5) * h;
        let w = (-0.5 * ((x - MU.0) / SD.0).powi(2)).exp();
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let (mean, var) = truncated_moments(MU.0, SD.0, lo, hi);
    assert!((m1 / z - mean).abs() < 1e-9);
    assert!((m2 / z - (m1 / z).powi(2) - var).abs() < 1e-9);
}

#[test]
fn samples_truncated_gaussian() {
    let prior = PriorBox::default();
    let opts = ChainOptions { burn_in: 500, n: 20_000, ..Default::default() };
    let chains: Vec<PosteriorChain> = (0..4).map(|s| run_metropolis(gauss_log_density, &prior, &opts, 100 + s)).collect();
    let (mb, vb) = truncated_moments(MU.0, SD.0, prior.b_min, prior.b_max);
    let (mc, vc) = truncated_moments(MU.1, SD.1, prior.c_min, prior.c_max);
    for chain in &chains {
        assert!(chain.samples.iter().all(|&p| prior.contains(p)));
        assert!(!chain.diagnostics.flagged(), "{:?}", chain.diagnostics);
        let b: Vec<f64> = chain.samples.iter().map(|p| p.b).collect();
        let c: Vec<f64> = chain.samples.iter().map(|p| p.c).collect();
        let s = posterior_summary(chain).unwrap();
        assert!((s.mean.b - mb).abs() < 3.0 * batch_se(&b, 20), "b mean {} vs {mb}", s.mean.b);
        assert!((s.mean.c - mc).abs() < 3.0 * batch_se(&c, 20), "c mean {} vs {mc}", s.mean.c);
        assert!((s.covariance[0][0] - vb).abs() < 0.1 * vb);
        assert!((s.covariance[1][1] - vc).abs() < 0.1 * vc);
        assert!(s.covariance[0][1].abs() < 0.1 * (vb * vc).sqrt());
    }
    let b: Vec<Vec<f64>> = chains.iter().map(|c| c.samples.iter().map(|p| p.b).collect()).collect();
    let c: Vec<Vec<f64>> = chains.iter().map(|c| c.samples.iter().map(|p| p.c).collect()).collect();
    assert!(split_rhat(&b).unwrap() < 1.05);
    assert!(split_rhat(&c).unwrap() < 1.05);
}

#[test]
fn hastings_correction_is_neutral_for_symmetric_walk() {
    let prior = PriorBox::default();
    let opts = ChainOptions { burn_in: 50, n: 500, ..Default::default() };
    let a = run_metropolis(gauss_log_density, &prior, &opts, 5);
    let b = run_metropolis(gauss_log_density, &prior, &ChainOptions { hastings: true, ..opts }, 5);
    assert_eq!(a.samples, b.samples);
}

#[test]
fn detailed_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prior = PriorBox::default();
    let (sb, sc) = ProposalSchedule::default().std_dev(500, &prior);
    let q = |to: MaterialParams, from: MaterialParams| {
        (-0.5 * (((to.b - from.b) / sb).powi(2) + ((to.c - from.c) / sc).powi(2))).exp()
    };
    for _ in 0..1000 {
        let x = prior.from_unit([rng.random(), rng.random()]);
        let y = prior.from_unit([rng.random(), rng.random()]);
        let (px, py) = (gauss_log_density(x), gauss_log_density(y));
        let fwd = px.exp() * q(y, x) * acceptance_probability(py - px);
        let back = py.exp() * q(x, y) * acceptance_probability(px - py);
        assert!((fwd - back).abs() <= 1e-12 * fwd.max(back).max(1e-300));
    }
}

#[test]
fn chains_are_reproducible() {
    let prior = PriorBox::default();
    let opts = ChainOptions::default();
    let a = run_metropolis(gauss_log_density, &prior, &opts, 42);
    let b = run_metropolis(gauss_log_density, &prior, &opts, 42);
    let c = run_metropolis(gauss_log_density, &prior, &opts, 43);
    assert_eq!(a, b);
    assert_ne!(a.samples, c.samples);
    assert_eq!(a.samples.len(), opts.n);
    assert_eq!(a.seed, 42);
}

#[test]
fn caching_does_not_change_the_chain() {
    let prior = PriorBox::default();
    let opts = ChainOptions::default();
    let a = run_metropolis(gauss_log_density, &prior, &opts, 9);
    let b = run_metropolis(gauss_log_density, &prior, &ChainOptions { cache: false, ..opts }, 9);
    assert_eq!(a.samples, b.samples);
    assert!(b.diagnostics.evaluations > a.diagnostics.evaluations);
}

#[test]
fn acceptance_flags() {
    let prior = PriorBox::default();
    let tiny = ChainOptions { schedule: ProposalSchedule::new(1e-12, 1e-12, 100).unwrap(), ..Default::default() };
    let chain = run_metropolis(gauss_log_density, &prior, &tiny, 1);
    assert!(chain.diagnostics.high_acceptance);
    assert!(chain.diagnostics.flagged());

    let spike = |p: MaterialParams| -1e8 * ((p.b - 0.3).powi(2) + (p.c - 0.225).powi(2));
    let chain = run_metropolis(spike, &prior, &ChainOptions::default(), 1);
    assert!(chain.diagnostics.low_acceptance);
}

#[test]
fn schedule_switches_once() {
    let s = ProposalSchedule::default();
    assert_eq!(s.eps(1), 0.02);
    assert_eq!(s.eps(99), 0.02);
    assert_eq!(s.eps(100), 0.001);
    assert!(ProposalSchedule::new(0.0, 0.001, 10).is_err());
}

#[test]
fn start_outside_support_moves_in() {
    let prior = PriorBox::default();
    let half = |p: MaterialParams| if p.b > 0.4 { 0.0 } else { f64::NEG_INFINITY };
    let chain = run_metropolis(half, &prior, &ChainOptions::default(), 2);
    assert!(chain.samples.iter().all(|p| p.b > 0.4));
}

#[test]
fn region_probabilities() {
    let prior = PriorBox::default();
    let chain = run_metropolis(gauss_log_density, &prior, &ChainOptions::default(), 7);
    let all = region_probability(&chain, |_| true).unwrap();
    assert_eq!((all.probability, all.standard_error), (1.0, 0.0));
    assert_eq!(region_probability(&chain, |_| false).unwrap().probability, 0.0);
    let mut b: Vec<f64> = chain.samples.iter().map(|p| p.b).collect();
    b.sort_by(f64::total_cmp);
    let median = b[b.len() / 2];
    // rejected moves repeat states, so ties at the median are allowed for
    let half = region_probability(&chain, |p| p.b < median).unwrap();
    let below = b.iter().filter(|&&v| v < median).count() as f64 / 1000.0;
    assert_eq!(half.probability, below);
    assert!(below > 0.45 && below <= 0.5);
    assert!((half.standard_error - (below * (1.0 - below) / 1000.0).sqrt()).abs() < 1e-15);

    let short = run_metropolis(gauss_log_density, &prior, &ChainOptions { n: 50, ..Default::default() }, 7);
    assert!(region_probability(&short, |_| true).is_err());
}

#[test]
fn kde_of_uniform_sample() {
    let prior = PriorBox::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let points: Vec<MaterialParams> = (0..5000).map(|_| prior.from_unit([rng.random(), rng.random()])).collect();
    let kde = Kde::new(&points, &prior).unwrap();
    let flat = 1.0 / prior.area();
    let (nb, nc) = (60, 60);
    let grid = kde.grid(nb, nc);
    let cell = prior.area() / (nb * nc) as f64;
    let total: f64 = grid.iter().flatten().sum::<f64>() * cell;
    assert!((total - 1.0).abs() < 0.01, "mass {total}");
    for (j, row) in grid.iter().enumerate() {
        for (i, d) in row.iter().enumerate() {
            if (10..50).contains(&i) && (10..50).contains(&j) {
                assert!((d - flat).abs() < 0.15 * flat, "({i}, {j}) {d} vs {flat}");
            }
        }
    }
    assert_eq!(kde.density(MaterialParams { b: 0.7, c: 0.22 }), 0.0);
}

#[test]
fn kde_credible_region() {
    let prior = PriorBox::default();
    let chain = run_metropolis(gauss_log_density, &prior, &ChainOptions { n: 4000, ..Default::default() }, 4);
    let s = posterior_summary(&chain).unwrap();
    assert!(s.kde.in_credible_region(MaterialParams { b: MU.0, c: MU.1 }, 0.95));
    let region = s.kde.credible_region(0.95);
    assert!(!region.contains(MaterialParams { b: 0.58, c: 0.249 }));
    let inside = chain.samples.iter().filter(|&&p| region.contains(p)).count();
    assert!((inside as f64 / 4000.0 - 0.95).abs() < 0.01);
}

#[test]
fn kde_of_stuck_chain_is_floored() {
    let prior = PriorBox::default();
    let points = vec![prior.midpoint(); 50];
    let kde = Kde::new(&points, &prior).unwrap();
    assert!(kde.floored);
    assert!(kde.density(prior.midpoint()).is_finite());
}

#[test]
fn rhat_of_disagreeing_chains() {
    let a: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
    assert!(split_rhat(&[a.clone(), b]).unwrap() > 2.0);
    assert!(split_rhat(&[a.clone(), a]).unwrap() < 1.05);
    assert!(split_rhat(&[vec![1.0; 10]]).is_err());
}

#[test]
fn location_seeds_differ() {
    let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| location_seed(7, i)).collect();
    assert_eq!(seeds.len(), 1000);
    assert_eq!(location_seed(7, 3), location_seed(7, 3));
}
