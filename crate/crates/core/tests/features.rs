mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use telegraph_core::features::*;
use telegraph_core::solver::TelegraphSolver;
use telegraph_core::*;

fn set_of(scans: Vec<Vec<f64>>, g: TimeGrid) -> ScanSet {
    let mut set = ScanSet::new(g, (scans.len(), 1), (1.0, 1.0), T_EX, "test").unwrap();
    for (i, s) in scans.into_iter().enumerate() {
        set.insert(AScan::new(g, s, set.location_of(i, 0)).unwrap()).unwrap();
    }
    set
}

#[test]
fn window_sample_range() {
    let g = grid();
    let (first, last) = EchoWindow::default().sample_range(&g).unwrap();
    assert_eq!((first, last), (4720, 8800));
    assert!(EchoWindow::new(22.0, 11.8).is_err());
    assert!(EchoWindow::new(20.0, 40.0).unwrap().sample_range(&g).is_err());
}

#[test]
fn zero_signal_features() {
    let scan = AScan::zeros(grid(), Location::default());
    let f = extract_features(&scan, &EchoWindow::default(), [34, 35, 36]).unwrap();
    assert_eq!(f.amplitudes, [0.0; 3]);
    assert_eq!(f.phases, [0.0; 3]);
}

#[test]
fn cosine_on_bin() {
    let n = 1000;
    let g = make_time_grid(0.01, n).unwrap();
    let k = 40;
    let s: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64).cos()).collect();
    let scan = AScan::new(g, s, Location::default()).unwrap();
    let window = EchoWindow::new(0.0, g.time(n - 1)).unwrap();
    let f = extract_features(&scan, &window, [39, 40, 41]).unwrap();
    assert!((f.amplitudes[1] - n as f64 / 2.0).abs() < 1e-9);
    assert!(f.phases[1].abs() < 1e-12);
    assert!(f.amplitudes[0] < 1e-9 && f.amplitudes[2] < 1e-9);
}

#[test]
fn features_ignore_samples_outside_window() {
    let g = grid();
    let solver = TelegraphSolver::new(&pulse(), PlateModel::default()).unwrap();
    let a = solver.forward(params(0.12, 0.224)).unwrap();
    let mut s = a.samples().to_vec();
    s[100] = 0.7;
    s[13000] = -0.4;
    let b = AScan::new(g, s, Location::default()).unwrap();
    let w = EchoWindow::default();
    assert_eq!(extract_features(&a, &w, [34, 35, 36]).unwrap(), extract_features(&b, &w, [34, 35, 36]).unwrap());
}

#[test]
fn single_tone_dominates() {
    let n = 2000;
    let g = make_time_grid(0.01, n).unwrap();
    let tone: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 40.3 * i as f64 / n as f64).sin() * (i > 300 && i < 1700) as i32 as f64)
        .collect();
    let set = set_of(vec![tone.clone(), tone], g);
    let window = EchoWindow::new(0.0, 19.9).unwrap();
    let bins = select_dominant_bins(&set, &window, 40.0).unwrap();
    assert!(bins.contains(&40), "{bins:?}");
}

#[test]
fn dominant_bins_of_pulse_echo() {
    let g = grid();
    let solver = TelegraphSolver::new(&pulse(), PlateModel::default()).unwrap();
    let scans: Vec<Vec<f64>> = [(0.12, 0.224), (0.13, 0.222), (0.11, 0.225)]
        .iter()
        .map(|&(b, c)| solver.forward(params(b, c)).unwrap().into_samples())
        .collect();
    let window = EchoWindow::default();
    let set = set_of(scans.clone(), g);
    let bins = select_dominant_bins(&set, &window, 6.5).unwrap();

    // brute force: mean direct-DFT magnitude over bins below 6.5 MHz
    let (first, last) = window.sample_range(&g).unwrap();
    let mut mean: Vec<(usize, f64)> = (1..(6.5 * 35.0) as usize)
        .map(|k| {
            let m = scans.iter().map(|s| window_bin(s, first, last, k, 14000).norm()).sum::<f64>();
            (k, m)
        })
        .collect();
    mean.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut expect = [mean[0].0, mean[1].0, mean[2].0];
    expect.sort_unstable();
    assert_eq!(bins, expect);
    // a 1 MHz pulse on a 35 us record peaks around bin 35
    assert!(bins.iter().all(|&k| (30..=40).contains(&k)), "{bins:?}");
}

#[test]
fn zero_reference_has_no_dominant_bins() {
    let g = grid();
    let set = set_of(vec![vec![0.0; 14000]; 2], g);
    assert!(select_dominant_bins(&set, &EchoWindow::default(), 6.5).is_err());
    let empty = ScanSet::new(g, (2, 2), (1.0, 1.0), T_EX, "").unwrap();
    assert!(select_dominant_bins(&empty, &EchoWindow::default(), 6.5).is_err());
}

#[test]
fn time_shift_rotates_phase() {
    let g = grid();
    let solver = TelegraphSolver::new(&pulse(), PlateModel::default()).unwrap();
    let a = solver.forward(params(0.12, 0.224)).unwrap();
    let window = EchoWindow::default();
    let (first, last) = window.sample_range(&g).unwrap();
    let m = 37;
    let mut zeroed = vec![0.0; 14000];
    zeroed[first..=last].copy_from_slice(&a.samples()[first..=last]);
    let mut shifted = vec![0.0; 14000];
    for i in 0..14000 {
        shifted[(i + m) % 14000] = zeroed[i];
    }
    let full = EchoWindow::new(0.0, g.time(13999)).unwrap();
    let bins = [34, 35, 36];
    let f0 = extract_features(&AScan::new(g, zeroed, Location::default()).unwrap(), &full, bins).unwrap();
    let f1 = extract_features(&AScan::new(g, shifted, Location::default()).unwrap(), &full, bins).unwrap();
    for i in 0..3 {
        let rot = -2.0 * std::f64::consts::PI * (bins[i] * m) as f64 / 14000.0;
        assert!((wrap_phase(f1.phases[i] - f0.phases[i] - rot)).abs() < 1e-10);
        assert!((f1.amplitudes[i] - f0.amplitudes[i]).abs() < 1e-9 * f0.amplitudes[i]);
    }
}

#[test]
fn wrap_phase_range() {
    use std::f64::consts::PI;
    assert_eq!(wrap_phase(PI), PI);
    assert_eq!(wrap_phase(-PI), PI);
    assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    assert!((wrap_phase(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-15);
}

#[test]
fn covariance_needs_enough_locations() {
    let f = FeatureVector { phases: [0.0; 3], amplitudes: [1.0; 3], bin_indices: [1, 2, 3] };
    let r = FeatureCovariance::from_features(&vec![f; 6], [1, 2, 3]);
    assert!(matches!(r, Err(Error::InsufficientData(_))));
}

#[test]
fn identical_reference_is_degenerate() {
    let f = FeatureVector { phases: [0.3, -1.0, 2.0], amplitudes: [5.0, 4.0, 3.0], bin_indices: [1, 2, 3] };
    let cov = FeatureCovariance::from_features(&vec![f; 10], [1, 2, 3]).unwrap();
    assert!(cov.degenerate);
    assert!(cov.ridge > 0.0);
    assert_eq!(cov.sigma, nalgebra::Matrix6::identity() * cov.ridge);
    assert!(cov.whitener().is_ok());
    for i in 0..3 {
        assert!((cov.mean[i] - f.phases[i]).abs() < 1e-15);
    }
}

#[test]
fn recovers_known_feature_noise() {
    let sigma = 0.05;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = [3.0, -3.1, 0.5, 10.0, 12.0, 9.0];
    let features: Vec<FeatureVector> = (0..400)
        .map(|_| {
            let v: Vec<f64> = base.iter().map(|b| b + noise.sample(&mut rng)).collect();
            FeatureVector {
                phases: [wrap_phase(v[0]), wrap_phase(v[1]), wrap_phase(v[2])],
                amplitudes: [v[3], v[4], v[5]],
                bin_indices: [1, 2, 3],
            }
        })
        .collect();
    let cov = FeatureCovariance::from_features(&features, [1, 2, 3]).unwrap();
    let var = sigma * sigma;
    for i in 0..6 {
        for j in 0..6 {
            let e = cov.sigma[(i, j)];
            if i == j {
                assert!((e - var).abs() < 0.2 * var, "({i},{i}) = {e}");
            } else {
                assert!(e.abs() < 0.2 * var, "({i},{j}) = {e}");
            }
        }
    }
    // phases straddling ±π are averaged on the circle
    assert!(wrap_phase(cov.mean[1] + 3.1).abs() < 0.02);
    assert_eq!(cov.ridge, 0.0);
}

#[test]
fn residual_wraps_phases() {
    use std::f64::consts::PI;
    let a = FeatureVector { phases: [PI - 0.1, 0.0, 0.0], amplitudes: [1.0; 3], bin_indices: [1, 2, 3] };
    let b = FeatureVector { phases: [-PI + 0.1, 0.0, 0.0], amplitudes: [0.5; 3], bin_indices: [1, 2, 3] };
    let r = a.residual(&b);
    assert!((r[0] + 0.2).abs() < 1e-12);
    assert_eq!(r[3], 0.5);
}

#[test]
fn model_features_are_reproducible() {
    let solver = TelegraphSolver::new(&pulse(), PlateModel::default()).unwrap();
    let scan = solver.forward(params(0.12, 0.224)).unwrap();
    let a = extract_features(&scan, &EchoWindow::default(), [34, 35, 36]).unwrap();
    let b = extract_features(&scan, &EchoWindow::default(), [34, 35, 36]).unwrap();
    assert_eq!(a, b);
    assert!(a.to_array().iter().all(|v| v.is_finite()));
    let bins = a.bin_indices;
    let model = telegraph_core::bayes::FeatureModel::from_solver(solver, &EchoWindow::default(), bins).unwrap();
    let m = model.features(params(0.12, 0.224)).unwrap();
    for i in 0..3 {
        assert!(wrap_phase(m.phases[i] - a.phases[i]).abs() < 1e-10);
        assert!((m.amplitudes[i] - a.amplitudes[i]).abs() < 1e-10 * a.amplitudes[i]);
    }
}
