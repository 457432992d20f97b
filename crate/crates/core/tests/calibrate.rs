mod common;

use common::*;
use telegraph_core::calibrate::*;
use telegraph_core::solver::TelegraphSolver;
use telegraph_core::*;

#[test]
fn quadratic_bowl() {
    let target = [0.3, -0.7];
    let r = nelder_mead(
        |x| (x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2),
        &[0.2, 0.22],
        &NelderMeadOptions::default(),
    )
    .unwrap();
    assert!(r.converged);
    assert!((r.x[0] - target[0]).abs() < 1e-4 && (r.x[1] - target[1]).abs() < 1e-4);
}

#[test]
fn rosenbrock_valley() {
    let r = nelder_mead(
        |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
        &[0.3, 0.4],
        &NelderMeadOptions { initial_step: 0.1, ..Default::default() },
    )
    .unwrap();
    assert!(r.converged, "{r:?}");
    assert!(r.iterations <= 500);
    assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{:?}", r.x);
}

#[test]
fn never_worse_than_start() {
    let f = |x: &[f64]| (5.0 * x[0]).sin() + (3.0 * x[1]).cos() + 0.1 * x[0] * x[0];
    for start in [[0.0, 0.0], [1.0, -2.0], [3.0, 0.5]] {
        let r = nelder_mead(f, &start, &NelderMeadOptions::default()).unwrap();
        assert!(r.value <= f(&start));
    }
}

#[test]
fn infinite_everywhere_fails() {
    let r = nelder_mead(|_| f64::INFINITY, &[0.0, 0.0], &NelderMeadOptions::default());
    assert!(matches!(r, Err(Error::OptimizationFailure(_))));
}

#[test]
fn iteration_cap() {
    let opts = NelderMeadOptions { max_iterations: 5, ..Default::default() };
    let r = nelder_mead(|x| x[0] * x[0] + x[1] * x[1], &[3.0, 3.0], &opts).unwrap();
    assert_eq!(r.iterations, 5);
    assert!(!r.converged);
}

#[test]
fn misfit_properties() {
    let pulse = pulse();
    let plate = PlateModel::default();
    let solver = TelegraphSolver::new(&pulse, plate).unwrap();
    let truth = params(0.12, 0.224);
    let g_meas = solver.forward(truth).unwrap();
    assert!(misfit(truth, &g_meas, &pulse, plate).unwrap() < 1e-10);
    let far = misfit(params(0.3, 0.21), &g_meas, &pulse, plate).unwrap();
    assert!(far > 1e-2);

    // sign flip of both signals: build the flipped problem with a negated pulse
    let neg_pulse = ExcitationPulse::new(*pulse.grid(), pulse.samples().iter().map(|v| -v).collect(), T_EX).unwrap();
    let neg_meas = AScan::new(*g_meas.grid(), g_meas.samples().iter().map(|v| -v).collect(), Location::default()).unwrap();
    let p = params(0.2, 0.22);
    let a = misfit(p, &g_meas, &pulse, plate).unwrap();
    let b = misfit(p, &neg_meas, &neg_pulse, plate).unwrap();
    assert!((a - b).abs() < 1e-12 * a);
}

#[test]
fn l2_uses_trapezoid_weights() {
    let a = [1.0, 1.0, 1.0];
    let b = [0.0, 0.0, 0.0];
    assert!((l2_distance(&a, &b, 0.5) - 1.0).abs() < 1e-15);
}

#[test]
fn recovers_noiseless_truth() {
    let pulse = pulse();
    let solver = TelegraphSolver::new(&pulse, PlateModel::default()).unwrap();
    let g_meas = solver.forward(params(0.12, 0.224)).unwrap();
    let obj = MisfitObjective::new(&solver, &g_meas).unwrap();
    let start = params(0.2, 0.22);
    let r = calibrate(&obj, start, &PriorBox::default(), &NelderMeadOptions::default()).unwrap();
    assert!(r.converged);
    assert!((r.params.b - 0.12).abs() < 0.01, "{r:?}");
    assert!((r.params.c - 0.224).abs() < 0.002, "{r:?}");
    assert!(r.misfit <= obj.eval(start).unwrap());
    assert!(PriorBox::default().contains(r.params));
}

#[test]
fn grid_skips_missing_cells_and_is_deterministic() {
    let pulse = pulse();
    let g = grid();
    let solver = TelegraphSolver::new(&pulse, PlateModel::default()).unwrap();
    let scan = solver.forward(params(0.15, 0.23)).unwrap();
    let mut set = ScanSet::new(g, (2, 1), (5.0, 5.0), T_EX, "uniform").unwrap();
    set.insert(scan.with_location(set.location_of(0, 0))).unwrap();
    let opts = NelderMeadOptions::default();
    let a = calibrate_grid(&set, &pulse, PlateModel::default(), params(0.2, 0.22), &PriorBox::default(), &opts).unwrap();
    let b = calibrate_grid(&set, &pulse, PlateModel::default(), params(0.2, 0.22), &PriorBox::default(), &opts).unwrap();
    assert_eq!(a, b);
    assert!(a.get(0, 0).is_some());
    assert!(a.get(1, 0).is_none());
    assert_eq!(a.cells.iter().filter(|c| c.is_none()).count(), 1);
    assert!(a.failures.is_empty());
    assert_eq!(a.label, "uniform");
}

#[test]
fn start_outside_box_is_rejected() {
    let pulse = pulse();
    let solver = TelegraphSolver::new(&pulse, PlateModel::default()).unwrap();
    let g_meas = solver.forward(params(0.12, 0.224)).unwrap();
    let obj = MisfitObjective::new(&solver, &g_meas).unwrap();
    let r = calibrate(&obj, params(0.7, 0.22), &PriorBox::default(), &NelderMeadOptions::default());
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}
