use telegraph_core::bayes::{run_metropolis, ChainOptions};
use telegraph_core::calibrate::{CalibrationResult, ParameterMap};
use telegraph_core::damage::*;
use telegraph_core::*;

const SAMPLE: [f64; 25] = [
    0.2513, 0.252, 0.1788, 0.1215, 0.0635, 0.1458, 0.1521, 0.0613, 0.0622, 0.2998, 0.2131, 0.1086, 0.1587, 0.2935,
    0.2744, 0.2611, 0.1481, 0.1733, 0.2192, 0.0652, 0.1889, 0.1179, 0.2699, 0.0661, 0.2198,
];

fn map_of(params: &[(f64, f64)]) -> ParameterMap {
    ParameterMap {
        nx: params.len(),
        ny: 1,
        cells: params
            .iter()
            .map(|&(b, c)| {
                Some(CalibrationResult { params: MaterialParams { b, c }, misfit: 0.0, iterations: 1, converged: true })
            })
            .collect(),
        failures: vec![],
        label: "reference".into(),
    }
}

#[test]
fn quantiles_match_numpy_linear() {
    // numpy.quantile with the default linear method
    assert!((quantile(&SAMPLE, 0.99).unwrap() - 0.298288).abs() < 1e-12);
    assert!((quantile(&SAMPLE, 0.01).unwrap() - 0.061516).abs() < 1e-12);
    assert_eq!(quantile(&SAMPLE, 0.5).unwrap(), 0.1733);
    let v = [0.3, 0.1, 0.5, 0.2, 0.9, 0.4, 0.7];
    assert!((quantile(&v, 0.99).unwrap() - 0.888).abs() < 1e-12);
    assert!((quantile(&v, 0.01).unwrap() - 0.106).abs() < 1e-12);
    assert_eq!(quantile(&v, 0.5).unwrap(), 0.4);
    assert_eq!(quantile(&v, 0.0).unwrap(), 0.1);
    assert_eq!(quantile(&v, 1.0).unwrap(), 0.9);
    assert!(quantile(&[], 0.5).is_err());
    assert!(quantile(&v, 1.5).is_err());
}

#[test]
fn thresholds_from_reference() {
    let params: Vec<(f64, f64)> = SAMPLE.iter().map(|&b| (b, 0.2 + b / 10.0)).collect();
    let map = map_of(&params);
    let t = derive_thresholds(&map, &vec![true; 25], 0.99).unwrap();
    assert!((t.b_crit - 0.298288).abs() < 1e-12);
    assert!((t.c_crit - (0.2 + 0.0061516)).abs() < 1e-12);
    assert_eq!(t.provenance, "reference");
    assert_eq!(t.quantile_level, 0.99);
}

#[test]
fn thresholds_respect_mask_and_minimum() {
    let params: Vec<(f64, f64)> = SAMPLE.iter().map(|&b| (b, 0.22)).collect();
    let map = map_of(&params);
    let mut mask = vec![true; 25];
    mask[9] = false; // drop the maximum 0.2998
    let t = derive_thresholds(&map, &mask, 0.99).unwrap();
    let rest: Vec<f64> = SAMPLE.iter().enumerate().filter(|(i, _)| *i != 9).map(|(_, &v)| v).collect();
    assert_eq!(t.b_crit, quantile(&rest, 0.99).unwrap());
    let mut few = vec![false; 25];
    few[..19].iter_mut().for_each(|m| *m = true);
    assert!(matches!(derive_thresholds(&map, &few, 0.99), Err(Error::InsufficientData(_))));
    assert!(derive_thresholds(&map, &mask, 0.4).is_err());
    assert!(derive_thresholds(&map, &mask[..3], 0.99).is_err());
}

#[test]
fn thresholds_are_monotone_in_level() {
    let params: Vec<(f64, f64)> = SAMPLE.iter().map(|&b| (b, 0.25 - b / 10.0)).collect();
    let map = map_of(&params);
    let mask = vec![true; 25];
    let mut last = derive_thresholds(&map, &mask, 0.6).unwrap();
    for q in [0.7, 0.8, 0.9, 0.95, 0.99] {
        let t = derive_thresholds(&map, &mask, q).unwrap();
        assert!(t.b_crit >= last.b_crit && t.c_crit <= last.c_crit);
        last = t;
    }
}

#[test]
fn null_region_is_strict() {
    let r = NullRegion { b_crit: 0.2, c_crit: 0.22 };
    assert!(r.contains(MaterialParams { b: 0.1, c: 0.23 }));
    assert!(!r.contains(MaterialParams { b: 0.2, c: 0.23 }));
    assert!(!r.contains(MaterialParams { b: 0.1, c: 0.22 }));
    assert!(!r.contains(MaterialParams { b: 0.3, c: 0.21 }));
}

#[test]
fn chain_test_decisions() {
    let prior = PriorBox::default();
    let near = |b0: f64, c0: f64| {
        move |p: MaterialParams| -0.5 * (((p.b - b0) / 0.01).powi(2) + ((p.c - c0) / 0.001).powi(2))
    };
    let region = NullRegion { b_crit: 0.2, c_crit: 0.22 };
    let opts = ChainOptions::default();
    let healthy = run_metropolis(near(0.12, 0.224), &prior, &opts, 1);
    let r = test_chain(&healthy, &region, DEFAULT_LEVEL).unwrap();
    assert!(!r.rejected);
    assert!(r.p_null > 0.9);
    let damaged = run_metropolis(near(0.4, 0.21), &prior, &opts, 1);
    let r = test_chain(&damaged, &region, DEFAULT_LEVEL).unwrap();
    assert!(r.rejected);
    assert_eq!(r.p_null, 0.0);
    assert_eq!(r.acceptance_rate, damaged.diagnostics.acceptance_rate);
}
