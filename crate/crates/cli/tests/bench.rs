use telegraph_cli::bench::{bench_forward, checksum};
use telegraph_cli::RunConfig;

#[test]
fn report_shape_and_checksum() {
    let mut cfg = RunConfig::default();
    cfg.burn_in = 20;
    cfg.n = 80;
    let r = bench_forward(&cfg, 3).unwrap();
    assert_eq!((r.cold.len(), r.warm.len()), (3, 3));
    assert!(r.checksum_stable());
    assert_eq!(r.checksum_before.len(), 64);
    assert_eq!(r.chain_steps, 100);
    assert!(r.cold.iter().chain(&r.warm).all(|t| *t > 0.0));
    let md = r.to_markdown();
    for needle in ["median [ms]", "p90 [ms]", "hardware threads", "2.8 s per solve", "unchanged"] {
        assert!(md.contains(needle), "{needle}");
    }
    assert_eq!(r.to_csv().lines().count(), 1 + 6 + 2);
    assert_eq!(
        checksum(&[]),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    let again = bench_forward(&cfg, 1).unwrap();
    assert_eq!(again.checksum_before, r.checksum_before);
}

#[test]
fn cache_speedup_and_stable_medians() {
    let mut cfg = RunConfig::default();
    cfg.burn_in = 50;
    cfg.n = 400;
    let a = bench_forward(&cfg, 15).unwrap();
    let b = bench_forward(&cfg, 15).unwrap();
    assert!(a.cache_speedup() >= 1.5, "cache speedup {}", a.cache_speedup());
    let drift = (a.warm_median() - b.warm_median()).abs() / a.warm_median().min(b.warm_median());
    assert!(drift < 0.2, "median drift {drift}");
}
