use std::ffi::OsString;
use std::path::{Path, PathBuf};

use telegraph_cli::cli::run;
use telegraph_cli::maps::{parameter_map_from_file, probability_map_from_file, MapFile};
use telegraph_cli::pipeline;
use telegraph_cli::scanset::read_scan_set;
use telegraph_cli::RunConfig;
use telegraph_core::damage::{test_grid, TestSetup};

const SMALL: &[&str] = &[
    "nx=6", "ny=4", "damage=2,1,1,1", "reference_exclude=2,1,1,1", "burn_in=50", "n=200", "jitter_b=0.005",
    "jitter_c=0.0005", "plate_seed=11", "seed=5",
];

fn small_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    for kv in SMALL {
        let (k, v) = kv.split_once('=').unwrap();
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn tele(args: &[&str], extra: &[&str]) -> (i32, String, String) {
    let mut argv: Vec<OsString> = vec!["telegraph".into()];
    for kv in SMALL.iter().chain(extra) {
        argv.push("--set".into());
        argv.push((*kv).into());
    }
    argv.extend(args.iter().map(OsString::from));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(args: &[&str], extra: &[&str]) -> String {
    let (code, out, err) = tele(args, extra);
    assert_eq!(code, 0, "{args:?}: {err}");
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn full_run(extra: &[&str]) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    ok(&["simulate", "-o", &p(&d, "plate.scanset"), "--truth", &p(&d, "truth.map")], extra);
    ok(&["calibrate", &p(&d, "plate.scanset"), "-o", &p(&d, "cal.map")], extra);
    ok(&["test", &p(&d, "plate.scanset"), "-o", &p(&d, "test.map"), "--calibration", &p(&d, "cal.map")], extra);
    ok(&["posterior", &p(&d, "plate.scanset"), "-o", &p(&d, "chain.csv"), "--location", "2,1", "--kde", &p(&d, "kde.csv"), "--kde-grid", "10"], extra);
    Run { _dir: dir, root: d }
}

#[test]
fn small_plate_end_to_end() {
    let r = full_run(&[]);
    let d = &r.root;
    let set = read_scan_set(&d.join("plate.scanset")).unwrap();
    assert_eq!(set.shape(), (6, 4));
    assert_eq!(set.len(), 24);

    let cal_file = MapFile::read(&d.join("cal.map")).unwrap();
    let cal = parameter_map_from_file(&cal_file, Path::new("cal")).unwrap();
    let truth = MapFile::read(&d.join("truth.map")).unwrap();
    let (tb, tc) = (truth.matrix("b").unwrap(), truth.matrix("c").unwrap());
    for (i, c) in cal.cells.iter().enumerate() {
        let c = c.as_ref().expect("every cell calibrates");
        assert!((c.params.b - tb.values[i].unwrap()).abs() < 2e-3, "cell {i}");
        assert!((c.params.c - tc.values[i].unwrap()).abs() < 2e-4, "cell {i}");
    }

    let test = probability_map_from_file(&MapFile::read(&d.join("test.map")).unwrap(), Path::new("t")).unwrap();
    let damaged = 6 + 2;
    assert!(test.cells[damaged].unwrap().rejected);
    let rejected = std::fs::read_to_string(d.join("test.rejected.csv")).unwrap();
    assert_eq!(rejected.lines().count(), 5);
    assert!(rejected.lines().nth(2).unwrap().starts_with("1,0,0,1,"));

    let chain = telegraph_cli::chain::read_chain(&d.join("chain.csv")).unwrap();
    assert_eq!(chain.samples.len(), 200);
    assert_eq!(chain.seed, telegraph_core::bayes::location_seed(5, 6 + 2));
    let kde = std::fs::read_to_string(d.join("kde.csv")).unwrap();
    assert_eq!(kde.lines().count(), 1 + 10);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let a = full_run(&[]);
    let b = full_run(&["threads=3"]);
    for f in ["plate.scanset", "truth.map", "cal.map", "test.map", "test.rejected.csv", "chain.csv", "kde.csv"] {
        assert!(read(a.root.join(f)) == read(b.root.join(f)), "{f} differs");
    }
}

#[test]
fn parallel_test_map_matches_the_sequential_grid() {
    let mut cfg = small_cfg();
    cfg.threads = 2;
    let plate = pipeline::simulate(&cfg).unwrap();
    let cal = pipeline::calibrate_map(&plate.scans, &cfg, Some(&cfg.reference_mask(6, 4))).unwrap();
    let t = pipeline::thresholds(&cal, &cfg).unwrap();
    let r = pipeline::reference(&plate.scans, &cfg).unwrap();
    let ours = pipeline::test_map(&plate.scans, &cfg, &r, &t).unwrap();
    let (prior, window, opts) = (cfg.prior().unwrap(), cfg.window().unwrap(), cfg.chain_options().unwrap());
    let setup = TestSetup {
        thresholds: &t,
        prior: &prior,
        cov: &r.cov,
        model: &r.model,
        window: &window,
        level: cfg.level,
        chain: &opts,
        root_seed: cfg.seed,
    };
    assert_eq!(ours, test_grid(&plate.scans, &setup).unwrap());
}

#[test]
fn render_writes_graymaps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "-o", &p(d, "s"), "--truth", &p(d, "truth.map")], &[]);
    ok(&["render", &p(d, "truth.map"), "--quantity", "b", "-o", &p(d, "b.pgm")], &[]);
    let img = read(d.join("b.pgm"));
    assert!(img.starts_with(b"P5\n# quantity=b unit=1/us"));
    let header_end = img.windows(4).position(|w| w == b"255\n").unwrap() + 4;
    assert_eq!(img.len() - header_end, 24);
    assert_eq!(img[header_end + 6 + 2], 255);

    let (code, _, err) = tele(&["render", &p(d, "truth.map"), "--quantity", "zz", "-o", &p(d, "x.pgm")], &[]);
    assert_eq!(code, 2);
    assert!(err.contains("have b, c"), "{err}");
}

#[test]
fn preprocess_drops_faulty_scans() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_cfg();
    let mut plate = pipeline::simulate(&cfg).unwrap().scans;
    let g = *plate.grid();
    let mut bad = plate.get(5, 3).unwrap().samples().to_vec();
    let k = ((cfg.t_ex + 3.0) / g.dt()) as usize;
    bad[k] += 2.0;
    let loc = plate.location_of(5, 3);
    plate.insert(telegraph_core::AScan::new(g, bad, loc).unwrap()).unwrap();
    telegraph_cli::scanset::write_scan_set(&plate, &d.join("in.scanset")).unwrap();
    let out = ok(&["preprocess", &p(d, "in.scanset"), "-o", &p(d, "out.scanset"), "--report", &p(d, "faults.csv")], &[]);
    assert!(out.contains("24 scans, 1 faulty"), "{out}");
    let clean = read_scan_set(&d.join("out.scanset")).unwrap();
    assert_eq!(clean.len(), 23);
    assert!(clean.get(5, 3).is_none());
    let report = std::fs::read_to_string(d.join("faults.csv")).unwrap();
    assert_eq!(report.lines().filter(|l| l.split(',').nth(3) == Some("1")).count(), 1);
}

#[test]
fn exit_codes() {
    assert_eq!(tele(&["config"], &[]).0, 0);
    assert_eq!(tele(&["--bogus"], &[]).0, 2);
    assert_eq!(tele(&["teleport"], &[]).0, 2);
    assert_eq!(tele(&["config"], &["seed=minus one"]).0, 2);
    assert_eq!(tele(&["config"], &["b_min=0.9"]).0, 2);
    let (code, _, err) = tele(&["calibrate", "/nonexistent/in.scanset", "-o", "/nonexistent/out"], &[]);
    assert_eq!(code, 1, "{err}");
    assert!(err.starts_with("error: "));
    let (code, out, _) = tele(&["--help"], &[]);
    assert_eq!(code, 0);
    assert!(out.contains("simulate"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.scanset");
    std::fs::write(&junk, "TELEGRAPH-SCANSET 1\ndt zero\n").unwrap();
    let (code, _, err) = tele(&["calibrate", junk.to_str().unwrap(), "-o", &p(dir.path(), "o")], &[]);
    assert_eq!(code, 2);
    assert!(err.contains(":2"), "{err}");
}

#[test]
fn config_file_and_spec_layering() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.cfg");
    let conf = dir.path().join("run.cfg");
    std::fs::write(&spec, "seed = 9\nnx = 3\ndamage = none\n").unwrap();
    std::fs::write(&conf, "seed = 10\n").unwrap();
    let (s, c) = (spec.to_str().unwrap(), conf.to_str().unwrap());
    let out = ok(&["--config", c, "simulate", "--spec", s, "-o", &p(dir.path(), "o")], &[]);
    assert!(out.contains("wrote 3x4"), "{out}");
    let printed = ok(&["--config", c, "config"], &[]);
    let mut back = RunConfig::default();
    back.apply_text(&printed, Path::new("printed")).unwrap();
    assert_eq!(back.seed, 10);
    assert_eq!(back.nx, 6);
}

#[test]
fn binary_runs() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_telegraph")).args(["--set", "nx=2", "config"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("nx = 2\n"));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_telegraph")).arg("--nope").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
