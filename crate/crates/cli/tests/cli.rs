use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// 2000-step Cox–Ross–Rubinstein value of the American put (r 0.06, σ 0.4, K 40, S 36, T 1).
const PUT_ORACLE: f64 = 7.108971883182118;

fn run(cmd: &str, config: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}.toml"));
    fs::write(&cfg, config).unwrap();
    run_file(cmd, &cfg, &dir.join("out"), extra)
}

fn run_file(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrbsde"))
        .arg(cmd)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn csv(path: PathBuf) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing"))
        .parse()
        .unwrap()
}

#[test]
fn sin_signal_matches_its_formula() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "lift",
        "[problem]\ncatalog = \"linear_flow\"\n[signal]\nkind = \"formula\"\nformula = [\"sin(6.283185307179586*t)\"]\npoints = 64\nlevels = [2, 4]\n",
        dir.path(),
        &[],
    );
    ok(&o);
    let rows = csv(dir.path().join("out/signal.csv"));
    assert_eq!(rows.len(), 65);
    for r in &rows {
        let t: f64 = r[0].parse().unwrap();
        let x: f64 = r[1].parse().unwrap();
        assert!((x - (2.0 * std::f64::consts::PI * t).sin()).abs() < 1e-14);
    }
    let pv = csv(dir.path().join("out/pvariation.csv"));
    assert_eq!(pv.len(), 3);
    // A smooth path has 1-variation equal to its total variation, 4.
    let total: f64 = pv[0][2].parse().unwrap();
    assert!((total - 4.0).abs() < 1e-2, "{total}");
}

#[test]
fn brownian_lift_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 7\n[problem]\ncatalog = \"linear_flow\"\n[signal]\nkind = \"brownian\"\npoints = 256\nlevels = [3, 5]\nsplit_delta = 0.5\n";
    ok(&run("lift", cfg, dir.path(), &[]));
    let first = fs::read(dir.path().join("out/signal.csv")).unwrap();
    let first_pv = fs::read(dir.path().join("out/pvariation.csv")).unwrap();
    ok(&run("lift", cfg, dir.path(), &[]));
    assert_eq!(first, fs::read(dir.path().join("out/signal.csv")).unwrap());
    assert_eq!(first_pv, fs::read(dir.path().join("out/pvariation.csv")).unwrap());
    ok(&run("lift", cfg, dir.path(), &["--seed", "8"]));
    assert_ne!(first, fs::read(dir.path().join("out/signal.csv")).unwrap());
}

#[test]
fn rough_fbm_is_a_range_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "lift",
        "[problem]\ncatalog = \"linear_flow\"\n[signal]\nkind = \"fbm\"\nhurst = 0.2\npoints = 64\n",
        dir.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("range"), "{err}");
}

#[test]
fn misspelled_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("solve", "[problem]\ncatalog = \"american_put\"\n[solver]\nstpes = 10\n", dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stpes"));
}

#[test]
fn put_matches_the_binomial_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "solve",
        "seed = 11\n[problem]\ncatalog = \"american_put\"\n[solver]\nsteps = 200\npaths = 20000\n",
        dir.path(),
        &[],
    );
    ok(&o);
    let est = fs::read_to_string(dir.path().join("out/estimates.txt")).unwrap();
    let y0 = value(&est, "y0");
    assert!((y0 - PUT_ORACLE).abs() <= 0.015 * PUT_ORACLE, "{y0}");
    assert_eq!(value(&est, "complementarity_violations"), 0.0);
    let agg = csv(dir.path().join("out/aggregates.csv"));
    assert_eq!(agg.len(), 201);
}

#[test]
fn penalty_ladder_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "solve",
        "seed = 3\n[problem]\ncatalog = \"american_put\"\n[solver]\nmode = \"penalized\"\nsteps = 512\npaths = 4000\npenalties = [1.0, 4.0, 16.0, 64.0, 256.0]\n",
        dir.path(),
        &[],
    );
    ok(&o);
    let rows = csv(dir.path().join("out/ladder.csv"));
    assert_eq!(rows.len(), 5);
    let y: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let se: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    for k in 1..y.len() {
        assert!(y[k] >= y[k - 1] - 2.0 * se[k].max(se[k - 1]), "{y:?}");
    }
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "solve",
        "[problem]\ncatalog = \"american_put\"\n[solver]\nsteps = 40\npaths = 2000\n",
        dir.path(),
        &["--seed", "21", "--threads", "4"],
    );
    ok(&o);
    let first = dir.path().join("out");
    let replay = dir.path().join("replay");
    ok(&run_file("solve", &first.join("manifest.toml"), &replay, &["--threads", "4"]));
    let mut names: Vec<_> = fs::read_dir(&first).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for n in names {
        assert_eq!(fs::read(first.join(&n)).unwrap(), fs::read(replay.join(&n)).unwrap(), "{n:?}");
    }
    let manifest = fs::read_to_string(first.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 21\n"));
}

#[test]
fn heat_kernel_pde_matches_the_convolution() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "pde",
        "[problem]\ncatalog = \"heat_kernel\"\n[pde]\nx_lo = -8.0\nx_hi = 8.0\nn_x = 801\nn_t = 800\ncsv_stride = 100\n",
        dir.path(),
        &[],
    );
    ok(&o);
    let rows = csv(dir.path().join("out/pde.csv"));
    let mut gap: f64 = 0.0;
    let mut seen = 0;
    for r in rows.iter().filter(|r| r[0] == "0") {
        let x: f64 = r[1].parse().unwrap();
        let u: f64 = r[2].parse().unwrap();
        // N(0, 1) density convolved with the unit-time heat kernel: N(0, 2) density.
        let exact = (-x * x / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt();
        gap = gap.max((u - exact).abs());
        seen += 1;
    }
    assert_eq!(seen, 801);
    assert!(gap <= 1e-3, "{gap}");
}

#[test]
fn stopping_identity_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "stop",
        "seed = 5\n[problem]\ncatalog = \"american_put\"\n[solver]\nsteps = 50\npaths = 20000\n",
        dir.path(),
        &[],
    );
    ok(&o);
    let text = fs::read_to_string(dir.path().join("out/stopping.txt")).unwrap();
    assert!(text.contains("holds = true"), "{text}");
    assert!(csv(dir.path().join("out/stopping_region.csv")).len() > 1);
}

#[test]
fn constant_family_gives_a_zero_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "converge",
        "[problem]\ncatalog = \"constant\"\nvalue = 2.0\n[solver]\nsteps = 20\npaths = 500\n[converge]\nfamily = \"constant\"\nlevels = [1, 2, 3]\nreference = 4\n",
        dir.path(),
        &[],
    );
    ok(&o);
    let rows = csv(dir.path().join("out/convergence.csv"));
    assert_eq!(rows.len(), 3);
    for r in rows {
        for c in &r[1..4] {
            assert_eq!(c.parse::<f64>().unwrap(), 0.0);
        }
        assert_eq!(r[4].parse::<f64>().unwrap(), 2.0);
    }
}
