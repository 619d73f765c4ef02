use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "experiment = custom
dim = 2
bc = periodic
n_periods = 2, 3
h_ref = 1/16
h_hom = 1/16
cell_n = 16
dt = 1e-4
checkpoints = 2, 4
coeffs = paper2d
steps = 4
snapshot_stride = 2
";

fn homollg(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_homollg"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cell_writes_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = homollg(dir.path(), "experiment = periodic2d\ncell_n = 32\n", &["cell"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("out/coeffs.txt")).unwrap();
    let a11: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("a0_11 "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((a11 - 1.178).abs() < 0.01);
    assert!(dir.path().join("out/chi.txt").exists());
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = homollg(dir.path(), "experiment = periodic2d\nbogus = 1\n", &["cell"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = homollg(dir.path(), "experiment = custom\ndim = 2\n", &["solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("h_ref"));
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{}scale = multiscale\nmax_iter = 1\nthreshold = 1e-14\n",
        TINY.replace("dt = 1e-4", "dt = 1e-2")
    );
    let out = homollg(dir.path(), &cfg, &["solve"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_writes_stats_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = homollg(dir.path(), TINY, &["solve"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = fs::read_to_string(dir.path().join("out/stats.csv")).unwrap();
    let lines: Vec<&str> = stats.lines().collect();
    assert_eq!(lines[0], "step,iters,residual,wall_ms");
    assert_eq!(lines.len(), 5);
    for j in [0, 2, 4] {
        assert!(dir.path().join(format!("out/snapshots/m_{j:06}.txt")).exists());
    }
}

#[test]
fn converge_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let first = homollg(dir.path(), TINY, &["converge"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let errors = fs::read_to_string(dir.path().join("out/errors.csv")).unwrap();
    let lines: Vec<&str> = errors.lines().collect();
    assert_eq!(lines[0], "n,j,e0,re0,e1,re1,e2,re2");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("2,2,"));
    let orders = fs::read_to_string(dir.path().join("out/orders.csv")).unwrap();
    assert!(orders.starts_with("j,quantity,slope\n"));
    let again = homollg(dir.path(), TINY, &["--threads", "1", "converge"]);
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("out/errors.csv")).unwrap(), errors);
}

#[test]
fn algorithm1_and_benchmark_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = homollg(dir.path(), TINY, &["algo1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "coeffs.txt",
        "errors.csv",
        "snapshots/m0_j4.txt",
        "snapshots/mtilde_j4.txt",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let cfg = format!("{TINY}bench_dts = 1e-5\nbench_steps = 1\n");
    let out = homollg(dir.path(), &cfg, &["bench-iter"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bench = fs::read_to_string(dir.path().join("out/bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3);
}

#[test]
fn neumann_corrector_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace("bc = periodic", "bc = neumann");
    let out = homollg(dir.path(), &cfg, &["corrector"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/psi_n2.txt").exists());
    assert!(dir.path().join("out/psi_n3.txt").exists());
}
