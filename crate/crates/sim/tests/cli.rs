use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epr-sim")).args(args).arg("--output-dir").arg(dir).output().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn ideal_run_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--scenario", "ideal_steady_state", "--set", "z=2.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("ideal_steady_state.csv"));
    assert_eq!(header, ["t_ms", "xi", "xi_cond", "xi_steady_closed_form"]);
    let last = rows.last().unwrap();
    assert!((last[1] - 0.16).abs() < 1e-9 && (last[2] - 0.16).abs() < 1e-9);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "ideal_steady_state");
    assert_eq!(manifest["params"]["z"], 2.5);
    assert_eq!(manifest["params"]["t_max"], 15.0);
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn identical_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--scenario", "reconstruction_roundtrip", "--set", "n_traj=600", "--set", "export_records=2", "--seed", "9"];
    let mut first = args.to_vec();
    first.extend(["--jobs", "1"]);
    let mut second = args.to_vec();
    second.extend(["--jobs", "4"]);
    assert!(run(a.path(), &first).status.success());
    assert!(run(b.path(), &second).status.success());
    for f in ["reconstruction_roundtrip.csv", "records.csv", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let (header, rows) = read_csv(&a.path().join("records.csv"));
    assert_eq!(header, ["trajectory_id", "step", "t_ms", "y_c", "y_s"]);
    assert_eq!(rows.len(), 2 * 500);
}

#[test]
fn config_file_sweep_is_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig3b.toml");
    fs::write(&cfg, "format_version = 1\nscenario = \"multilevel_fig3b\"\n[params]\nsamples = 30\n[sweep]\nname = \"d\"\nvalues = [55, 100, 150]\n").unwrap();
    let out = run(&dir.path().join("out"), &["--config", cfg.to_str().unwrap(), "--jobs", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/multilevel_fig3b.csv"));
    assert_eq!(header[0], "d");
    let curve = |d: f64| rows.iter().filter(|r| r[0] == d).map(|r| r[3]).collect::<Vec<_>>();
    let (a, b, c) = (curve(55.0), curve(100.0), curve(150.0));
    for i in 1..a.len() {
        assert!(c[i] < b[i] && b[i] < a[i]);
    }
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--scenario", "kappa_calibration", "--set", "zeta=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`zeta`"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn syntax_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "format_version = 1\nscenario = \"ideal_steady_state\"\n[params]\nz = = 2\n").unwrap();
    let out = run(&dir.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn numerical_failure_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--scenario", "kappa_calibration", "--set", "q0=0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn oracle_convergence_error_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--scenario", "oracle_convergence", "--set", "sweep.n_atoms=2,3,4", "--jobs", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&dir.path().join("oracle_convergence.csv"));
    let dev: Vec<f64> = rows.iter().map(|r| r[3]).collect();
    assert!(dev[0] > dev[1] && dev[1] > dev[2], "{dev:?}");
}
