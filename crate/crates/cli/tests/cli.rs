use std::path::Path;
use std::process::{Command, Output};

fn linresp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linresp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(out)).unwrap()
}

/// Value of a trailing `# key=value` comment.
fn note(csv: &str, key: &str) -> Option<f64> {
    let prefix = format!("# {key}=");
    csv.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .map(|v| v.trim().parse().unwrap())
}

/// Data rows, without comments or the header.
fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const AFFINE: [&str; 6] = ["--map", "contracting_affine", "--u", "0", "--A", "50"];

#[test]
fn affine_run_reports_the_exact_derivative() {
    let v = json(&linresp(&[&["run"], &AFFINE[..]].concat()));
    let d = v["data"]["derivative"].as_f64().unwrap();
    assert!((d - 2.0).abs() < 1e-6, "{d}");
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_segments_is_a_configuration_error() {
    let out = linresp(&["run", "--A", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_map_is_a_configuration_error() {
    let out = linresp(&["run", "--map", "lorenz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "map = \"solenoid\"\nsegmnts = 10\n");
    let out = linresp(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("segmnts"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "map = \"contracting_affine\"\nu = 0\nA = 40\nW = 3\n",
    );
    let v = json(&linresp(&["run", "--config", &cfg, "--A", "30"]));
    assert_eq!(v["config"]["response"]["segments"], 30);
    assert_eq!(v["config"]["response"]["window"], 3);
    assert_eq!(v["config"]["map"], "contracting_affine");
}

#[test]
fn replica_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let second = dir.path().join("b.csv");
    for path in [&first, &second] {
        let args = [
            "run",
            "--A",
            "20",
            "--seeds",
            "1,2,3",
            "-o",
            path.to_str().unwrap(),
        ];
        stdout(&linresp(&args));
    }
    let a = std::fs::read(&first).unwrap();
    assert_eq!(a, std::fs::read(&second).unwrap());
    let text = String::from_utf8(a).unwrap();
    let lines: Vec<&str> = text.split("\r\n").collect();
    assert!(lines[0].starts_with("# config_sha256="));
    assert!(lines[1].starts_with("# config={"));
    assert_eq!(lines[2], "rep,seed,sc,uc,derivative");
    assert_eq!(rows(&text).len(), 3);
    assert!(note(&text, "std").unwrap() > 0.0);
}

#[test]
fn scaling_with_repeated_seeds_has_zero_spread() {
    let csv = stdout(&linresp(&[
        "scaling-a",
        "--values",
        "10,20",
        "--seeds",
        "5,5,5,5",
    ]));
    let table = rows(&csv);
    assert_eq!(table.len(), 2);
    for row in table {
        assert_eq!(row[2], "0");
    }
    assert!(note(&csv, "loglog_slope").is_none());
}

#[test]
fn single_scaling_value_gives_no_slope() {
    let csv = stdout(&linresp(&[
        "scaling-w",
        "--A",
        "20",
        "--values",
        "4",
        "--reps",
        "4",
    ]));
    assert_eq!(rows(&csv).len(), 1);
    assert_eq!(csv.lines().nth(2), Some("W,mean,std"));
    assert!(note(&csv, "loglog_slope").is_none());
}

#[test]
fn degenerate_parameter_grid_is_rejected() {
    for grid in ["0.1", "0.1,0.1"] {
        let out = linresp(&["gamma-sweep", "--A", "10", "--gammas", grid]);
        assert_eq!(out.status.code(), Some(2), "grid {grid}");
    }
}

#[test]
fn affine_sweep_has_the_exact_derivative_everywhere() {
    let args = [
        &[
            "gamma-sweep",
            "--gammas",
            "0,0.5,1",
            "--oracle-steps",
            "2000",
            "--oracle-runs",
            "2",
        ][..],
        &AFFINE[..],
    ]
    .concat();
    let csv = stdout(&linresp(&args));
    for row in rows(&csv) {
        let d: f64 = row[3].parse().unwrap();
        assert!((d - 2.0).abs() < 1e-6);
    }
    assert!((note(&csv, "fd_slope").unwrap() - 2.0).abs() < 1e-6);
}

#[test]
fn built_in_maps_validate() {
    for map in ["solenoid", "contracting_affine", "expanding_circle"] {
        let v = json(&linresp(&["validate", "--map", map, "--probes", "5"]));
        assert_eq!(v["passed"], true, "{map}");
    }
}

#[test]
fn affine_oracle_slope_matches_the_response() {
    let args = [
        &[
            "oracle",
            "--flr",
            "--gamma",
            "0.5",
            "--oracle-steps",
            "2000",
            "--oracle-runs",
            "2",
        ][..],
        &AFFINE[..],
    ]
    .concat();
    let csv = stdout(&linresp(&args));
    assert!((note(&csv, "slope").unwrap() - 2.0).abs() < 1e-6);
    assert!((note(&csv, "flr_derivative").unwrap() - 2.0).abs() < 1e-6);
    assert_eq!(rows(&csv).len(), 9);
}

#[test]
fn trace_csv_has_one_row_per_segment() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    stdout(&linresp(&[
        "run",
        "--A",
        "15",
        "--trace-csv",
        trace.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(
        text.lines().nth(2),
        Some("segment,trace_term,max_v_norm,c_condition,r_diag_0,r_diag_1")
    );
    assert_eq!(rows(&text).len(), 15);
}
