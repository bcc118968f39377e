use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn qlbgk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlbgk")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("{body}output_dir = \"out_{}\"\n", name.trim_end_matches(".toml"))).unwrap();
    path
}

fn run_config(cmd: &str, config: &Path) -> Output {
    qlbgk(&[cmd, "--config", config.to_str().unwrap()])
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn density_file(dir: &Path, nx: usize, f: impl Fn(usize) -> f64) -> PathBuf {
    let path = dir.join("density.csv");
    let body: String = (0..nx).map(|j| format!("{},{}\n", j as f64 / nx as f64, f(j))).collect();
    std::fs::write(&path, format!("x,n\n{body}")).unwrap();
    path
}

#[test]
fn constant_density_gives_log_partition_potential() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "M = 4\nT = 1.0\ntol_inf = 1e-12\n");
    let n = density_file(dir.path(), 36, |_| 2.0);
    let out = qlbgk(&["solve-moment", "--config", cfg.to_str().unwrap(), "--density", n.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // Z = Σ_p exp(-(2πp)²), summed directly
    let z: f64 = (-4i32..=4).map(|p| (-(2.0 * PI * p as f64).powi(2)).exp()).sum();
    let (header, rows) = read_csv(&dir.path().join("out_c/potential.csv"));
    assert_eq!(header, ["x", "A"]);
    assert_eq!(rows.len(), 36);
    for r in rows {
        assert!((r[1] - (z / 2.0).ln()).abs() < 1e-9, "{}", r[1]);
    }
    assert_eq!(read_json(&dir.path().join("out_c/maxwellian.json"))["format"], "qlbk-state");
}

#[test]
fn zero_density_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "M = 4\nT = 1.0\n");
    let n = density_file(dir.path(), 36, |j| if j == 7 { 0.0 } else { 1.0 });
    let out = qlbgk(&["solve-moment", "--config", cfg.to_str().unwrap(), "--density", n.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "non_positive_density");
    assert_eq!(read_json(&dir.path().join("out_c/error.json"))["exit_code"], 3);
}

#[test]
fn fixture_roundtrip() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "M = 8\nT = 10.0\ntol_inf = 1e-12\ndensity_file = \"{}\"\n",
        fixture("roundtrip_density.csv").display()
    );
    let cfg = write_config(dir.path(), "r.toml", &body);
    assert_eq!(run_config("solve-moment", &cfg).status.code(), Some(0));
    let report = read_json(&dir.path().join("out_r/estimate_report.json"));
    assert!(report["residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(report["converged"], true);
    let (_, got) = read_csv(&dir.path().join("out_r/potential.csv"));
    let (_, want) = read_csv(&fixture("roundtrip_potential.csv"));
    let err = got.iter().zip(&want).map(|(a, b)| (a[1] - b[1]).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn non_convergence_exits_4() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "M = 8\nT = 10.0\ntol_inf = 1e-15\nmax_iter = 1\ndensity_file = \"{}\"\n",
        fixture("roundtrip_density.csv").display()
    );
    let cfg = write_config(dir.path(), "r.toml", &body);
    let out = run_config("solve-moment", &cfg);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(read_json(&dir.path().join("out_r/error.json"))["error"], "not_converged");
}

#[test]
fn invalid_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    for (i, body) in ["M = 4\nT = 1.0\nunknown = 3\n", "M = 4\n", "M = 1\nT = 1.0\nNx = 3\n", "M = [\n"]
        .iter()
        .enumerate()
    {
        let cfg = dir.path().join(format!("bad{i}.toml"));
        std::fs::write(&cfg, body).unwrap();
        let out = run_config("evolve", &cfg);
        assert_eq!(out.status.code(), Some(2), "{body}");
        let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], "invalid_config");
    }
    let out = qlbgk(&["evolve", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(qlbgk(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn zero_horizon_gives_single_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "e.toml", "M = 3\nT = 10.0\nt_end = 0.0\n");
    assert_eq!(run_config("evolve", &cfg).status.code(), Some(0));
    let (header, rows) = read_csv(&dir.path().join("out_e/trajectory.csv"));
    assert_eq!(
        header,
        [
            "t",
            "trace",
            "free_energy",
            "entropy_production",
            "min_density",
            "dist_J1_gibbs",
            "dist_J2_gibbs",
            "solver_iters",
            "solver_residual"
        ]
    );
    assert_eq!(rows.len(), 1);
    assert!(dir.path().join("out_e/final_state.json").exists());
}

#[test]
fn relaxation_free_energy_decreases_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let body = "M = 8\nT = 10.0\ntau = 1.0\ndt = 0.01\nt_end = 1.0\ninitial = \"gibbs_plus_coherence\"\nsnapshot_stride = 25\n";
    let a = write_config(dir.path(), "a.toml", body);
    let b = write_config(dir.path(), "b.toml", body);
    assert_eq!(run_config("evolve", &a).status.code(), Some(0));
    assert_eq!(run_config("evolve", &b).status.code(), Some(0));
    let (_, rows) = read_csv(&dir.path().join("out_a/trajectory.csv"));
    assert_eq!(rows.len(), 101);
    for w in rows.windows(2) {
        assert!(w[1][2] <= w[0][2] + 1e-6 * 0.01, "free energy rose at t = {}", w[1][0]);
    }
    for file in ["trajectory.csv", "final_state.json", "snapshots/index.csv", "snapshots/snapshot_000004.json"] {
        let x = std::fs::read(dir.path().join("out_a").join(file)).unwrap();
        let y = std::fs::read(dir.path().join("out_b").join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn final_state_restarts_evolution() {
    let dir = TempDir::new().unwrap();
    let first = "M = 4\nT = 10.0\ndt = 0.01\nt_end = 0.2\ninitial = \"gibbs_plus_coherence\"\n";
    let a = write_config(dir.path(), "a.toml", first);
    assert_eq!(run_config("evolve", &a).status.code(), Some(0));
    let second = "M = 4\nT = 10.0\ndt = 0.01\nt_end = 0.1\ninitial = \"file\"\ninitial_file = \"out_a/final_state.json\"\n";
    let b = write_config(dir.path(), "b.toml", second);
    assert_eq!(run_config("evolve", &b).status.code(), Some(0));
    let (_, end_a) = read_csv(&dir.path().join("out_a/trajectory.csv"));
    let (_, start_b) = read_csv(&dir.path().join("out_b/trajectory.csv"));
    let (x, y) = (end_a.last().unwrap(), &start_b[0]);
    assert!((x[2] - y[2]).abs() < 1e-12);
    assert!((x[5] - y[5]).abs() < 1e-12);
}

#[test]
fn density_floor_breach_exits_5() {
    let dir = TempDir::new().unwrap();
    let body = "M = 6\nT = 10.0\ndt = 0.01\nt_end = 0.1\ninitial = \"gibbs_plus_coherence\"\ncoherence_amplitude = 0.2\ndensity_floor = 0.999\n";
    let cfg = write_config(dir.path(), "f.toml", body);
    let out = run_config("evolve", &cfg);
    assert_eq!(out.status.code(), Some(5));
    let err = read_json(&dir.path().join("out_f/error.json"));
    assert_eq!(err["error"], "density_floor");
    assert!(err["t"].as_f64().is_some());
}

#[test]
fn equilibrium_from_gibbs_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "g.toml", "M = 6\nT = 10.0\ndt = 0.05\nt_end = 1.0\nmass = 2.0\n");
    assert_eq!(run_config("equilibrium", &cfg).status.code(), Some(0));
    let v = read_json(&dir.path().join("out_g/verdict.json"));
    assert_eq!(v["pass"], true);
    assert!(v["dist_J1_final"].as_f64().unwrap() <= 1e-10);
    assert!(v["runtime_s"].is_null());
    for key in ["gap0", "monotone_tail", "c_emp_klein"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn equilibrium_with_large_perturbation_records_verdict() {
    let dir = TempDir::new().unwrap();
    let body = "M = 6\nT = 10.0\ndt = 0.05\nt_end = 2.0\ninitial = \"gibbs_plus_coherence\"\ncoherence_amplitude = 0.45\nrecord_runtime = true\n";
    let cfg = write_config(dir.path(), "p.toml", body);
    assert_eq!(run_config("equilibrium", &cfg).status.code(), Some(0));
    let v = read_json(&dir.path().join("out_p/verdict.json"));
    assert!(v["monotone_tail"].is_boolean());
    assert!(v["gap0"].as_f64().unwrap() > 0.0);
    assert!(v["runtime_s"].as_f64().is_some());
}

#[test]
fn verify_reports_no_asserted_violations() {
    let dir = TempDir::new().unwrap();
    let out = qlbgk(&["verify", "--seed", "42", "--samples", "100", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    let results: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(results.len(), 12);
    for r in &results {
        if r["asserted"] == true {
            assert_eq!(r["violations"], 0, "{r}");
        }
        assert_eq!(r["seed"], 42);
    }
    let empty = qlbgk(&["verify", "--seed", "1", "--samples", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(empty.status.code(), Some(0));
    assert!(std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap().is_empty());
}
