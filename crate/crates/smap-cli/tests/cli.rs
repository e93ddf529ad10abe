use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn smap(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smap")).args(args).arg("--out").arg(out).env_remove("SMAP_THREADS").output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Header and numeric rows, skipping `#` lines.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn profiles_writes_tables_and_report_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = smap(&["profiles", "--b", "1e-3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&dir.path().join("profiles.csv"));
    assert_eq!(header.join(","), "y,T1,Sigma_b,T02,T11,T20,T03,S02,alpha0,beta0,gamma0");
    assert_eq!(rows.len(), 5000);
    let first = std::fs::read_to_string(dir.path().join("residual.csv")).unwrap();
    assert!(first.starts_with("# manifest {"));
    let report = json(&dir.path().join("profile_report.json"));
    assert_eq!(report["manifest"]["command"], "profiles");
    assert_eq!(report["manifest"]["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["flux"]["pass"], true);
    assert_eq!(report["slope_checks"].as_array().unwrap().len(), 2);
}

#[test]
fn profiles_guards_exit_with_parameter_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(smap(&["profiles", "--b", "0.5"], dir.path()).status.code(), Some(2));
    assert_eq!(smap(&["profiles", "--b", "1e-3", "--a", "1e-3"], dir.path()).status.code(), Some(2));
    assert_eq!(smap(&["profiles", "--b", "nope"], dir.path()).status.code(), Some(2));
}

#[test]
fn leading_law_follows_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smap(&["ode", "--b0", "1e-2", "--a0", "0", "--law", "leading"], dir.path()).status.success());
    let (header, rows) = table(&dir.path().join("ode_trajectory.csv"));
    assert_eq!(header.join(","), "s,t,lambda,Theta,a,b,kappa");
    let (s, b) = (column(&header, "s"), column(&header, "b"));
    for r in &rows {
        assert!((r[b] * (r[s] + 100.0) - 1.0).abs() < 1e-8);
    }
}

#[test]
fn off_separatrix_data_escape() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smap(&["ode", "--b0", "1e-2", "--a0", "2.5e-3"], dir.path()).status.success());
    let report = json(&dir.path().join("ode_report.json"));
    assert_eq!(report["escaped"], true);
    assert!(report["escape_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn shooting_keeps_kappa_inside_the_tube() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smap(&["shoot", "--b0", "1e-2"], dir.path()).status.success());
    let report = json(&dir.path().join("shooting_report.json"));
    assert_eq!(report["status"], "ok");
    assert!(report["max_abs_kappa"].as_f64().unwrap() < 1.0);
    assert!(!report["kappa_history"].as_array().unwrap().is_empty());
    assert!(report["blowup_fit"]["kappa"].as_f64().is_some());
}

#[test]
fn shooting_outside_the_guard_is_a_parameter_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(smap(&["shoot", "--b0", "0.5"], dir.path()).status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"b0": 2e-2, "a0": 0.0, "law": "leading", "s_end": 50.0}"#).unwrap();
    let out = dir.path().join("o");
    assert!(smap(&["ode", "--config", cfg.to_str().unwrap(), "--s-end", "10"], &out).status.success());
    let report = json(&out.join("ode_report.json"));
    assert_eq!(report["manifest"]["config"]["b0"], 2e-2);
    assert_eq!(report["manifest"]["config"]["s_end"], 10.0);
    assert_eq!(report["manifest"]["config"]["law"], "leading");

    std::fs::write(&cfg, r#"{"b0": 2e-2, "typo": 1}"#).unwrap();
    assert_eq!(smap(&["ode", "--config", cfg.to_str().unwrap()], &out).status.code(), Some(2));
}

#[test]
fn evolve_snapshots_decompose_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = smap(&["evolve", "--b0", "0.05", "--a0", "shoot", "--t-end", "1", "--snapshot-every", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&dir.path().join("trajectory.csv"));
    assert_eq!(header.join(","), "t,s,lambda,Theta,a,b,E,E1,E2,E4,sphere_violation");
    let e = column(&header, "E");
    assert!(rows.iter().all(|r| (r[e] / rows[0][e] - 1.0).abs() < 1e-6));
    let report = json(&dir.path().join("run_report.json"));
    assert_eq!(report["outcome"]["kind"], "time_limit");

    let snap = dir.path().join("snapshots/snapshot_0000.csv");
    let text = std::fs::read_to_string(&snap).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("# t=0 N=1200"));
    let out = dir.path().join("d");
    assert!(smap(&["decompose", "--snapshot", snap.to_str().unwrap()], &out).status.success());
    let d = json(&out.join("decomposition.json"));
    assert!((d["lambda"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert!((d["b"].as_f64().unwrap() - 0.05).abs() < 1e-8);
}

#[test]
fn synthesized_decomposition_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["decompose", "--lambda", "1.3", "--theta", "0.2", "--a", "0.001", "--b", "0.03"];
    assert!(smap(&args, dir.path()).status.success());
    let d = json(&dir.path().join("decomposition.json"));
    for (k, v) in [("lambda", 1.3), ("theta", 0.2), ("a", 0.001), ("b", 0.03)] {
        assert!((d[k].as_f64().unwrap() - v).abs() < 1e-8, "{k}");
    }
    let (header, _) = table(&dir.path().join("radiation.csv"));
    assert_eq!(header.join(","), "y,alpha,beta,gamma");
}

#[test]
fn verify_reports_are_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(smap(&["verify", "--suite", "hardy", "--seed", "11", "--samples", "16"], out).status.success());
    }
    let read = |p: &Path| std::fs::read(p.join("verification_report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let report = json(&a.join("verification_report.json"));
    let first = &report["results"][0];
    for key in ["name", "reference", "estimated_constant", "grid", "n_samples", "pass"] {
        assert!(!first[key].is_null(), "{key}");
    }
}

#[test]
fn j_bound_suite_passes_under_both_names() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["jbound", "appendixc"] {
        assert!(smap(&["verify", "--suite", suite], dir.path()).status.success());
        let report = json(&dir.path().join("verification_report.json"));
        assert!(report["results"][0]["estimated_constant"].as_f64().unwrap() < 1.0);
    }
}

#[test]
fn failed_verification_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = smap(&["verify", "--suite", "flux", "--flux-grid-n", "100"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(json(&dir.path().join("verification_report.json"))["pass"], false);
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_smap")).args(["verify", "--suite", "jbound", "--out"]).arg(dir.path()).env("SMAP_THREADS", v).output().unwrap().status.code()
    };
    assert_eq!(run("2"), Some(0));
    assert_eq!(run("zero"), Some(2));
}
