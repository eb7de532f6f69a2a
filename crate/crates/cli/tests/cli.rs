use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibf-lab"))
        .args(args)
        .env("IBF_THREADS", "1")
        .output()
        .expect("ibf-lab runs")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&o.stdout));
    })
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn describe_prints_model_json() {
    let o = lab(&["model", "describe", "--d", "3", "--alpha", "1"]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    assert_eq!(v["d"], 3);
    assert_eq!(v["beta_L"], 3.0);
    assert_eq!(v["lyapunov"], serde_json::json!([-0.5, -2.5, -4.5]));
    assert_eq!(v["volume_preserving"], false);
}

#[test]
fn set_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    std::fs::write(&cfg, "[model]\nd = 2\nalpha = 0.25\nell = 2.0\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let v = stdout_json(&lab(&["model", "describe", "--config", cfg]));
    assert_eq!((v["alpha"].as_f64(), v["ell"].as_f64()), (Some(0.25), Some(2.0)));
    let v = stdout_json(&lab(&["model", "describe", "--config", cfg, "--set", "model.alpha=0.5"]));
    assert_eq!(v["alpha"], 0.5);
    assert_eq!(v["ell"], 2.0);
}

#[test]
fn bad_input_exits_with_two() {
    for args in [
        &["model", "describe", "--alpha", "2"][..],
        &["simulate", "--format", "binary"],
        &["lyapunov", "--set", "replicates=1"],
        &["run"],
    ] {
        let o = lab(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
}

#[test]
fn failed_checks_exit_with_one() {
    let o = lab(&["psi", "check-asymptotics", "--tolerance", "1e-12"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout_json(&o)["pass"], false);
    let o = lab(&["psi", "check-asymptotics"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["pass"], true);
}

#[test]
fn simulate_writes_csv_and_binary() {
    let base = ["simulate", "-n", "3", "--dt", "0.05", "-T", "0.1", "--replicates", "2"];
    let o = lab(&base);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "replicate,t,particle,x1,x2");
    // 2 replicates, 2 save times, 3 particles
    assert_eq!(lines.len(), 1 + 2 * 2 * 3);
    assert_eq!(lab(&base).stdout, text.as_bytes(), "not reproducible");

    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("s.bin");
    let mut args = base.to_vec();
    args.extend(["--format", "binary", "-o", bin.to_str().unwrap()]);
    assert!(lab(&args).status.success());
    let snaps = ibf_core::simcore::read_binary(std::fs::File::open(&bin).unwrap()).unwrap();
    assert_eq!(snaps.len(), 4);
    assert!(snaps.iter().all(|s| s.d == 2 && s.positions.len() == 6));
}

#[test]
fn simulate_reads_initial_points() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("p.csv");
    std::fs::write(&pts, "x,y,z\n0,0,0\n1,0,0\n").unwrap();
    let p = pts.to_str().unwrap();
    let o = lab(&["simulate", "--d", "3", "--initial", p, "-T", "0.1", "--dt", "0.1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(2).unwrap().starts_with("0,0,1,1,0,0"), "{text}");
    // dimension mismatch
    assert_eq!(lab(&["simulate", "--initial", p]).status.code(), Some(2));
}

#[test]
fn preset_output_is_a_runnable_config() {
    let o = lab(&["preset", "lyapunov"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("experiment = \"lyapunov\""));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("l.toml");
    std::fs::write(&cfg, &text).unwrap();
    let out = dir.path().join("out");
    let o = lab(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "horizon=0.5",
        "--set",
        "dt=0.01",
        "--set",
        "replicates=4",
        "--out",
        out.to_str().unwrap(),
        "--svg",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "run_info.json", "exponents.csv", "series.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let r = read_json(&out.join("report.json"));
    assert_eq!(r["config"]["replicates"], 4);
    assert_eq!(read_json(&out.join("run_info.json"))["threads"], 1);
}

#[test]
fn experiment_subcommands_check_the_config_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("l.toml");
    std::fs::write(&cfg, lab(&["preset", "lyapunov"]).stdout).unwrap();
    let o = lab(&["dispersion", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn geometry_extract_reads_a_polyline() {
    let dir = tempfile::tempdir().unwrap();
    let poly = dir.path().join("poly.csv");
    let mut text = String::from("x,y\n");
    for i in 0..=30 {
        text += &format!("{i},0\n");
    }
    for j in 1..=30 {
        text += &format!("30,{j}\n");
    }
    std::fs::write(&poly, text).unwrap();
    let domain = r#"{"kind":"ball","center":[0,0],"radius":100}"#;
    let o = lab(&[
        "geometry",
        "extract",
        "--polyline",
        poly.to_str().unwrap(),
        "--length",
        "24",
        "--domain",
        domain,
        "--samples",
        "2000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let names: Vec<&str> = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["total_length", "disjoint", "contained"]);
    assert_eq!(v["inputs"]["polyline"].as_array().unwrap().len(), 60);

    let o = lab(&[
        "geometry",
        "extract",
        "--polyline",
        poly.to_str().unwrap(),
        "--length",
        "24",
        "--domain",
        "{not json",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
