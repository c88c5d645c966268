use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overlay-sim")).args(args).output().expect("spawn overlay-sim")
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("overlay-sim-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_primary_only() {
    let text = stdout(&["simulate", "--n", "300", "--primary-only", "--frames", "40", "--phy-stride", "20"]);
    assert!(text.lines().next().unwrap().starts_with("{\"header\""));
    let v: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(v["secondary"].is_null());
    assert_eq!(v["n"], 300.0);
    assert_eq!(v["primary"]["cells_per_side"], 7);
    assert_eq!(v["bound_violations"], 0);
}

#[test]
fn invalid_parameters_exit_nonzero() {
    let out = run(&["simulate", "--beta", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
    assert!(!run(&["simulate", "--n", "abc"]).status.success());
    assert!(!run(&["paths"]).status.success());
}

#[test]
fn bounds_table() {
    let text = stdout(&["bounds"]);
    for key in ["I_p_bound", "I_sp_bound", "I_ps_bound", "I_s_bound", "K1", "K2"] {
        assert!(text.contains(key), "{key} missing");
    }
    let csv_row = text.lines().last().unwrap();
    let first: f64 = csv_row.split(',').next().unwrap().parse().unwrap();
    assert!((first - 0.108_587_123_868_401_4).abs() < 1e-12);
}

#[test]
fn mask_dump_is_a_pbm() {
    let text = stdout(&["mask-dump", "--n", "500", "--slot", "3"]);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("P1"));
    assert_eq!(lines.next(), Some("35 35"));
    let bits: Vec<char> = text.lines().skip(2).flat_map(|l| l.chars().filter(|c| !c.is_whitespace())).collect();
    assert_eq!(bits.len(), 35 * 35);
    assert!(bits.iter().all(|b| *b == '0' || *b == '1'));
    assert!(bits.contains(&'1') && bits.contains(&'0'));
}

#[test]
fn paths_csv() {
    let text = stdout(&["paths", "--n", "300", "--primary-only", "--dump"]);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("pair_id,tier,step,row,col"));
    assert!(lines.all(|l| l.split(',').count() == 5 && l.contains(",primary,")));
}

#[test]
fn deployment_export_to_file() {
    let dir = scratch("export");
    let path = dir.join("dep.txt");
    stdout(&["deployment", "export", "--n", "20", "--seed", "11", "--out", path.to_str().unwrap()]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# overlay-deployment n=20"));
    let golden = include_str!("../../core/tests/data/golden_deployment.txt");
    assert_eq!(text, golden);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sweep_then_analyze() {
    let dir = scratch("sweep");
    let out = dir.join("run");
    let cfg = dir.join("small.conf");
    std::fs::write(&cfg, "# small desk sweep\nn = 300,400,500\nseeds = 1\nframes = 50\nphy-stride = 25\npacket_interval = 10\n").unwrap();
    stdout(&["sweep", "--config", cfg.to_str().unwrap(), "--plots", "--quiet", "--out", out.to_str().unwrap()]);
    for f in ["metrics.jsonl", "summary.csv", "fits.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let svgs = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count();
    assert_eq!(svgs, 6);
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().filter(|l| !l.starts_with("{\"header\"")).count(), 3);

    let report = dir.join("report.json");
    let table = stdout(&[
        "analyze",
        "--in",
        out.join("metrics.jsonl").to_str().unwrap(),
        "--fit",
        "lambda_p,d_p",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(table.contains("lambda_p") && table.contains("tradeoff spread primary"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["fits"].as_array().unwrap().len(), 2);
    assert!(!run(&["analyze", "--in", dir.join("missing.jsonl").to_str().unwrap()]).status.success());
    let _ = std::fs::remove_dir_all(&dir);
}
