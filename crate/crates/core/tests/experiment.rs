use std::path::PathBuf;

use overlay_core::analysis::Metric;
use overlay_core::experiment::{
    analyze, metrics_body, metrics_jsonl, read_metrics, run_experiment, run_sweep, summary_csv, ExperimentSpec, RunHeader,
    SUMMARY_COLUMNS,
};
use overlay_core::NetworkConfig;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("overlay-core-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        base: NetworkConfig { frames: 60, phy_stride: 30, packet_interval: 10, ..NetworkConfig::default() },
        sweep: vec![300.0, 400.0, 500.0],
        seeds: 2,
        ..ExperimentSpec::default()
    }
}

#[test]
fn metrics_round_trip_through_jsonl() {
    let spec = small_spec();
    let runs = run_sweep(&spec, false, None).unwrap();
    assert_eq!(runs.len(), 6);
    let records: Vec<_> = runs.into_iter().map(|r| r.metrics).collect();
    let text = metrics_jsonl(&RunHeader::now(&spec), &records);
    assert!(text.lines().next().unwrap().starts_with("{\"header\""));
    let back = read_metrics(&text).unwrap();
    assert_eq!(back.len(), records.len());
    assert_eq!(metrics_body(&back), metrics_body(&records));
    assert!(read_metrics("{not json").is_err());
}

#[test]
fn summary_has_fixed_columns() {
    let spec = ExperimentSpec { sweep: vec![300.0], seeds: 1, ..small_spec() };
    let records: Vec<_> = run_sweep(&spec, false, None).unwrap().into_iter().map(|r| r.metrics).collect();
    let csv = summary_csv(&records);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), SUMMARY_COLUMNS.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), SUMMARY_COLUMNS.len());
    assert_eq!(row[0].parse::<f64>().unwrap(), 300.0);
    assert!(lines.next().is_none());
}

#[test]
fn sweeps_are_reproducible_and_order_free() {
    let spec = small_spec();
    let a: Vec<_> = run_sweep(&spec, false, None).unwrap().into_iter().map(|r| r.metrics).collect();
    let reversed = ExperimentSpec { sweep: vec![500.0, 300.0, 400.0], ..small_spec() };
    let b: Vec<_> = run_sweep(&reversed, false, None).unwrap().into_iter().map(|r| r.metrics).collect();
    assert_eq!(metrics_body(&a), metrics_body(&b));
    let ns: Vec<f64> = a.iter().map(|r| r.n).collect();
    assert_eq!(ns, [300.0, 300.0, 400.0, 400.0, 500.0, 500.0]);
    assert_eq!(a[0].seed + 1, a[1].seed);
}

#[test]
fn experiment_writes_artifacts() {
    let dir = scratch("artifacts");
    let spec = ExperimentSpec { out_dir: dir.clone(), plots: true, per_pair: Some(dir.join("pairs.csv")), ..small_spec() };
    let (art, report) = run_experiment(&spec, None).unwrap();
    assert!(art.metrics.exists() && art.summary.exists());
    assert!(art.report.as_ref().unwrap().exists());
    assert_eq!(art.plots.len(), 6);
    let pairs = std::fs::read_to_string(dir.join("pairs.csv")).unwrap();
    assert!(pairs.lines().count() > 1);
    assert_eq!(report.fits.len(), 4);
    assert_eq!(report.sweep.points.len(), 3);
    let records = read_metrics(&std::fs::read_to_string(&art.metrics).unwrap()).unwrap();
    let again = analyze(&records, &[Metric::LambdaP]);
    assert_eq!(again.fits.len(), 1);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_text_sets_fields() {
    let mut spec = ExperimentSpec::default();
    spec.apply_file_text("# comment\nn = 700, 900\nbeta=2.0\nprimary-only = yes\nwindow_clusters=none\n\nseeds=3 # trailing\n").unwrap();
    assert_eq!(spec.sweep, [700.0, 900.0]);
    assert_eq!(spec.base.beta, 2.0);
    assert!(spec.base.primary_only);
    assert_eq!(spec.base.window_clusters, None);
    assert_eq!(spec.seeds, 3);
    assert!(spec.apply_file_text("bogus=1").is_err());
    assert!(spec.apply_file_text("frames").is_err());
    assert!(spec.apply("beta", "x").is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ExperimentSpec { sweep: vec![], ..ExperimentSpec::default() }.validate().is_err());
    assert!(ExperimentSpec { seeds: 0, ..ExperimentSpec::default() }.validate().is_err());
    let mut bad = ExperimentSpec::default();
    bad.base.beta = 0.5;
    assert!(bad.validate().is_err());
    assert!(ExperimentSpec::default().validate().is_ok());
}
