//! Sweep execution and the on-disk artifacts: JSON-lines metrics, CSV
//! summaries, fit reports, and text diagnostics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::analysis::{sweep_tradeoff, validate_occupancy, FitReport, Metric, OccupancyReport, SweepResult, TradeoffReport};
use crate::config::NetworkConfig;
use crate::error::{Result, SimError};
use crate::flow::{run_frames, tier_paths, MetricsRecord, PairDetail, Realization};
use crate::geometry::{generate_deployment, Deployment};
use crate::protocol::Schedule;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "OVERLAY_SIM_THREADS";

/// Everything needed to run and record a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: NetworkConfig,
    /// Primary densities to simulate.
    pub sweep: Vec<f64>,
    /// Realizations per density. Seeds run from `base.seed` upwards.
    pub seeds: u32,
    pub out_dir: PathBuf,
    pub validate_bounds: bool,
    pub per_pair: Option<PathBuf>,
    pub plots: bool,
}

impl Default for ExperimentSpec {
    /// Desk-scale defaults. Rates are sampled every 40th frame and sources
    /// emit every 50th frame, which keeps a four-point sweep of 20 seeds
    /// within minutes while leaving every metric well populated.
    fn default() -> Self {
        Self {
            base: NetworkConfig { phy_stride: 40, packet_interval: 50, ..NetworkConfig::default() },
            sweep: vec![500.0, 1000.0, 2000.0, 4000.0],
            seeds: 20,
            out_dir: PathBuf::from("out"),
            validate_bounds: false,
            per_pair: None,
            plots: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(SimError::Config("sweep list is empty".into()));
        }
        if self.seeds == 0 {
            return Err(SimError::Config("seeds must be >= 1".into()));
        }
        for cfg in self.configs() {
            cfg.validate()?;
        }
        Ok(())
    }

    /// One config per (n, seed), ordered by n then seed.
    pub fn configs(&self) -> Vec<NetworkConfig> {
        let mut ns = self.sweep.clone();
        ns.sort_by(f64::total_cmp);
        ns.dedup();
        ns.iter()
            .flat_map(|&n| {
                (0..self.seeds as u64).map(move |s| NetworkConfig { n, seed: self.base.seed + s, ..self.base.clone() })
            })
            .collect()
    }

    /// Applies one `key=value` setting. Keys match the long CLI flags, with
    /// `-` and `_` interchangeable.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let num = |v: &str| -> Result<f64> { v.parse::<f64>().map_err(|_| SimError::Parse(format!("`{key}`: bad number `{v}`"))) };
        let int = |v: &str| -> Result<u64> { v.parse::<u64>().map_err(|_| SimError::Parse(format!("`{key}`: bad integer `{v}`"))) };
        let flag = |v: &str| -> Result<bool> {
            match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(SimError::Parse(format!("`{key}`: bad boolean `{v}`"))),
            }
        };
        let b = &mut self.base;
        match key.as_str() {
            "n" | "sweep" => self.sweep = parse_list(value)?,
            "beta" => b.beta = num(value)?,
            "k1" => b.k1 = num(value)?,
            "k2" => b.k2 = num(value)?,
            "alpha" => b.alpha = num(value)?,
            "a" => b.a = num(value)?,
            "p0" => b.p0 = num(value)?,
            "p1" => b.p1 = num(value)?,
            "n0" => b.n0 = num(value)?,
            "tp" => b.tp = num(value)?,
            "frames" => b.frames = int(value)? as u32,
            "seed" => b.seed = int(value)?,
            "seeds" => self.seeds = int(value)? as u32,
            "primary_only" => b.primary_only = flag(value)?,
            "preservation" => b.preservation = value.parse()?,
            "rx_guard" => b.rx_guard = flag(value)?,
            "warmup_frames" => b.warmup_frames = int(value)? as u32,
            "packet_interval" => b.packet_interval = int(value)? as u32,
            "phy_stride" => b.phy_stride = int(value)? as u32,
            "window_clusters" => {
                b.window_clusters = if value == "none" { None } else { Some(int(value)? as u32) };
            }
            "validate_bounds" => self.validate_bounds = flag(value)?,
            "per_pair" => self.per_pair = Some(PathBuf::from(value)),
            "plots" => self.plots = flag(value)?,
            "out" => self.out_dir = PathBuf::from(value),
            other => return Err(SimError::Parse(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SimError::Parse(format!("line {}: expected key=value", no + 1)))?;
            self.apply(k, v).map_err(|e| SimError::Parse(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }
}

/// Parses `500,1000,2000`.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| SimError::Parse(format!("bad list entry `{t}`"))))
        .collect()
}

/// Generates the deployment and runs one realization.
pub fn run_one(config: &NetworkConfig) -> Result<Realization> {
    let dep = generate_deployment(config)?;
    run_frames(&dep, config)
}

fn worker_count(jobs: usize) -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&v| v > 0);
    cap.unwrap_or(avail).min(jobs).max(1)
}

/// Runs every (n, seed) of the spec. Results come back ordered by n then
/// seed regardless of how many workers ran them. Per-pair details are
/// dropped unless `keep_pairs` is set. `progress` sees each record as it
/// completes.
pub fn run_sweep(spec: &ExperimentSpec, keep_pairs: bool, progress: Option<&(dyn Fn(&MetricsRecord) + Sync)>) -> Result<Vec<Realization>> {
    spec.validate()?;
    let configs = spec.configs();
    // largest densities first so the slowest jobs do not trail
    let mut order: Vec<usize> = (0..configs.len()).collect();
    order.sort_by(|&a, &b| configs[b].n.total_cmp(&configs[a].n).then(a.cmp(&b)));
    let results: Mutex<Vec<Option<Result<Realization>>>> = Mutex::new(vec![None; configs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(configs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&job) = order.get(k) else { break };
                let mut r = run_one(&configs[job]);
                if let Ok(real) = r.as_mut() {
                    if !keep_pairs {
                        real.pairs = Vec::new();
                    }
                    if let Some(cb) = progress {
                        cb(&real.metrics);
                    }
                }
                results.lock().expect("collector poisoned")[job] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("collector poisoned")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Header line of a metrics file. Kept apart from the body so that the body
/// is reproducible byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub unix_time: u64,
    pub spec: ExperimentSpec,
}

impl RunHeader {
    pub fn now(spec: &ExperimentSpec) -> Self {
        let unix_time = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self { tool: "overlay-sim".into(), version: env!("CARGO_PKG_VERSION").into(), unix_time, spec: spec.clone() }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: RunHeader,
}

/// One JSON object per record, newline terminated.
pub fn metrics_body(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

/// Header line followed by the metrics body.
pub fn metrics_jsonl(header: &RunHeader, records: &[MetricsRecord]) -> String {
    let mut out = serde_json::to_string(&HeaderLine { header: header.clone() }).expect("header serialize");
    out.push('\n');
    out.push_str(&metrics_body(records));
    out
}

/// Reads records from JSON-lines text, skipping header lines.
pub fn read_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("{\"header\"") {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| SimError::Parse(format!("line {}: {e}", no + 1)))?);
    }
    Ok(out)
}

pub const SUMMARY_COLUMNS: [&str; 16] = [
    "n",
    "m",
    "seed",
    "lambda_p_min",
    "lambda_p_mean",
    "T_p",
    "D_p",
    "lambda_s_min",
    "lambda_s_mean",
    "T_s",
    "D_s",
    "eta_min",
    "eta_max",
    "outage_s",
    "bound_violations",
    "stalled_paths",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Per-realization summary. `T_*` is the sum throughput; `stalled_paths`
/// counts both tiers. Absent values are empty fields.
pub fn summary_csv(records: &[MetricsRecord]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let s = r.secondary.as_ref();
        let stalled = r.primary.stalled_paths + s.map_or(0, |t| t.stalled_paths);
        let fields = [
            format!("{:?}", r.n),
            format!("{:?}", r.m),
            r.seed.to_string(),
            cell(r.primary.lambda_min),
            cell(r.primary.lambda_mean),
            cell(r.primary.sum_throughput),
            cell(r.primary.mean_delay),
            cell(s.and_then(|t| t.lambda_min)),
            cell(s.and_then(|t| t.lambda_mean)),
            cell(s.and_then(|t| t.sum_throughput)),
            cell(s.and_then(|t| t.mean_delay)),
            cell(r.eta_min),
            cell(r.eta_max),
            s.map(|t| t.outage.to_string()).unwrap_or_default(),
            r.bound_violations.to_string(),
            stalled.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Per-pair detail of every realization.
pub fn pairs_csv(realizations: &[Realization]) -> String {
    let mut out = String::from("n,seed,tier,pair,src,dst,hops,stalled,throughput,mean_delay,delivered\n");
    for r in realizations {
        for p in &r.pairs {
            let PairDetail { tier, pair, src, dst, hops, stalled, throughput, mean_delay, delivered } = p;
            let _ = writeln!(
                out,
                "{:?},{},{},{pair},{src},{dst},{hops},{stalled},{},{},{delivered}",
                r.metrics.n,
                r.metrics.seed,
                tier.as_str(),
                cell(*throughput),
                cell(*mean_delay)
            );
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitEntry {
    pub metric: Metric,
    pub predictor: crate::analysis::Predictor,
    pub fit: Option<FitReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub sweep: SweepResult,
    pub fits: Vec<FitEntry>,
    pub tradeoff_primary: TradeoffReport,
    pub tradeoff_secondary: Option<TradeoffReport>,
    pub occupancy: Vec<OccupancyReport>,
}

/// Fits each requested metric against its default predictor and checks the
/// delay-throughput tradeoff on both tiers.
pub fn analyze(records: &[MetricsRecord], metrics: &[Metric]) -> AnalysisReport {
    let sweep = SweepResult::from_records(records);
    let fits = metrics
        .iter()
        .map(|&metric| {
            let predictor = metric.default_predictor();
            match sweep.fit(metric, predictor) {
                Ok(f) => FitEntry { metric, predictor, fit: Some(f), error: None },
                Err(e) => FitEntry { metric, predictor, fit: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let has_secondary = sweep.points.iter().any(|p| p.lambda_s.is_some());
    AnalysisReport {
        tradeoff_primary: sweep_tradeoff(&sweep, false),
        tradeoff_secondary: has_secondary.then(|| sweep_tradeoff(&sweep, true)),
        sweep,
        fits,
        occupancy: Vec::new(),
    }
}

/// Human-readable fit table.
pub fn fit_table(report: &AnalysisReport) -> String {
    let mut out = format!("{:<10} {:<16} {:>9} {:>9} {:>8} {:>6}\n", "metric", "predictor", "slope", "ci95", "r2", "points");
    for f in &report.fits {
        let pred = serde_json::to_value(f.predictor).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        match (&f.fit, &f.error) {
            (Some(r), _) => {
                let _ = writeln!(
                    out,
                    "{:<10} {:<16} {:>9.4} {:>9.4} {:>8.4} {:>6}",
                    f.metric.name(),
                    pred,
                    r.slope,
                    r.ci95,
                    r.r_squared,
                    r.points
                );
            }
            (None, e) => {
                let _ = writeln!(out, "{:<10} {:<16} {}", f.metric.name(), pred, e.as_deref().unwrap_or("no fit"));
            }
        }
    }
    let _ = writeln!(out, "tradeoff spread primary: {:.4}", report.tradeoff_primary.spread);
    if let Some(t) = &report.tradeoff_secondary {
        let _ = writeln!(out, "tradeoff spread secondary: {:.4}", t.spread);
    }
    out
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub report: Option<PathBuf>,
    pub per_pair: Option<PathBuf>,
    pub plots: Vec<PathBuf>,
    /// Bound violations summed over realizations, plus failed occupancy
    /// events when validators are on.
    pub violations: u64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
}

/// Runs the sweep and writes `metrics.jsonl`, `summary.csv`, and, for
/// sweeps with at least three densities, `fits.json` and optional plots.
pub fn run_experiment(spec: &ExperimentSpec, progress: Option<&(dyn Fn(&MetricsRecord) + Sync)>) -> Result<(Artifacts, AnalysisReport)> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| SimError::Io(format!("{}: {e}", spec.out_dir.display())))?;
    let header = RunHeader::now(spec);
    let runs = run_sweep(spec, spec.per_pair.is_some(), progress)?;
    let records: Vec<MetricsRecord> = runs.iter().map(|r| r.metrics.clone()).collect();

    let mut art = Artifacts {
        metrics: spec.out_dir.join("metrics.jsonl"),
        summary: spec.out_dir.join("summary.csv"),
        ..Default::default()
    };
    write(&art.metrics, &metrics_jsonl(&header, &records))?;
    write(&art.summary, &summary_csv(&records))?;
    if let Some(p) = &spec.per_pair {
        write(p, &pairs_csv(&runs))?;
        art.per_pair = Some(p.clone());
    }
    art.violations = records.iter().map(|r| r.bound_violations).sum();

    let metrics: Vec<Metric> = if spec.base.primary_only {
        vec![Metric::LambdaP, Metric::DelayP]
    } else {
        vec![Metric::LambdaP, Metric::DelayP, Metric::LambdaS, Metric::DelayS]
    };
    let mut report = analyze(&records, &metrics);
    if spec.validate_bounds {
        for cfg in spec.configs().iter().filter(|c| c.seed == spec.base.seed) {
            let occ = validate_occupancy(cfg.n, cfg.k1, 200, cfg.seed)?;
            art.violations += occ.events.iter().filter(|e| !e.within).count() as u64;
            report.occupancy.push(occ);
        }
    }
    if report.sweep.points.len() >= 3 || spec.validate_bounds {
        let path = spec.out_dir.join("fits.json");
        write(&path, &serde_json::to_string_pretty(&report).expect("report serialize"))?;
        art.report = Some(path);
    }
    if spec.plots {
        art.plots = crate::plot::emit_plots(&report.sweep, &spec.out_dir)?;
    }
    Ok((art, report))
}

/// Preservation mask of one primary slot as a plain PBM (`P1`) bitmap. Row 0
/// of the image is the top row of cells; `1` marks a preserved cell.
pub fn mask_pbm(schedule: &Schedule, slot: usize) -> String {
    let c = schedule.secondary.cells_per_side;
    let mask = schedule.mask(slot);
    let mut out = format!("P1\n{c} {c}\n");
    for row in (0..c).rev() {
        let line: String = (0..c).map(|col| if mask[row * c + col] { '1' } else { '0' }).collect();
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Cell sequences of every pair: `pair_id,tier,step,row,col`.
pub fn paths_csv(dep: &Deployment) -> String {
    let mut out = String::from("pair_id,tier,step,row,col\n");
    for t in dep.tiers() {
        for (pid, cells) in tier_paths(t) {
            for (step, c) in cells.iter().enumerate() {
                let _ = writeln!(out, "{pid},{},{step},{},{}", t.tier.as_str(), c.row, c.col);
            }
        }
    }
    out
}
