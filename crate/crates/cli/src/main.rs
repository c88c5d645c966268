use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overlay_core::analysis::Metric;
use overlay_core::experiment::{
    analyze, fit_table, mask_pbm, metrics_jsonl, pairs_csv, parse_list, paths_csv, read_metrics, run_experiment, run_one,
    ExperimentSpec, RunHeader,
};
use overlay_core::geometry::generate_deployment;
use overlay_core::phy::bound_set;
use overlay_core::protocol::{Schedule, SLOTS};
use overlay_core::{NetworkConfig, PreservationMode, Result, SimError};

#[derive(Parser)]
#[command(name = "overlay-sim", version, about = "Two-tier overlay wireless network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one realization and print its metrics record.
    Simulate(SimulateArgs),
    /// Run every (n, seed) of a sweep and write metrics, summary and fits.
    Sweep(SweepArgs),
    /// Fit scaling exponents from an existing metrics file.
    Analyze(AnalyzeArgs),
    /// Print the analytic interference bounds and rate floors.
    Bounds(BoundsArgs),
    /// Print the preservation mask of one primary slot as a PBM bitmap.
    MaskDump(MaskArgs),
    /// Print per-pair cell paths as CSV.
    Paths(PathsArgs),
    /// Deployment import/export.
    #[command(subcommand)]
    Deployment(DeploymentCmd),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Primary density, or a comma-separated list for sweeps.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    n0: Option<f64>,
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the secondary tier.
    #[arg(long)]
    primary_only: bool,
    /// Evaluate link rates every k-th frame.
    #[arg(long)]
    phy_stride: Option<u32>,
    /// Sources emit one packet every k frames.
    #[arg(long)]
    packet_interval: Option<u32>,
    /// Exact interference window in clusters, or `none`.
    #[arg(long)]
    window: Option<String>,
    #[arg(long, value_parser = ["lattice", "clipped"])]
    preservation: Option<String>,
    /// Disable the secondary receiver guard.
    #[arg(long)]
    no_rx_guard: bool,
}

impl ConfigArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
            spec.apply_file_text(&text)?;
        }
        let set = |spec: &mut ExperimentSpec, k: &str, v: Option<String>| v.map_or(Ok(()), |v| spec.apply(k, &v));
        set(&mut spec, "n", self.n.clone())?;
        set(&mut spec, "beta", self.beta.map(|v| v.to_string()))?;
        set(&mut spec, "k1", self.k1.map(|v| v.to_string()))?;
        set(&mut spec, "k2", self.k2.map(|v| v.to_string()))?;
        set(&mut spec, "alpha", self.alpha.map(|v| v.to_string()))?;
        set(&mut spec, "p0", self.p0.map(|v| v.to_string()))?;
        set(&mut spec, "p1", self.p1.map(|v| v.to_string()))?;
        set(&mut spec, "n0", self.n0.map(|v| v.to_string()))?;
        set(&mut spec, "frames", self.frames.map(|v| v.to_string()))?;
        set(&mut spec, "seed", self.seed.map(|v| v.to_string()))?;
        set(&mut spec, "phy_stride", self.phy_stride.map(|v| v.to_string()))?;
        set(&mut spec, "packet_interval", self.packet_interval.map(|v| v.to_string()))?;
        set(&mut spec, "window_clusters", self.window.clone())?;
        set(&mut spec, "preservation", self.preservation.clone())?;
        if self.primary_only {
            spec.base.primary_only = true;
        }
        if self.no_rx_guard {
            spec.base.rx_guard = false;
        }
        Ok(spec)
    }

    /// Single-run config: the first density of the list.
    fn single(&self) -> Result<NetworkConfig> {
        let spec = self.spec()?;
        let n = if self.n.is_some() || self.config.is_some() { spec.sweep[0] } else { NetworkConfig::default().n };
        let cfg = NetworkConfig { n, ..spec.base };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Write per-pair detail CSV here.
    #[arg(long)]
    per_pair: Option<PathBuf>,
    /// Write the record here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated densities (same as --n).
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    seeds: Option<u32>,
    /// Metrics to fit: `all` or a comma-separated list.
    #[arg(long, default_value = "all")]
    fit: String,
    /// Also run occupancy validators and fail on any bound violation.
    #[arg(long)]
    validate_bounds: bool,
    #[arg(long)]
    per_pair: Option<PathBuf>,
    /// Write SVG plots into the output directory.
    #[arg(long)]
    plots: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress per-realization progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Metrics JSON-lines file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "all")]
    fit: String,
    /// Write the fit report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write SVG plots into this directory.
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 4.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    p0: f64,
    #[arg(long, default_value_t = 1.0)]
    p1: f64,
    #[arg(long, default_value_t = 1.0)]
    n0: f64,
}

#[derive(Args)]
struct MaskArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    slot: usize,
}

#[derive(Args)]
struct PathsArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Emit the CSV (the only mode).
    #[arg(long)]
    dump: bool,
}

#[derive(Subcommand)]
enum DeploymentCmd {
    /// Write a generated deployment in the plain-text format.
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_metrics(s: &str) -> Result<Vec<Metric>> {
    if s == "all" {
        return Ok(Metric::ALL.to_vec());
    }
    s.split(',').map(|t| t.trim().parse()).collect()
}

/// Writes to standard output. A closed pipe (e.g. `| head`) is not an error.
fn out(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| SimError::Io(format!("{}: {e}", p.display()))),
        None => out(text),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Command::Simulate(a) => {
            let cfg = a.cfg.single()?;
            let spec = ExperimentSpec { base: cfg.clone(), sweep: vec![cfg.n], seeds: 1, ..Default::default() };
            let real = run_one(&cfg)?;
            if let Some(p) = &a.per_pair {
                emit(Some(p), &pairs_csv(std::slice::from_ref(&real)))?;
            }
            emit(a.out.as_ref(), &metrics_jsonl(&RunHeader::now(&spec), &[real.metrics]))?;
        }
        Command::Sweep(a) => {
            let mut spec = a.cfg.spec()?;
            if let Some(s) = &a.sweep {
                spec.sweep = parse_list(s)?;
            }
            if let Some(s) = a.seeds {
                spec.seeds = s;
            }
            if let Some(o) = a.out {
                spec.out_dir = o;
            }
            spec.validate_bounds |= a.validate_bounds;
            spec.plots |= a.plots;
            if a.per_pair.is_some() {
                spec.per_pair = a.per_pair;
            }
            let wanted = parse_metrics(&a.fit)?;
            let quiet = a.quiet;
            let progress = move |r: &overlay_core::flow::MetricsRecord| {
                if !quiet {
                    eprintln!("done n={} seed={} violations={}", r.n, r.seed, r.bound_violations);
                }
            };
            let (art, report) = run_experiment(&spec, Some(&progress))?;
            let mut shown = report.clone();
            shown.fits.retain(|f| wanted.contains(&f.metric));
            out(&fit_table(&shown))?;
            eprintln!("metrics: {}", art.metrics.display());
            eprintln!("summary: {}", art.summary.display());
            if let Some(r) = &art.report {
                eprintln!("report: {}", r.display());
            }
            for p in &art.plots {
                eprintln!("plot: {}", p.display());
            }
            if spec.validate_bounds && art.violations > 0 {
                eprintln!("bound validation failed: {} violations", art.violations);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Analyze(a) => {
            let text = std::fs::read_to_string(&a.input).map_err(|e| SimError::Io(format!("{}: {e}", a.input.display())))?;
            let records = read_metrics(&text)?;
            if records.is_empty() {
                return Err(SimError::Insufficient("no records in input".into()));
            }
            let report = analyze(&records, &parse_metrics(&a.fit)?);
            out(&fit_table(&report))?;
            if let Some(p) = &a.report {
                emit(Some(p), &serde_json::to_string_pretty(&report).expect("report serialize"))?;
            }
            if let Some(dir) = &a.plots {
                for p in overlay_core::plot::emit_plots(&report.sweep, dir)? {
                    eprintln!("plot: {}", p.display());
                }
            }
        }
        Command::Bounds(a) => {
            let cfg = NetworkConfig { alpha: a.alpha, p0: a.p0, p1: a.p1, n0: a.n0, ..Default::default() };
            let b = bound_set(&cfg)?;
            let rows = [
                ("I_p_bound", b.i_p_bound),
                ("I_sp_bound", b.i_sp_bound),
                ("I_ps_bound", b.i_ps_bound),
                ("I_s_bound", b.i_s_bound),
                ("K1", b.k1),
                ("K2", b.k2),
            ];
            let mut text = String::new();
            for (k, v) in rows {
                text += &format!("{k:<12} {v:.10e}\n");
            }
            text += &(rows.iter().map(|r| r.0).collect::<Vec<_>>().join(",") + "\n");
            text += &(rows.iter().map(|r| format!("{:?}", r.1)).collect::<Vec<_>>().join(",") + "\n");
            out(&text)?;
        }
        Command::MaskDump(a) => {
            if a.slot >= SLOTS {
                return Err(SimError::Domain(format!("slot must be < {SLOTS}")));
            }
            let cfg = a.cfg.single()?;
            let pg = overlay_core::geometry::build_grid(cfg.a_p())?;
            let sg = overlay_core::geometry::build_grid(cfg.a_s())?;
            let mode: PreservationMode = cfg.preservation;
            out(&mask_pbm(&Schedule::new(pg, sg, mode), a.slot))?;
        }
        Command::Paths(a) => {
            if !a.dump {
                return Err(SimError::Config("paths needs --dump".into()));
            }
            let dep = generate_deployment(&a.cfg.single()?)?;
            out(&paths_csv(&dep))?;
        }
        Command::Deployment(DeploymentCmd::Export { cfg, out }) => {
            let c = cfg.single()?;
            let dep = generate_deployment(&c)?;
            emit(out.as_ref(), &dep.export_text(&c))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
