//! Minimal SVG log-log plots: scatter of seed-averaged points, fitted line,
//! slope label.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{fit_loglog, FitReport, Metric, SweepResult};
use crate::error::{Result, SimError};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 56.0;

/// Renders one log-log panel. The fitted line, when given, is drawn across
/// the x range of the data.
pub fn loglog_svg(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64], fit: Option<&FitReport>) -> Result<String> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.is_empty() {
        return Err(SimError::Insufficient(format!("nothing to plot for {title}")));
    }
    let (mut x0, mut x1) = (f64::MAX, f64::MIN);
    let (mut y0, mut y1) = (f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some(f) = fit {
        for x in [x0, x1] {
            let y = f.intercept + f.slope * x;
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    let pad = |lo: f64, hi: f64| {
        let d = if hi > lo { 0.08 * (hi - lo) } else { 0.5 };
        (lo - d, hi + d)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">ln {}</text>"#, W / 2.0, H - 14.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">ln {}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    for (v, px) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{}" text-anchor="middle" font-size="10">{v:.2}</text>"#, H - MARGIN + 14.0);
    }
    for (v, py) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(s, r#"<text x="{}" y="{py:.1}" text-anchor="end" font-size="10">{v:.2}</text>"#, MARGIN - 4.0);
    }
    if let Some(f) = fit {
        let (a, b) = (pts.iter().map(|p| p.0).fold(f64::MAX, f64::min), pts.iter().map(|p| p.0).fold(f64::MIN, f64::max));
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="crimson" stroke-width="1.5"/>"#,
            sx(a),
            sy(f.intercept + f.slope * a),
            sx(b),
            sy(f.intercept + f.slope * b)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="crimson">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0,
            slope_label(f)
        );
    }
    for &(x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="steelblue"/>"#, sx(x), sy(y));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Annotation text for a fit, e.g. `slope = -0.500, R² = 0.999`.
pub fn slope_label(f: &FitReport) -> String {
    format!("slope = {:.3}, R² = {:.3}", f.slope, f.r_squared)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the throughput, delay, and tradeoff panels for each tier present
/// in the sweep and returns the file paths.
pub fn emit_plots(sweep: &SweepResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if sweep.points.is_empty() {
        return Err(SimError::Insufficient("empty sweep".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let secondary = sweep.points.iter().any(|p| p.lambda_s.is_some());
    let tiers: &[(Metric, Metric, &str, &str)] = if secondary {
        &[(Metric::LambdaP, Metric::DelayP, "p", "n"), (Metric::LambdaS, Metric::DelayS, "s", "m")]
    } else {
        &[(Metric::LambdaP, Metric::DelayP, "p", "n")]
    };
    for &(lam, del, tag, dens) in tiers {
        for metric in [lam, del] {
            let pred = metric.default_predictor();
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                sweep.points.iter().map(|p| (pred.eval(p.n, p.m), p.get(metric).unwrap_or(f64::NAN))).unzip();
            let fit = fit_loglog(&xs, &ys).ok();
            let xlabel = serde_json::to_value(pred).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let svg = loglog_svg(metric.name(), &xlabel, metric.name(), &xs, &ys, fit.as_ref())?;
            let path = out_dir.join(format!("{}.svg", metric.name().to_ascii_lowercase()));
            std::fs::write(&path, svg)?;
            files.push(path);
        }
        // D against density times throughput; the tradeoff law is slope 1
        let (xs, ys): (Vec<f64>, Vec<f64>) = sweep
            .points
            .iter()
            .map(|p| {
                let d = if tag == "p" { p.n } else { p.m };
                (d * p.get(lam).unwrap_or(f64::NAN), p.get(del).unwrap_or(f64::NAN))
            })
            .unzip();
        let fit = fit_loglog(&xs, &ys).ok();
        let svg = loglog_svg(&format!("tradeoff_{tag}"), &format!("{dens} lambda_{tag}"), &format!("D_{tag}"), &xs, &ys, fit.as_ref())?;
        let path = out_dir.join(format!("tradeoff_{tag}.svg"));
        std::fs::write(&path, svg)?;
        files.push(path);
    }
    Ok(files)
}
