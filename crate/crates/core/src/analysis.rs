//! Scaling fits over sweeps and Monte Carlo checks of the probabilistic
//! bounds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, SimError};
use crate::flow::MetricsRecord;
use crate::geometry::{build_grid, derive_seed, locate_cell, sample_poisson_nodes};

/// Chernoff-style Poisson tail bound `e^-mu (e mu)^x / x^x`: an upper bound
/// on `P(X >= x)` for `x > mu` and on `P(X <= x)` for `x < mu`.
pub fn chernoff_tail(mu: f64, x: f64) -> Result<f64> {
    if !(mu > 0.0 && x > 0.0) {
        return Err(SimError::Domain(format!("chernoff_tail needs mu, x > 0 (got {mu}, {x})")));
    }
    if x == mu {
        return Ok(1.0);
    }
    Ok((-mu + x * (1.0 + mu.ln()) - x * x.ln()).exp())
}

/// Union bound on some cell being empty (or over-full) when `n/(k ln n)`
/// cells hold Poisson(`k ln n`) nodes each.
pub fn occupancy_union_bound(n: f64, k: f64) -> f64 {
    1.0 / (k * n.powf(k - 1.0) * n.ln())
}

/// Bound on the total count leaving `(n/2, e n)`.
pub fn total_count_bound(n: f64) -> f64 {
    (2.0 / std::f64::consts::E).powf(n / 2.0) + (-n).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventCheck {
    pub name: String,
    pub frequency: f64,
    pub bound: f64,
    /// `frequency <= 2 * bound`.
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub density: f64,
    pub k: f64,
    pub trials: u32,
    pub cells_per_side: usize,
    pub events: Vec<EventCheck>,
}

/// Monte Carlo frequencies of the empty-cell, over-occupancy and
/// total-count events for one tier with density `density` and cell constant
/// `k`. Trial `i` uses seed `derive_seed(seed, i)`.
pub fn validate_occupancy(density: f64, k: f64, trials: u32, seed: u64) -> Result<OccupancyReport> {
    if trials < 100 {
        return Err(SimError::Insufficient(format!("need at least 100 trials, got {trials}")));
    }
    let grid = build_grid(k * density.ln() / density)?;
    let cap = k * std::f64::consts::E * density.ln();
    let (mut empty, mut over, mut total) = (0u32, 0u32, 0u32);
    let mut counts = vec![0u32; grid.cell_count()];
    for i in 0..trials {
        let pts = sample_poisson_nodes(density, derive_seed(seed, i as u64));
        counts.iter_mut().for_each(|c| *c = 0);
        for p in &pts {
            counts[grid.index(locate_cell(*p, &grid)?)] += 1;
        }
        empty += counts.contains(&0) as u32;
        over += counts.iter().any(|&c| c as f64 > cap) as u32;
        let nt = pts.len() as f64;
        total += !(nt > density / 2.0 && nt < std::f64::consts::E * density) as u32;
    }
    let ub = occupancy_union_bound(density, k);
    let t = trials as f64;
    let mk = |name: &str, hits: u32, bound: f64| {
        let frequency = hits as f64 / t;
        EventCheck { name: name.into(), frequency, bound, within: frequency <= 2.0 * bound }
    };
    Ok(OccupancyReport {
        density,
        k,
        trials,
        cells_per_side: grid.cells_per_side,
        events: vec![
            mk("empty_cell", empty, ub),
            mk("over_occupancy", over, ub),
            mk("total_count", total, total_count_bound(density)),
        ],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub ci95: f64,
    pub points: usize,
    pub excluded: usize,
}

/// Ordinary least squares of `ln y` on `ln x`. Points with non-positive
/// coordinates are dropped and counted.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<FitReport> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let excluded = xs.len().min(ys.len()) - pts.len();
    let n = pts.len();
    if n < 3 {
        return Err(SimError::Insufficient(format!("need at least 3 positive points, got {n}")));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SimError::Insufficient("predictor has no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map_err(|e| SimError::Domain(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(FitReport { slope, intercept, r_squared, ci95: t * se, points: n, excluded })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    NLnN,
    NOverLnN,
    SqrtNOverLnN,
    MLnM,
    MOverLnM,
    SqrtMOverLnM,
}

impl Predictor {
    pub fn eval(self, n: f64, m: f64) -> f64 {
        match self {
            Predictor::NLnN => n * n.ln(),
            Predictor::NOverLnN => n / n.ln(),
            Predictor::SqrtNOverLnN => (n / n.ln()).sqrt(),
            Predictor::MLnM => m * m.ln(),
            Predictor::MOverLnM => m / m.ln(),
            Predictor::SqrtMOverLnM => (m / m.ln()).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LambdaP,
    DelayP,
    LambdaS,
    DelayS,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::LambdaP, Metric::DelayP, Metric::LambdaS, Metric::DelayS];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LambdaP => "lambda_p",
            Metric::DelayP => "D_p",
            Metric::LambdaS => "lambda_s",
            Metric::DelayS => "D_s",
        }
    }

    pub fn default_predictor(self) -> Predictor {
        match self {
            Metric::LambdaP => Predictor::NLnN,
            Metric::DelayP => Predictor::SqrtNOverLnN,
            Metric::LambdaS => Predictor::MLnM,
            Metric::DelayS => Predictor::SqrtMOverLnM,
        }
    }

    fn of(self, r: &MetricsRecord) -> Option<f64> {
        match self {
            Metric::LambdaP => r.primary.lambda_min,
            Metric::DelayP => r.primary.mean_delay,
            Metric::LambdaS => r.secondary.as_ref()?.lambda_min,
            Metric::DelayS => r.secondary.as_ref()?.mean_delay,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda_p" => Ok(Metric::LambdaP),
            "d_p" | "delay_p" => Ok(Metric::DelayP),
            "lambda_s" => Ok(Metric::LambdaS),
            "d_s" | "delay_s" => Ok(Metric::DelayS),
            other => Err(SimError::Parse(format!("unknown metric `{other}`"))),
        }
    }
}

/// Seed-averaged metrics at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: f64,
    pub m: f64,
    pub a_p: f64,
    pub a_s: f64,
    pub seeds: usize,
    pub lambda_p: Option<f64>,
    pub delay_p: Option<f64>,
    pub lambda_s: Option<f64>,
    pub delay_s: Option<f64>,
}

impl SweepPoint {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::LambdaP => self.lambda_p,
            Metric::DelayP => self.delay_p,
            Metric::LambdaS => self.lambda_s,
            Metric::DelayS => self.delay_s,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut count = 0usize;
    for v in values.flatten() {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

impl SweepResult {
    /// Groups records by `n` (ascending) and averages each metric over seeds.
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let mut ns: Vec<f64> = records.iter().map(|r| r.n).collect();
        ns.sort_by(f64::total_cmp);
        ns.dedup();
        let points = ns
            .into_iter()
            .map(|n| {
                let group: Vec<&MetricsRecord> = records.iter().filter(|r| r.n == n).collect();
                let m = group[0].m;
                let avg = |metric: Metric| mean_of(group.iter().map(|r| metric.of(r)));
                SweepPoint {
                    n,
                    m,
                    a_p: n.ln() / n,
                    a_s: m.ln() / m,
                    seeds: group.len(),
                    lambda_p: avg(Metric::LambdaP),
                    delay_p: avg(Metric::DelayP),
                    lambda_s: avg(Metric::LambdaS),
                    delay_s: avg(Metric::DelayS),
                }
            })
            .collect();
        Self { points }
    }

    pub fn fit(&self, metric: Metric, predictor: Predictor) -> Result<FitReport> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .points
            .iter()
            .map(|p| (predictor.eval(p.n, p.m), p.get(metric).unwrap_or(f64::NAN)))
            .unzip();
        fit_loglog(&xs, &ys)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub ratios: Vec<f64>,
    /// Largest ratio over smallest.
    pub spread: f64,
    pub insufficient: bool,
}

/// Ratio `D / (density * lambda)` at every point and its spread.
pub fn verify_tradeoff(points: &[(f64, f64, f64)]) -> TradeoffReport {
    let ratios: Vec<f64> = points.iter().map(|&(density, d, lambda)| d / (density * lambda)).collect();
    let finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite() && *r > 0.0).collect();
    let spread = if finite.len() < 2 {
        1.0
    } else {
        finite.iter().copied().fold(f64::MIN, f64::max) / finite.iter().copied().fold(f64::MAX, f64::min)
    };
    TradeoffReport { ratios, spread, insufficient: finite.len() < 3 }
}

/// Tradeoff check for one tier of a sweep.
pub fn sweep_tradeoff(sweep: &SweepResult, secondary: bool) -> TradeoffReport {
    let pts: Vec<(f64, f64, f64)> = sweep
        .points
        .iter()
        .filter_map(|p| {
            if secondary {
                Some((p.m, p.delay_s?, p.lambda_s?))
            } else {
                Some((p.n, p.delay_p?, p.lambda_p?))
            }
        })
        .collect();
    verify_tradeoff(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chernoff_examples() {
        let n = 50.0;
        let e = std::f64::consts::E;
        assert!((chernoff_tail(n, e * n).unwrap() / (-n).exp() - 1.0).abs() < 1e-12);
        assert!((chernoff_tail(n, n / 2.0).unwrap() / (2.0 / e).powf(n / 2.0) - 1.0).abs() < 1e-12);
        let want = 10f64.exp() * 2f64.powi(-20);
        assert!((chernoff_tail(10.0, 20.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.0210).abs() < 1e-4);
        assert_eq!(chernoff_tail(3.0, 3.0).unwrap(), 1.0);
        assert!(chernoff_tail(0.0, 1.0).is_err());
    }

    #[test]
    fn union_bound_examples() {
        assert!((occupancy_union_bound(1e3, 2.0) - 1.0 / (2e3 * 1e3f64.ln())).abs() < 1e-18);
        assert!((occupancy_union_bound(1e3, 2.0) - 7.2e-5).abs() < 1e-6);
        assert!((2.0 * occupancy_union_bound(1e4, 1.0) - 0.217).abs() < 1e-3);
        let mut prev = f64::INFINITY;
        for n in [10.0, 100.0, 1e3, 1e4, 1e5] {
            let b = occupancy_union_bound(n, 1.5);
            assert!(b > 0.0 && b < prev);
            prev = b;
        }
    }

    #[test]
    fn planted_fit() {
        let ns = [500.0f64, 1000.0, 2000.0, 4000.0, 8000.0];
        let xs: Vec<f64> = ns.iter().map(|n| n * n.ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / x.sqrt()).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(f.ci95 < 1e-9);
        let f = fit_loglog(&[1.0, 2.0, 3.0, 4.0], &[1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.excluded, 1);
        assert!(fit_loglog(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn tradeoff_examples() {
        let planted: Vec<(f64, f64, f64)> = [500.0, 1000.0, 2000.0].iter().map(|&n| (n, n * 0.01, 0.01)).collect();
        let r = verify_tradeoff(&planted);
        assert!((r.spread - 1.0).abs() < 1e-12 && !r.insufficient);
        let r = verify_tradeoff(&[(500.0, 2.0, 0.1)]);
        assert_eq!(r.spread, 1.0);
        assert!(r.insufficient);
    }
}
