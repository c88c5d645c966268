//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use overlay_core::geometry::CellIndex;
use overlay_core::phy::Transmitter;

pub const CATALAN: f64 = 0.915_965_594_177_219_015_054_603_514_932_384_110_774;
pub const ZETA3: f64 = 1.202_056_903_159_594_285_399_738_161_511_449_990_765;
/// Dirichlet beta function at 4.
pub const BETA4: f64 = 0.988_944_551_741_105_336_108_422_633_228_377_5;

/// `sum_t 8t (4t-1)^-3` through Hurwitz zeta values at 3/4:
/// `8t = 2(4t-1) + 2`, `zeta(2, 3/4) = pi^2 - 8G`, `zeta(3, 3/4) = 28 zeta(3) - pi^3`.
pub fn oracle_8_4_3() -> f64 {
    let z2 = PI * PI - 8.0 * CATALAN;
    let z3 = 28.0 * ZETA3 - PI.powi(3);
    2.0 * z2 / 16.0 + 2.0 * z3 / 64.0
}

/// `sum_t 8t (4t-1)^-4 = 2 zeta(3,3/4)/64 + 2 zeta(4,3/4)/256` with
/// `zeta(4, 3/4) = (8 pi^4 / 3 - 256 beta(4)) / 2`.
pub fn oracle_8_4_4() -> f64 {
    let z3 = 28.0 * ZETA3 - PI.powi(3);
    let z4 = (8.0 * PI.powi(4) / 3.0 - 256.0 * BETA4) / 2.0;
    2.0 * z3 / 64.0 + 2.0 * z4 / 256.0
}

pub fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Direct evaluation of the SINR rate: signal over noise plus every other
/// transmitter, split by tier, with no shared helpers. Returns
/// `(rate, same-tier interference, cross-tier interference)`.
pub fn oracle_rate(rx: (f64, f64), serving: usize, txs: &[Transmitter], alpha: f64, a: f64, n0: f64) -> (f64, f64, f64) {
    let mut sig = 0.0;
    let mut same = 0.0;
    let mut cross = 0.0;
    for (i, t) in txs.iter().enumerate() {
        let d = ((t.pos.x - rx.0).powi(2) + (t.pos.y - rx.1).powi(2)).sqrt();
        let p = t.power * a / d.powf(alpha);
        if i == serving {
            sig = p;
        } else if t.tier == txs[serving].tier {
            same += p;
        } else {
            cross += p;
        }
    }
    ((sig / (n0 + same + cross)).ln_1p() / 25.0, same, cross)
}

/// Enumerates the row run then the column run with explicit ranges.
pub fn enumerate_path(s: CellIndex, d: CellIndex) -> Vec<CellIndex> {
    let mut out = vec![s];
    let cols: Vec<usize> = if d.col >= s.col { (s.col + 1..=d.col).collect() } else { (d.col..s.col).rev().collect() };
    for c in cols {
        out.push(CellIndex::new(s.row, c));
    }
    let rows: Vec<usize> = if d.row >= s.row { (s.row + 1..=d.row).collect() } else { (d.row..s.row).rev().collect() };
    for r in rows {
        out.push(CellIndex::new(r, d.col));
    }
    out
}

/// Exact Poisson tail by summing probabilities in log space: upper tail
/// for `x > mu`, lower tail for `x < mu`.
pub fn exact_tail(mu: f64, x: u32) -> f64 {
    let ln_pmf = |k: u32| -> f64 { -mu + k as f64 * mu.ln() - (1..=k).map(|i| (i as f64).ln()).sum::<f64>() };
    if (x as f64) > mu {
        let mut total = 0.0;
        let mut k = x;
        loop {
            let p = ln_pmf(k).exp();
            total += p;
            if p < 1e-300 || (k as f64 > mu && p < total * 1e-18) {
                break;
            }
            k += 1;
        }
        total
    } else {
        (0..=x).map(|k| ln_pmf(k).exp()).sum()
    }
}
