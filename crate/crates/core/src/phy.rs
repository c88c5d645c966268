//! Channel gain, transmit power, SINR rates and the analytic interference
//! bounds. Rates are in nats per unit time.

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Result, SimError};
use crate::geometry::{Point, Tier};

/// TDMA rate loss: each cell is active in one of 25 slots.
pub const TDMA_FACTOR: f64 = 1.0 / 25.0;

pub fn pathloss(r: f64, alpha: f64, a: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(SimError::Domain(format!("pathloss at distance {r}")));
    }
    Ok(a * r.powf(-alpha))
}

/// `P a^(alpha/2)` with `P` the tier's power constant.
pub fn tx_power(tier: Tier, config: &NetworkConfig, cell_area: f64) -> f64 {
    let p = match tier {
        Tier::Primary => config.p0,
        Tier::Secondary => config.p1,
    };
    p * cell_area.powf(config.alpha / 2.0)
}

/// Gain as a function of squared distance, with an integer fast path.
#[derive(Clone, Copy, Debug)]
pub struct Channel {
    a: f64,
    half_alpha: f64,
    half_alpha_int: Option<i32>,
}

impl Channel {
    pub fn new(alpha: f64, a: f64) -> Self {
        let half = alpha / 2.0;
        let int = (half.fract() == 0.0 && half <= 16.0).then_some(half as i32);
        Self { a, half_alpha: half, half_alpha_int: int }
    }

    #[inline]
    pub fn gain_d2(&self, d2: f64) -> f64 {
        match self.half_alpha_int {
            Some(h) => self.a / d2.powi(h),
            None => self.a * d2.powf(-self.half_alpha),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transmitter {
    pub pos: Point,
    pub power: f64,
    pub tier: Tier,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub tier: Tier,
    pub tx: Point,
    pub rx: Point,
    pub tx_power: f64,
    pub rate: f64,
    pub interference_same_tier: f64,
    pub interference_cross_tier: f64,
}

/// SINR rate of one scheduled link, `(1/25) ln(1 + S / (N0 + I))`.
pub fn rate_from(signal: f64, noise: f64, interference: f64) -> f64 {
    TDMA_FACTOR * (signal / (noise + interference)).ln_1p()
}

/// Rate received at `rx` from `txs[serving]` with every other entry of
/// `txs` interfering. The receiver belongs to the serving transmitter's tier.
pub fn link_rate(rx: Point, serving: usize, txs: &[Transmitter], config: &NetworkConfig) -> Result<LinkSample> {
    let server = txs
        .get(serving)
        .ok_or_else(|| SimError::Domain(format!("serving index {serving} out of range")))?;
    let mut same = 0.0;
    let mut cross = 0.0;
    let mut signal = 0.0;
    for (i, t) in txs.iter().enumerate() {
        let g = pathloss(t.pos.dist(rx), config.alpha, config.a)?;
        if i == serving {
            signal = t.power * g;
        } else if t.tier == server.tier {
            same += t.power * g;
        } else {
            cross += t.power * g;
        }
    }
    Ok(LinkSample {
        tier: server.tier,
        tx: server.pos,
        rx,
        tx_power: server.power,
        rate: rate_from(signal, config.n0, same + cross),
        interference_same_tier: same,
        interference_cross_tier: cross,
    })
}

/// Sum of a decreasing series `sum_{t>=1} f(t)`: direct terms up to `T`
/// followed by an Euler-Maclaurin tail. `T` doubles until the first
/// neglected correction is below `1e-12` of the total.
fn em_sum(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    tail_integral: impl Fn(f64) -> f64,
    decay: f64,
) -> (f64, u64) {
    let mut t_max: u64 = 32;
    loop {
        let t = t_max as f64;
        let mut acc = 0.0;
        let mut comp = 0.0;
        for k in (1..=t_max).rev() {
            let y = f(k as f64) - comp;
            let s = acc + y;
            comp = (s - acc) - y;
            acc = s;
        }
        let total = acc + tail_integral(t) - f(t) / 2.0 - df(t) / 12.0;
        let next = (df(t) * (decay + 1.0) * (decay + 2.0) / (720.0 * t * t)).abs();
        if next <= 1e-12 * total.abs() || t_max >= 1 << 22 {
            return (total, t_max);
        }
        t_max *= 2;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSum {
    pub value: f64,
    /// Terms summed explicitly before the analytic tail.
    pub terms: u64,
}

/// `sum_{t>=1} a t (b t - 1)^(-alpha)`.
pub fn series_sum(a: f64, b: f64, alpha: f64) -> Result<SeriesSum> {
    if !(alpha > 2.0) {
        return Err(SimError::Divergent(alpha));
    }
    if !(b > 1.0) {
        return Err(SimError::Domain(format!("series needs b > 1, got {b}")));
    }
    if a == 0.0 {
        return Ok(SeriesSum { value: 0.0, terms: 0 });
    }
    let f = |t: f64| a * t * (b * t - 1.0).powf(-alpha);
    let df = |t: f64| {
        let u = b * t - 1.0;
        a * u.powf(-alpha) - a * alpha * b * t * u.powf(-alpha - 1.0)
    };
    let tail = |t: f64| {
        let u = b * t - 1.0;
        a / (b * b) * (u.powf(2.0 - alpha) / (alpha - 2.0) + u.powf(1.0 - alpha) / (alpha - 1.0))
    };
    let (value, terms) = em_sum(f, df, tail, alpha);
    Ok(SeriesSum { value, terms })
}

/// Four-term closed-form upper bound on [`series_sum`].
pub fn series_bound(a: f64, b: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 2.0) {
        return Err(SimError::Divergent(alpha));
    }
    if !(b >= 2.0) {
        return Err(SimError::Domain(format!("series bound needs b >= 2, got {b}")));
    }
    let q = 1.0 - 1.0 / b;
    Ok(a / (b.powf(alpha) * q.powf(alpha - 1.0))
        + a * q.powf(2.0 - alpha) / (b.powf(alpha) * (alpha - 2.0))
        + a / (b.powf(alpha + 1.0) * q.powf(alpha))
        + a * q.powf(1.0 - alpha) / (b.powf(alpha + 1.0) * (alpha - 1.0)))
}

/// Upper bound, in units of the tier's power constant times `A`, on the
/// interference from one-per-cluster lattice transmitters whose cluster
/// lies more than `window` clusters (Chebyshev) from the receiver's cluster.
pub fn lattice_tail(alpha: f64, window: u32) -> f64 {
    if window == 0 {
        return f64::INFINITY;
    }
    let r = window as f64;
    // sum_{u >= R} (u + 1) u^-alpha, shifted so the series starts at 1
    let f = |t: f64| {
        let u = t + r - 1.0;
        (u + 1.0) * u.powf(-alpha)
    };
    let df = |t: f64| {
        let u = t + r - 1.0;
        u.powf(-alpha) - alpha * (u + 1.0) * u.powf(-alpha - 1.0)
    };
    let tail = |t: f64| {
        let u = t + r - 1.0;
        u.powf(2.0 - alpha) / (alpha - 2.0) + u.powf(1.0 - alpha) / (alpha - 1.0)
    };
    let (s, _) = em_sum(f, df, tail, alpha);
    8.0 * 5f64.powf(-alpha) * s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub i_p_bound: f64,
    pub i_sp_bound: f64,
    pub i_ps_bound: f64,
    pub i_s_bound: f64,
    pub k1: f64,
    pub k2: f64,
}

pub fn bound_set(config: &NetworkConfig) -> Result<BoundSet> {
    let alpha = config.alpha;
    let s4 = series_sum(8.0, 4.0, alpha)?.value;
    let s3 = series_sum(8.0, 3.0, alpha)?.value;
    let a = config.a;
    let i_p = a * config.p0 * s4;
    let i_sp = a * config.p1 * (s4 + 1.0);
    let i_ps = a * config.p0 * (s3 + 1.5f64.powf(-alpha));
    let i_s = a * config.p1 * s4;
    let near = 5f64.powf(-alpha / 2.0) * a;
    let k1 = TDMA_FACTOR * (config.p0 * near / (config.n0 + i_p + i_sp)).ln_1p();
    let k2 = TDMA_FACTOR * (9.0 / 25.0) * (config.p1 * near / (config.n0 + i_ps + i_s)).ln_1p();
    Ok(BoundSet { i_p_bound: i_p, i_sp_bound: i_sp, i_ps_bound: i_ps, i_s_bound: i_s, k1, k2 })
}
