//! Scalar parameters shared by every stage of a realization.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// How preservation squares are evaluated near the edge of the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreservationMode {
    /// Squares come from every cell of the periodic primary activation
    /// lattice, including lattice sites that fall outside the unit square.
    Lattice,
    /// Squares come only from primary cells that exist inside the unit square.
    Clipped,
}

impl std::str::FromStr for PreservationMode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lattice" => Ok(Self::Lattice),
            "clipped" => Ok(Self::Clipped),
            other => Err(SimError::Parse(format!("unknown preservation mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Primary node density.
    pub n: f64,
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
    pub alpha: f64,
    /// Channel constant in `g(r) = A r^-alpha`.
    pub a: f64,
    pub p0: f64,
    pub p1: f64,
    pub n0: f64,
    /// Primary slot duration.
    pub tp: f64,
    pub frames: u32,
    pub seed: u64,
    /// Skip the secondary tier entirely.
    pub primary_only: bool,
    pub preservation: PreservationMode,
    /// Defer a secondary link while its receiver sits within `1.5 sqrt(a_p)`
    /// of an active primary transmitter.
    pub rx_guard: bool,
    /// Frames excluded from delay statistics.
    pub warmup_frames: u32,
    /// Each source emits one packet every `packet_interval` frames.
    pub packet_interval: u32,
    /// Rates and interference are evaluated on every `phy_stride`-th frame.
    pub phy_stride: u32,
    /// Interference from same-tier lattice transmitters further than this
    /// many clusters away is replaced by an analytic upper bound.
    /// `None` sums every transmitter.
    pub window_clusters: Option<u32>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n: 1000.0,
            beta: 1.5,
            k1: 1.0,
            k2: 1.0,
            alpha: 4.0,
            a: 1.0,
            p0: 1.0,
            p1: 1.0,
            n0: 1.0,
            tp: 1.0,
            frames: 200,
            seed: 0,
            primary_only: false,
            preservation: PreservationMode::Lattice,
            rx_guard: true,
            warmup_frames: 2,
            packet_interval: 1,
            phy_stride: 1,
            window_clusters: Some(4),
        }
    }
}

impl NetworkConfig {
    /// Secondary density `n^beta`.
    pub fn m(&self) -> f64 {
        self.n.powf(self.beta)
    }

    /// Nominal primary cell area `k1 ln n / n`.
    pub fn a_p(&self) -> f64 {
        self.k1 * self.n.ln() / self.n
    }

    /// Nominal secondary cell area `k2 ln m / m`.
    pub fn a_s(&self) -> f64 {
        let m = self.m();
        self.k2 * m.ln() / m
    }

    /// Secondary slot duration.
    pub fn ts(&self) -> f64 {
        self.tp / 25.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SimError::Config(msg.to_string()));
        if !(self.n.is_finite() && self.n > 1.0) {
            return bad("n must be finite and > 1");
        }
        if !(self.beta > 1.0) {
            return bad("beta must be > 1");
        }
        if !(self.alpha > 2.0) {
            return bad("alpha must be > 2");
        }
        if !(self.k1 >= 1.0 && self.k2 >= 1.0) {
            return bad("k1 and k2 must be >= 1");
        }
        for (name, v) in [("A", self.a), ("P0", self.p0), ("P1", self.p1), ("N0", self.n0), ("tp", self.tp)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("{name} must be finite and > 0")));
            }
        }
        if self.a_p() >= 1.0 {
            return bad("primary cell area must be < 1 (n too small)");
        }
        if self.packet_interval == 0 || self.phy_stride == 0 {
            return bad("packet_interval and phy_stride must be >= 1");
        }
        Ok(())
    }
}
