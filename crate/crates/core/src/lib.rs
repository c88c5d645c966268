//! Simulator for two overlaid ad hoc wireless networks sharing the unit
//! square: a primary tier with spectrum priority and a denser secondary
//! tier that transmits only outside preservation regions around active
//! primary transmitters.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod geometry;
pub mod phy;
pub mod plot;
pub mod protocol;
pub mod routing;

pub use config::{NetworkConfig, PreservationMode};
pub use error::{Result, SimError};
