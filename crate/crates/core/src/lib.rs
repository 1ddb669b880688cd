//! Deterministic cell-switch simulator and frame-level benchmark harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`aal`]: frames, cells, AAL5 segmentation/reassembly and effective-rate arithmetic.
//! - [`topology`]: connection configurations, loopback chains, background placement and
//!   max-min ideal allocations.
//! - [`sim`]: the discrete-event switch model, traffic generators and the cell trace.
//! - [`metrics`]: MIMO latency (event and cell-level routes), throughput levels, fairness,
//!   frame loss, burst size, call establishment latency and goodput.
//! - [`harness`]: test-spec parsing, run-matrix execution and report emission.
//!
//! All times are integer nanosecond [`Tick`]s.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aal;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod sim;
pub mod topology;

pub use aal::{Cell, Frame, LinkRate, ServiceClass};
pub use error::{Error, Result};
pub use metrics::latency::{Latency, LatencyStats};
pub use sim::{CellRecord, Network, RoutingTable, SwitchModel, Trace, TrafficSpec};
pub use topology::{ConnectionConfig, ConnectionKind, Vc};

/// Global time unit: one nanosecond.
pub type Tick = u64;

/// Ticks per second.
pub const TICKS_PER_SEC: u64 = 1_000_000_000;

/// Integer division rounding half up. `den` must be non-zero.
pub(crate) fn div_round_half_up(num: u128, den: u128) -> u128 {
    (2 * num + den) / (2 * den)
}
