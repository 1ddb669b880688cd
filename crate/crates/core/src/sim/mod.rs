//! Discrete-event model of output-queued, store-and-forward cell switches.
//!
//! Semantics, per cell:
//!
//! - a source's cells queue FIFO for their external input link and occupy it
//!   for one input cell time;
//! - `cell_latency` after its last bit arrives, a cell joins the queue of each
//!   output it is routed to (one copy per multicast branch);
//! - an output sends one cell per output cell time, CBR before everything
//!   else, FIFO within a class, and never idles with a non-empty queue;
//! - a copy arriving at an output whose queue already holds `buffer_cells`
//!   waiting cells is dropped; the rest of its frame is still forwarded;
//! - a cell leaving a loopback port re-enters the same port; a cell leaving an
//!   external port whose input has a route for its label is sent straight back
//!   in by the attached analyzer.
//!
//! Simultaneous events are processed in a fixed order (event kind, switch,
//! port, VC, frame, cell), so a run is a pure function of its inputs.

mod engine;
pub mod monitor;
pub mod network;
pub mod signaling;
pub mod trace;
pub mod traffic;

pub use engine::simulate;
pub use monitor::{calibrate_monitor_overhead, MonitorModel, Observation};
pub use network::{Network, PortRef, RoutingTable, SwitchModel, Trunk};
pub use signaling::{linear_path, run_signaling_exchange, PathHop, SignalingExchange};
pub use trace::{read_records, CellRecord, Egress, FlowInfo, FrameCells, SimStats, Trace, VcCounters};
pub use traffic::{FrameLimit, TrafficSpec};
