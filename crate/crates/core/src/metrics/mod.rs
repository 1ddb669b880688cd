//! Frame-level metrics computed from simulator traces.

pub mod call;
pub mod fairness;
pub mod frames;
pub mod goodput;
pub mod ladder;
pub mod latency;
pub mod loss;
pub mod mfbs;
pub mod throughput;

pub use call::{call_establishment_latency, measure_call, CallReport};
pub use fairness::{fairness_index, fairness_index_exact, mean_fairness};
pub use frames::{frame_outcome, frame_outcomes, FrameEvents, FrameOutcome};
pub use goodput::{application_goodput, goodput_counts};
pub use ladder::{geometric_ladder, LatencyPoint, LatencySystem};
pub use latency::{
    latency_stats, mimo_from_cells_fast_input, mimo_from_cells_slow_input, mimo_from_events, mimo_from_monitor, nfot,
    z_quantile, Latency, LatencyStats, Summary,
};
pub use loss::{average_flr, frame_loss_ratio, mean_of_ratios};
pub use mfbs::{burst, burst_is_lossless, mfbs, BurstProbe, MfbsResult};
pub use throughput::{
    default_grid, full_load_throughput, lossless_throughput, peak_throughput, throughput_levels, FlowTemplate,
    LoadPoint, Measurement, Prober, SearchParams, System, ThroughputResult,
};
