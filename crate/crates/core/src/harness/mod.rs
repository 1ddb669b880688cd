//! Test specs, run-matrix execution and reports.

pub mod report;
pub mod run;
pub mod spec;

pub use report::{
    derive_aggregates, read_csv, read_jsonl, write_csv, write_jsonl, write_table, AggregateRow, MetricReport, RunRow,
};
pub use run::{emit_report, latency_system, run_suite, throughput_system};
pub use spec::{
    parse_spec, BackgroundSpec, Bound, CallSpec, Expectation, Format, LoadLadder, Suite, SystemSpec, TestSpec,
};
