//! Report rows, aggregate derivation and the three output formats.
//!
//! Every aggregate is a pure function of the run rows ([`derive_aggregates`]),
//! so a report read back from disk can be checked against itself. Rates are
//! effective AAL payload bits per second throughout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::spec::{parse_spec, Bound, Suite, TestSpec};
use crate::error::{Error, Result};
use crate::metrics::average_flr;

/// One run of the matrix: a throughput probe, a latency rung, a burst probe,
/// a call or a goodput measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: u64,
    pub suite: Suite,
    pub config: String,
    pub frame_size: u32,
    pub repetition: u32,
    /// Position within its series (probe order, ladder rung).
    pub step: u32,
    /// Fraction of the full foreground load.
    pub load: f64,
    pub frame_rate: Option<f64>,
    pub burst_frames: Option<u64>,
    pub offered_bps: f64,
    pub delivered_bps: Option<f64>,
    pub in_frames: u64,
    pub out_frames: u64,
    pub lossless: bool,
    pub flr: Option<f64>,
    pub fairness: Option<f64>,
    pub latency_mean: Option<f64>,
    pub latency_stddev: Option<f64>,
    pub latency_ci_low: Option<f64>,
    pub latency_ci_high: Option<f64>,
    pub latency_ticks: Option<u64>,
    pub setup_ticks: Option<u64>,
    pub connect_ticks: Option<u64>,
}

impl RunRow {
    pub(crate) fn blank(suite: Suite, config: String, frame_size: u32, repetition: u32, step: u32) -> Self {
        Self {
            run: 0,
            suite,
            config,
            frame_size,
            repetition,
            step,
            load: 1.0,
            frame_rate: None,
            burst_frames: None,
            offered_bps: 0.0,
            delivered_bps: None,
            in_frames: 0,
            out_frames: 0,
            lossless: true,
            flr: None,
            fairness: None,
            latency_mean: None,
            latency_stddev: None,
            latency_ci_low: None,
            latency_ci_high: None,
            latency_ticks: None,
            setup_ticks: None,
            connect_ticks: None,
        }
    }
}

/// A value derived from the run rows of one configuration and frame size.
/// `value` is empty when the metric is unbounded or undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub suite: Suite,
    pub config: String,
    pub frame_size: u32,
    pub value: Option<f64>,
    /// Run rows that contributed.
    pub runs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub spec: TestSpec,
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

type Key = (Suite, String, u32);

fn mean(xs: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.iter().copied().collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn by_repetition<'a>(rows: &[&'a RunRow]) -> BTreeMap<u32, Vec<&'a RunRow>> {
    let mut m: BTreeMap<u32, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        m.entry(r.repetition).or_default().push(r);
    }
    m
}

fn throughput_aggregates(key: &Key, rows: &[&RunRow], out: &mut Vec<AggregateRow>) {
    let reps = by_repetition(rows);
    let mut lossless = Vec::new();
    let mut peak = Vec::new();
    let mut full = Vec::new();
    let mut fairness = Vec::new();
    let mut flr_counts = Vec::new();
    for rs in reps.values() {
        let best = |filter: &dyn Fn(&RunRow) -> bool| {
            rs.iter()
                .filter(|r| filter(r))
                .filter_map(|r| r.delivered_bps.map(|d| (d, r.load)))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)))
                .map(|(d, _)| d)
        };
        lossless.push(best(&|r| r.lossless));
        peak.push(best(&|_| true));
        let at_full = rs.iter().find(|r| r.load == 1.0);
        full.push(at_full.and_then(|r| r.delivered_bps));
        fairness.push(at_full.and_then(|r| r.fairness));
        if let Some(r) = at_full {
            flr_counts.push((r.in_frames as f64, r.out_frames as f64));
        }
    }
    let n = rows.len() as u64;
    let flr = if flr_counts.len() == reps.len() && !flr_counts.is_empty() {
        average_flr(&flr_counts).ok()
    } else {
        None
    };
    for (metric, value) in [
        ("lossless_bps", mean(&lossless)),
        ("peak_bps", mean(&peak)),
        ("full_load_bps", mean(&full)),
        ("mean_fairness", mean(&fairness)),
        ("flr", flr),
    ] {
        out.push(aggregate(metric, key, value, n));
    }
}

/// Largest loss-free burst of one probe series; `None` when no probe lost.
fn mfbs_frames(rows: &[&RunRow]) -> Result<Option<u64>> {
    let burst = |r: &RunRow| {
        r.burst_frames
            .ok_or_else(|| Error::InvalidTrace(format!("burst run {} has no burst size", r.run)))
    };
    let mut best_ok = 0;
    let mut lossy = Vec::new();
    for r in rows {
        let n = burst(r)?;
        if r.lossless {
            best_ok = best_ok.max(n);
        } else {
            lossy.push(n);
        }
    }
    if lossy.is_empty() {
        return Ok(None);
    }
    if !lossy.contains(&(best_ok + 1)) || lossy.iter().any(|&n| n <= best_ok) {
        return Err(Error::InvalidTrace(format!(
            "burst probes do not bracket a boundary at {best_ok} frames"
        )));
    }
    Ok(Some(best_ok))
}

fn aggregate(metric: &str, key: &Key, value: Option<f64>, runs: u64) -> AggregateRow {
    AggregateRow {
        metric: metric.to_string(),
        suite: key.0,
        config: key.1.clone(),
        frame_size: key.2,
        value,
        runs,
    }
}

/// Recomputes every aggregate from the run rows.
///
/// Per configuration and frame size: the three throughput levels are means
/// over repetitions (lossless is the best loss-free probe, peak the best
/// probe, full load the probe at load 1); mean fairness and aggregate FLR use
/// the full-load probes, FLR as a ratio of summed frame counts. MFBS is the
/// smallest boundary over repetitions (empty if no repetition lost a frame),
/// call latency the mean over repetitions, goodput a ratio of summed
/// frame counts. Latency runs carry their own statistics and add no aggregate.
pub fn derive_aggregates(runs: &[RunRow]) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<Key, Vec<&RunRow>> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for r in runs {
        let key = (r.suite, r.config.clone(), r.frame_size);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::new();
    for key in order {
        let rows = &groups[&key];
        let n = rows.len() as u64;
        match key.0 {
            Suite::Throughput => throughput_aggregates(&key, rows, &mut out),
            Suite::Latency => {}
            Suite::Mfbs => {
                let mut frames = Vec::new();
                for rs in by_repetition(rows).values() {
                    frames.push(mfbs_frames(rs)?);
                }
                // a series that never lost counts as unbounded
                let value = frames.iter().flatten().min().map(|&f| (f * u64::from(key.2)) as f64);
                out.push(aggregate("mfbs_octets", &key, value, n));
            }
            Suite::Call => {
                let v: Vec<Option<f64>> = rows.iter().map(|r| r.latency_ticks.map(|t| t as f64)).collect();
                out.push(aggregate("call_latency_ticks", &key, mean(&v), n));
            }
            Suite::Goodput => {
                let tx: u64 = rows.iter().map(|r| r.in_frames).sum();
                let rx: u64 = rows.iter().map(|r| r.out_frames).sum();
                let value = if tx == 0 { None } else { Some(rx as f64 / tx as f64) };
                out.push(aggregate("goodput", &key, value, n));
            }
        }
    }
    Ok(out)
}

impl MetricReport {
    pub fn new(spec: TestSpec, runs: Vec<RunRow>) -> Result<Self> {
        let aggregates = derive_aggregates(&runs)?;
        Ok(Self { spec, runs, aggregates })
    }

    /// Aggregates outside the spec's expected bounds, one message each.
    ///
    /// An empty MFBS or call latency value counts as infinite; any other
    /// empty value fails every bound.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for e in &self.spec.expect {
            for a in self.aggregates.iter().filter(|a| a.metric == e.metric) {
                let value = a.value.unwrap_or(match a.metric.as_str() {
                    "mfbs_octets" | "call_latency_ticks" => f64::INFINITY,
                    _ => f64::NAN,
                });
                let ok = match e.bound {
                    Bound::AtLeast(b) => value >= b,
                    Bound::AtMost(b) => value <= b,
                };
                if !ok {
                    let (op, b) = match e.bound {
                        Bound::AtLeast(b) => (">=", b),
                        Bound::AtMost(b) => ("<=", b),
                    };
                    v.push(format!(
                        "{} {} @ {} octets = {} violates {op} {b}",
                        a.metric,
                        a.config,
                        a.frame_size,
                        fmt_opt(a.value)
                    ));
                }
            }
        }
        v
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Spec { text: String },
    Run(RunRow),
    Aggregate(AggregateRow),
}

pub fn write_jsonl<W: Write>(report: &MetricReport, mut out: W) -> Result<()> {
    let mut line = |r: &Record| -> Result<()> {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
        Ok(())
    };
    line(&Record::Spec {
        text: report.spec.to_text(),
    })?;
    for r in &report.runs {
        line(&Record::Run(r.clone()))?;
    }
    for a in &report.aggregates {
        line(&Record::Aggregate(a.clone()))?;
    }
    Ok(())
}

/// Reads a report back. Aggregates are returned as shipped, not recomputed.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<MetricReport> {
    let mut spec = None;
    let mut runs = Vec::new();
    let mut aggregates = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            field: "record".into(),
            message: e.to_string(),
        })?;
        match record {
            Record::Spec { text } => spec = Some(parse_spec(&text)?),
            Record::Run(r) => runs.push(r),
            Record::Aggregate(a) => aggregates.push(a),
        }
    }
    let spec = spec.ok_or_else(|| Error::InvalidTrace("report has no spec record".into()))?;
    Ok(MetricReport { spec, runs, aggregates })
}

/// Flat form of both row kinds for delimited output.
#[derive(Debug, Default, Serialize, Deserialize)]
struct CsvRow {
    record: String,
    run: Option<u64>,
    suite: Option<Suite>,
    config: String,
    frame_size: u32,
    repetition: Option<u32>,
    step: Option<u32>,
    load: Option<f64>,
    frame_rate: Option<f64>,
    burst_frames: Option<u64>,
    offered_bps: Option<f64>,
    delivered_bps: Option<f64>,
    in_frames: Option<u64>,
    out_frames: Option<u64>,
    lossless: Option<bool>,
    flr: Option<f64>,
    fairness: Option<f64>,
    latency_mean: Option<f64>,
    latency_stddev: Option<f64>,
    latency_ci_low: Option<f64>,
    latency_ci_high: Option<f64>,
    latency_ticks: Option<u64>,
    setup_ticks: Option<u64>,
    connect_ticks: Option<u64>,
    metric: Option<String>,
    value: Option<f64>,
    runs: Option<u64>,
}

impl From<&RunRow> for CsvRow {
    fn from(r: &RunRow) -> Self {
        Self {
            record: "run".into(),
            run: Some(r.run),
            suite: Some(r.suite),
            config: r.config.clone(),
            frame_size: r.frame_size,
            repetition: Some(r.repetition),
            step: Some(r.step),
            load: Some(r.load),
            frame_rate: r.frame_rate,
            burst_frames: r.burst_frames,
            offered_bps: Some(r.offered_bps),
            delivered_bps: r.delivered_bps,
            in_frames: Some(r.in_frames),
            out_frames: Some(r.out_frames),
            lossless: Some(r.lossless),
            flr: r.flr,
            fairness: r.fairness,
            latency_mean: r.latency_mean,
            latency_stddev: r.latency_stddev,
            latency_ci_low: r.latency_ci_low,
            latency_ci_high: r.latency_ci_high,
            latency_ticks: r.latency_ticks,
            setup_ticks: r.setup_ticks,
            connect_ticks: r.connect_ticks,
            ..Default::default()
        }
    }
}

impl From<&AggregateRow> for CsvRow {
    fn from(a: &AggregateRow) -> Self {
        Self {
            record: "aggregate".into(),
            suite: Some(a.suite),
            config: a.config.clone(),
            frame_size: a.frame_size,
            metric: Some(a.metric.clone()),
            value: a.value,
            runs: Some(a.runs),
            ..Default::default()
        }
    }
}

fn missing(line: usize, field: &str) -> Error {
    Error::Parse {
        line,
        field: field.into(),
        message: "missing value".into(),
    }
}

impl CsvRow {
    fn into_run(self, line: usize) -> Result<RunRow> {
        Ok(RunRow {
            run: self.run.ok_or_else(|| missing(line, "run"))?,
            suite: self.suite.ok_or_else(|| missing(line, "suite"))?,
            config: self.config,
            frame_size: self.frame_size,
            repetition: self.repetition.ok_or_else(|| missing(line, "repetition"))?,
            step: self.step.ok_or_else(|| missing(line, "step"))?,
            load: self.load.ok_or_else(|| missing(line, "load"))?,
            frame_rate: self.frame_rate,
            burst_frames: self.burst_frames,
            offered_bps: self.offered_bps.ok_or_else(|| missing(line, "offered_bps"))?,
            delivered_bps: self.delivered_bps,
            in_frames: self.in_frames.ok_or_else(|| missing(line, "in_frames"))?,
            out_frames: self.out_frames.ok_or_else(|| missing(line, "out_frames"))?,
            lossless: self.lossless.ok_or_else(|| missing(line, "lossless"))?,
            flr: self.flr,
            fairness: self.fairness,
            latency_mean: self.latency_mean,
            latency_stddev: self.latency_stddev,
            latency_ci_low: self.latency_ci_low,
            latency_ci_high: self.latency_ci_high,
            latency_ticks: self.latency_ticks,
            setup_ticks: self.setup_ticks,
            connect_ticks: self.connect_ticks,
        })
    }

    fn into_aggregate(self, line: usize) -> Result<AggregateRow> {
        Ok(AggregateRow {
            metric: self.metric.ok_or_else(|| missing(line, "metric"))?,
            suite: self.suite.ok_or_else(|| missing(line, "suite"))?,
            config: self.config,
            frame_size: self.frame_size,
            value: self.value,
            runs: self.runs.ok_or_else(|| missing(line, "runs"))?,
        })
    }
}

/// Delimited rows behind a `#`-commented copy of the spec. The header row is
/// always written.
pub fn write_csv<W: Write>(report: &MetricReport, mut out: W) -> Result<()> {
    for line in report.spec.to_text().lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut rows = report
        .runs
        .iter()
        .map(CsvRow::from)
        .chain(report.aggregates.iter().map(CsvRow::from))
        .peekable();
    if rows.peek().is_none() {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const CSV_HEADER: [&str; 27] = [
    "record",
    "run",
    "suite",
    "config",
    "frame_size",
    "repetition",
    "step",
    "load",
    "frame_rate",
    "burst_frames",
    "offered_bps",
    "delivered_bps",
    "in_frames",
    "out_frames",
    "lossless",
    "flr",
    "fairness",
    "latency_mean",
    "latency_stddev",
    "latency_ci_low",
    "latency_ci_high",
    "latency_ticks",
    "setup_ticks",
    "connect_ticks",
    "metric",
    "value",
    "runs",
];

pub fn read_csv<R: BufRead>(input: R) -> Result<MetricReport> {
    let mut spec_text = String::new();
    let mut body = String::new();
    let mut spec_lines = 0;
    for line in input.lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(rest) if body.is_empty() => {
                spec_text.push_str(rest.strip_prefix(' ').unwrap_or(rest));
                spec_text.push('\n');
                spec_lines += 1;
            }
            _ => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let spec = parse_spec(&spec_text)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut runs = Vec::new();
    let mut aggregates = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let line = spec_lines + i + 2;
        let row = row?;
        match row.record.as_str() {
            "run" => runs.push(row.into_run(line)?),
            "aggregate" => aggregates.push(row.into_aggregate(line)?),
            other => {
                return Err(Error::Parse {
                    line,
                    field: "record".into(),
                    message: format!("unknown record kind `{other}`"),
                })
            }
        }
    }
    Ok(MetricReport { spec, runs, aggregates })
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Fixed-width tables, grouped by suite then frame size, followed by the
/// aggregates and the spec.
pub fn write_table<W: Write>(report: &MetricReport, mut out: W) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "rates in effective payload bits/sec, times in ticks (ns)");
    let mut suites: Vec<Suite> = report.runs.iter().map(|r| r.suite).collect();
    suites.sort();
    suites.dedup();
    for suite in suites {
        let mut rows: Vec<&RunRow> = report.runs.iter().filter(|r| r.suite == suite).collect();
        rows.sort_by_key(|r| (r.frame_size, r.run));
        let _ = writeln!(s, "\n== {} ==", suite.as_str());
        let _ = match suite {
            Suite::Latency => writeln!(
                s,
                "{:>6} {:<18} {:>7} {:>3} {:>8} {:>14} {:>8} {:>8} {:>14} {:>12} {:>14} {:>14}",
                "run", "config", "octets", "rep", "load", "offered", "in", "out", "mean", "stddev", "ci_low", "ci_high"
            ),
            Suite::Call => writeln!(
                s,
                "{:>6} {:<18} {:>7} {:>3} {:>12} {:>12} {:>12}",
                "run", "config", "octets", "rep", "setup", "connect", "total"
            ),
            _ => writeln!(
                s,
                "{:>6} {:<18} {:>7} {:>3} {:>8} {:>10} {:>8} {:>14} {:>14} {:>8} {:>8} {:>8} {:>8}",
                "run",
                "config",
                "octets",
                "rep",
                "load",
                "fps",
                "burst",
                "offered",
                "delivered",
                "in",
                "out",
                "flr",
                "fair"
            ),
        };
        for r in rows {
            let _ = match suite {
                Suite::Latency => writeln!(
                    s,
                    "{:>6} {:<18} {:>7} {:>3} {:>8.4} {:>14.1} {:>8} {:>8} {:>14} {:>12} {:>14} {:>14}",
                    r.run,
                    r.config,
                    r.frame_size,
                    r.repetition,
                    r.load,
                    r.offered_bps,
                    r.in_frames,
                    r.out_frames,
                    r.latency_mean
                        .map_or_else(|| "unbounded".to_string(), |x| format!("{x:.1}")),
                    cell(r.latency_stddev, 1),
                    cell(r.latency_ci_low, 1),
                    cell(r.latency_ci_high, 1),
                ),
                Suite::Call => writeln!(
                    s,
                    "{:>6} {:<18} {:>7} {:>3} {:>12} {:>12} {:>12}",
                    r.run,
                    r.config,
                    r.frame_size,
                    r.repetition,
                    r.setup_ticks.map_or_else(|| "unbounded".to_string(), |t| t.to_string()),
                    r.connect_ticks
                        .map_or_else(|| "unbounded".to_string(), |t| t.to_string()),
                    r.latency_ticks
                        .map_or_else(|| "unbounded".to_string(), |t| t.to_string()),
                ),
                _ => writeln!(
                    s,
                    "{:>6} {:<18} {:>7} {:>3} {:>8.4} {:>10} {:>8} {:>14.1} {:>14} {:>8} {:>8} {:>8} {:>8}",
                    r.run,
                    r.config,
                    r.frame_size,
                    r.repetition,
                    r.load,
                    cell(r.frame_rate, 0),
                    r.burst_frames.map_or_else(|| "-".to_string(), |b| b.to_string()),
                    r.offered_bps,
                    cell(r.delivered_bps, 1),
                    r.in_frames,
                    r.out_frames,
                    cell(r.flr, 4),
                    cell(r.fairness, 4),
                ),
            };
        }
    }
    if !report.aggregates.is_empty() {
        let _ = writeln!(s, "\n== aggregates ==");
        let _ = writeln!(
            s,
            "{:<20} {:<18} {:>7} {:>18} {:>6}",
            "metric", "config", "octets", "value", "runs"
        );
        let mut aggs: Vec<&AggregateRow> = report.aggregates.iter().collect();
        let rank = |m: &str| {
            super::spec::AGGREGATE_METRICS
                .iter()
                .position(|&x| x == m)
                .unwrap_or(usize::MAX)
        };
        aggs.sort_by(|a, b| {
            rank(&a.metric)
                .cmp(&rank(&b.metric))
                .then(a.frame_size.cmp(&b.frame_size))
        });
        for a in aggs {
            let _ = writeln!(
                s,
                "{:<20} {:<18} {:>7} {:>18} {:>6}",
                a.metric,
                a.config,
                a.frame_size,
                cell(a.value, 4),
                a.runs
            );
        }
    }
    let _ = writeln!(s, "\n== spec ==");
    s.push_str(&report.spec.to_text());
    out.write_all(s.as_bytes())?;
    Ok(())
}
