//! Test-spec text format.
//!
//! One `key = value` per line, `#` starts a comment, lists are comma
//! separated. Settings for the device under test live in a `system { ... }`
//! block; `background`, `call` and `expect` blocks are optional. Blocks do
//! not nest.
//!
//! Top-level keys (defaults in brackets):
//!
//! | key | meaning |
//! |---|---|
//! | `seed` | RNG seed for source phases (required) |
//! | `metrics` | any of `throughput`, `fairness`, `flr`, `latency`, `mfbs`, `call`, `goodput` [none] |
//! | `configs` | connection configurations, e.g. `straight, partial_cross(2), k_to_1(3)` [straight] |
//! | `frame_sizes` | AAL payload octets [64, 1518, 9188, 65536] |
//! | `load_ladder` | `search`, or a list of loads in (0, 1] [search] |
//! | `repetitions` | runs per matrix cell [1] |
//! | `duration` | ticks per throughput and goodput run [50000000] |
//! | `warmup_fraction` | share of `duration` before measurement starts [0.1] |
//! | `epsilon_bps` | lossless search resolution, `auto` is 0.1% of the busiest input [auto] |
//! | `golden_iterations` | peak refinement steps [6] |
//! | `p` | frames per latency run [1000] |
//! | `alpha` | confidence level is 1 - alpha [0.05] |
//! | `latency_start`, `latency_factor` | latency load ladder [0.125, 2] |
//! | `mfbs_ceiling` | largest burst tried, in frames [1024] |
//! | `goodput_sizes` | [64, 1518, 9188] |
//! | `goodput_fps` | frames per second per flow [2000, 4000, 6000, 8000, 10000] |
//! | `output` | report directory [report] |
//! | `formats` | any of `table`, `csv`, `jsonl` [table, csv, jsonl] |
//!
//! `system`: `ports` (required), `rate` or `rates` (required, raw link bits
//! per second), `cell_latency` [0], `buffer` [unlimited], `monitor_overhead`
//! [0], `monitor_propagation` [0].
//!
//! `background`: `config`, `class` (`cbr` or `ubr`), `rate` (effective bits
//! per second per injected stream) and, for UBR, `frame_size`. Without this
//! block latency runs carry no background load.
//!
//! `call`: `switches` [3], `hold` [0], `hierarchy_levels` [1], `setup_size`
//! [128], `connect_size` [64], `propagation` [0].
//!
//! `expect`: lines of the form `metric >= value` or `metric <= value` over
//! aggregate metric names.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aal::{LinkRate, ServiceClass};
use crate::error::{Error, Result};
use crate::topology::{build, build_latency_background, ConnectionKind};
use crate::Tick;

/// A suite of runs in the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Throughput,
    Latency,
    Mfbs,
    Call,
    Goodput,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Throughput => "throughput",
            Suite::Latency => "latency",
            Suite::Mfbs => "mfbs",
            Suite::Call => "call",
            Suite::Goodput => "goodput",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Table,
    Csv,
    Jsonl,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Table => "table",
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Table => "txt",
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(format!("unknown format `{s}` (expected table, csv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LoadLadder {
    /// Lossless bisection plus peak sweep; the probes become the runs.
    Search,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub ports: u32,
    pub rates: Vec<u64>,
    pub cell_latency: Tick,
    pub buffer_cells: Option<u32>,
    pub monitor_overhead: Tick,
    pub monitor_propagation: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub config: ConnectionKind,
    pub class: ServiceClass,
    pub rate_bps: f64,
    pub frame_size: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSpec {
    pub switches: u32,
    pub hold: Tick,
    pub hierarchy_levels: u32,
    pub setup_size: u32,
    pub connect_size: u32,
    pub propagation: Tick,
}

impl Default for CallSpec {
    fn default() -> Self {
        Self {
            switches: 3,
            hold: 0,
            hierarchy_levels: 1,
            setup_size: 128,
            connect_size: 64,
            propagation: 0,
        }
    }
}

pub const AGGREGATE_METRICS: [&str; 8] = [
    "lossless_bps",
    "peak_bps",
    "full_load_bps",
    "mean_fairness",
    "flr",
    "mfbs_octets",
    "call_latency_ticks",
    "goodput",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bound {
    AtLeast(f64),
    AtMost(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub metric: String,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub seed: u64,
    pub suites: Vec<Suite>,
    pub configs: Vec<ConnectionKind>,
    pub frame_sizes: Vec<u32>,
    pub load_ladder: LoadLadder,
    pub repetitions: u32,
    pub duration: Tick,
    pub warmup_fraction: f64,
    pub epsilon_bps: Option<f64>,
    pub golden_iterations: u32,
    pub p: usize,
    pub alpha: f64,
    pub latency_start: f64,
    pub latency_factor: f64,
    pub mfbs_ceiling: u64,
    pub goodput_sizes: Vec<u32>,
    pub goodput_fps: Vec<f64>,
    pub output: String,
    pub formats: Vec<Format>,
    pub system: SystemSpec,
    pub background: Option<BackgroundSpec>,
    pub call: CallSpec,
    pub expect: Vec<Expectation>,
}

impl TestSpec {
    pub fn has(&self, suite: Suite) -> bool {
        self.suites.contains(&suite)
    }

    pub fn warmup(&self) -> Tick {
        (self.duration as f64 * self.warmup_fraction).round() as Tick
    }

    pub fn link_rates(&self) -> Result<Vec<LinkRate>> {
        self.system.rates.iter().map(|&r| LinkRate::new(r)).collect()
    }

    /// Number of throughput runs, when the load ladder is fixed.
    pub fn throughput_runs(&self) -> Option<usize> {
        match &self.load_ladder {
            LoadLadder::Fixed(loads) if self.has(Suite::Throughput) => {
                Some(self.frame_sizes.len() * self.configs.len() * loads.len() * self.repetitions as usize)
            }
            LoadLadder::Fixed(_) => Some(0),
            LoadLadder::Search => None,
        }
    }

    /// The spec in canonical form, every default written out.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[String]| v.join(", ");
        let nums = |v: &[u32]| list(&v.iter().map(u32::to_string).collect::<Vec<_>>());
        let floats = |v: &[f64]| list(&v.iter().map(f64::to_string).collect::<Vec<_>>());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "metrics = {}",
            list(&self.suites.iter().map(|m| m.as_str().to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(
            s,
            "configs = {}",
            list(&self.configs.iter().map(ToString::to_string).collect::<Vec<_>>())
        );
        let _ = writeln!(s, "frame_sizes = {}", nums(&self.frame_sizes));
        match &self.load_ladder {
            LoadLadder::Search => s.push_str("load_ladder = search\n"),
            LoadLadder::Fixed(l) => {
                let _ = writeln!(s, "load_ladder = {}", floats(l));
            }
        }
        let _ = writeln!(s, "repetitions = {}", self.repetitions);
        let _ = writeln!(s, "duration = {}", self.duration);
        let _ = writeln!(s, "warmup_fraction = {}", self.warmup_fraction);
        match self.epsilon_bps {
            Some(e) => {
                let _ = writeln!(s, "epsilon_bps = {e}");
            }
            None => s.push_str("epsilon_bps = auto\n"),
        }
        let _ = writeln!(s, "golden_iterations = {}", self.golden_iterations);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "latency_start = {}", self.latency_start);
        let _ = writeln!(s, "latency_factor = {}", self.latency_factor);
        let _ = writeln!(s, "mfbs_ceiling = {}", self.mfbs_ceiling);
        let _ = writeln!(s, "goodput_sizes = {}", nums(&self.goodput_sizes));
        let _ = writeln!(s, "goodput_fps = {}", floats(&self.goodput_fps));
        let _ = writeln!(s, "output = {}", self.output);
        let _ = writeln!(
            s,
            "formats = {}",
            list(&self.formats.iter().map(|f| f.as_str().to_string()).collect::<Vec<_>>())
        );

        let sys = &self.system;
        s.push_str("system {\n");
        let _ = writeln!(s, "    ports = {}", sys.ports);
        if sys.rates.windows(2).all(|w| w[0] == w[1]) {
            let _ = writeln!(s, "    rate = {}", sys.rates[0]);
        } else {
            let _ = writeln!(
                s,
                "    rates = {}",
                list(&sys.rates.iter().map(u64::to_string).collect::<Vec<_>>())
            );
        }
        let _ = writeln!(s, "    cell_latency = {}", sys.cell_latency);
        match sys.buffer_cells {
            Some(b) => {
                let _ = writeln!(s, "    buffer = {b}");
            }
            None => s.push_str("    buffer = unlimited\n"),
        }
        let _ = writeln!(s, "    monitor_overhead = {}", sys.monitor_overhead);
        let _ = writeln!(s, "    monitor_propagation = {}", sys.monitor_propagation);
        s.push_str("}\n");

        if let Some(bg) = &self.background {
            s.push_str("background {\n");
            let _ = writeln!(s, "    config = {}", bg.config);
            let _ = writeln!(s, "    class = {}", bg.class.as_str());
            let _ = writeln!(s, "    rate = {}", bg.rate_bps);
            if let Some(f) = bg.frame_size {
                let _ = writeln!(s, "    frame_size = {f}");
            }
            s.push_str("}\n");
        }

        let c = &self.call;
        s.push_str("call {\n");
        let _ = writeln!(s, "    switches = {}", c.switches);
        let _ = writeln!(s, "    hold = {}", c.hold);
        let _ = writeln!(s, "    hierarchy_levels = {}", c.hierarchy_levels);
        let _ = writeln!(s, "    setup_size = {}", c.setup_size);
        let _ = writeln!(s, "    connect_size = {}", c.connect_size);
        let _ = writeln!(s, "    propagation = {}", c.propagation);
        s.push_str("}\n");

        if !self.expect.is_empty() {
            s.push_str("expect {\n");
            for e in &self.expect {
                let _ = match e.bound {
                    Bound::AtLeast(v) => writeln!(s, "    {} >= {v}", e.metric),
                    Bound::AtMost(v) => writeln!(s, "    {} <= {v}", e.metric),
                };
            }
            s.push_str("}\n");
        }
        s
    }
}

#[derive(Debug)]
enum Item {
    Line {
        no: usize,
        text: String,
    },
    Block {
        no: usize,
        name: String,
        lines: Vec<(usize, String)>,
    },
}

fn perr(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// A block being read: its opening line, name and numbered body lines.
type OpenBlock = (usize, String, Vec<(usize, String)>);

fn lex(text: &str) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    let mut open: Option<OpenBlock> = None;
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_suffix('{') {
            let name = name.trim();
            if open.is_some() {
                return Err(perr(no, name, "blocks do not nest"));
            }
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(perr(no, name, "malformed block name"));
            }
            open = Some((no, name.to_string(), Vec::new()));
        } else if line == "}" {
            let (bno, name, lines) = open.take().ok_or_else(|| perr(no, "}", "no block to close"))?;
            items.push(Item::Block { no: bno, name, lines });
        } else if let Some((_, _, lines)) = open.as_mut() {
            lines.push((no, line.to_string()));
        } else {
            items.push(Item::Line {
                no,
                text: line.to_string(),
            });
        }
    }
    if let Some((no, name, _)) = open {
        return Err(perr(no, &name, "block is never closed"));
    }
    Ok(items)
}

/// `key = value` lines of one scope, consumed as they are read.
struct Scope {
    name: String,
    entries: BTreeMap<String, (usize, String)>,
    end: usize,
}

impl Scope {
    fn new(name: &str, lines: &[(usize, String)], end: usize) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, text) in lines {
            let (k, v) = text
                .split_once('=')
                .ok_or_else(|| perr(*no, text, "expected `key = value`"))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), (*no, v.trim().to_string())).is_some() {
                return Err(perr(*no, &k, "key given twice"));
            }
        }
        Ok(Self {
            name: name.to_string(),
            entries,
            end,
        })
    }

    fn field(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T> {
        match self.take_raw(key) {
            Some((no, v)) => v
                .parse()
                .map_err(|_| perr(no, &self.field(key), format!("cannot parse `{v}`"))),
            None => default.ok_or_else(|| perr(self.end, &self.field(key), "missing required key")),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<(usize, Vec<T>)> {
        match self.take_raw(key) {
            Some((no, v)) => {
                let items: Result<Vec<T>> = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| perr(no, &self.field(key), format!("cannot parse `{s}`")))
                    })
                    .collect();
                Ok((no, items?))
            }
            None => Ok((self.end, default)),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            Some((k, (no, _))) => {
                let field = if self.name.is_empty() {
                    k
                } else {
                    format!("{}.{k}", self.name)
                };
                Err(perr(no, &field, "unknown key"))
            }
            None => Ok(()),
        }
    }
}

/// Splits a comma list while leaving commas inside parentheses alone.
fn split_top(v: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in v.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_suites(no: usize, v: &str) -> Result<Vec<Suite>> {
    let mut suites = Vec::new();
    for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let s = match name {
            "throughput" | "fairness" | "flr" => Suite::Throughput,
            "latency" => Suite::Latency,
            "mfbs" => Suite::Mfbs,
            "call" => Suite::Call,
            "goodput" => Suite::Goodput,
            other => return Err(perr(no, "metrics", format!("unknown metric `{other}`"))),
        };
        if !suites.contains(&s) {
            suites.push(s);
        }
    }
    suites.sort();
    Ok(suites)
}

fn parse_system(mut sc: Scope) -> Result<SystemSpec> {
    let ports: u32 = sc.parse("ports", None)?;
    if ports < 2 {
        return Err(perr(sc.end, "system.ports", "a switch needs at least two ports"));
    }
    let rate = sc.take_raw("rate");
    let rates = sc.take_raw("rates");
    let rates: Vec<u64> = match (rate, rates) {
        (Some((no, _)), Some(_)) => return Err(perr(no, "system.rate", "give either `rate` or `rates`")),
        (Some((no, v)), None) => {
            let r: u64 = v
                .parse()
                .map_err(|_| perr(no, "system.rate", format!("cannot parse `{v}`")))?;
            vec![r; ports as usize]
        }
        (None, Some((no, v))) => {
            let rs: Result<Vec<u64>> = v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| perr(no, "system.rates", format!("cannot parse `{}`", s.trim())))
                })
                .collect();
            let rs = rs?;
            if rs.len() != ports as usize {
                return Err(perr(
                    no,
                    "system.rates",
                    format!("{} rates for {ports} ports", rs.len()),
                ));
            }
            rs
        }
        (None, None) => return Err(perr(sc.end, "system.rate", "missing required key")),
    };
    for &r in &rates {
        LinkRate::new(r).map_err(|e| perr(sc.end, "system.rate", e.to_string()))?;
    }
    let cell_latency = sc.parse("cell_latency", Some(0))?;
    let buffer_cells = match sc.take_raw("buffer") {
        None => None,
        Some((_, v)) if v == "unlimited" => None,
        Some((no, v)) => match v.parse::<u32>() {
            Ok(b) if b > 0 => Some(b),
            _ => {
                return Err(perr(
                    no,
                    "system.buffer",
                    format!("expected a positive cell count or `unlimited`, got `{v}`"),
                ))
            }
        },
    };
    let monitor_overhead = sc.parse("monitor_overhead", Some(0))?;
    let monitor_propagation = sc.parse("monitor_propagation", Some(0))?;
    sc.finish()?;
    Ok(SystemSpec {
        ports,
        rates,
        cell_latency,
        buffer_cells,
        monitor_overhead,
        monitor_propagation,
    })
}

fn parse_background(mut sc: Scope, rates: &[LinkRate]) -> Result<BackgroundSpec> {
    let (cno, config) = match sc.take_raw("config") {
        Some((no, v)) => (
            no,
            v.parse::<ConnectionKind>()
                .map_err(|e| perr(no, "background.config", e.to_string()))?,
        ),
        None => return Err(perr(sc.end, "background.config", "missing required key")),
    };
    build_latency_background(config, rates).map_err(|e| perr(cno, "background.config", e.to_string()))?;
    let (clno, class) = match sc.take_raw("class") {
        Some((no, v)) => match v.as_str() {
            "cbr" => (no, ServiceClass::Cbr),
            "ubr" => (no, ServiceClass::Ubr),
            _ => {
                return Err(perr(
                    no,
                    "background.class",
                    format!("expected `cbr` or `ubr`, got `{v}`"),
                ))
            }
        },
        None => return Err(perr(sc.end, "background.class", "missing required key")),
    };
    let rate_bps: f64 = sc.parse("rate", None)?;
    if !(rate_bps > 0.0 && rate_bps.is_finite()) {
        return Err(perr(sc.end, "background.rate", "rate must be positive"));
    }
    let frame_size: Option<u32> = match sc.take_raw("frame_size") {
        Some((no, _)) if class == ServiceClass::Cbr => {
            return Err(perr(no, "background.frame_size", "CBR background has no frame size"))
        }
        Some((no, v)) => match v.parse::<u32>() {
            Ok(f) if f > 0 => Some(f),
            _ => {
                return Err(perr(
                    no,
                    "background.frame_size",
                    format!("expected a positive size, got `{v}`"),
                ))
            }
        },
        None if class == ServiceClass::Ubr => {
            return Err(perr(clno, "background.frame_size", "UBR background needs a frame size"))
        }
        None => None,
    };
    sc.finish()?;
    Ok(BackgroundSpec {
        config,
        class,
        rate_bps,
        frame_size,
    })
}

fn parse_call(mut sc: Scope) -> Result<CallSpec> {
    let d = CallSpec::default();
    let c = CallSpec {
        switches: sc.parse("switches", Some(d.switches))?,
        hold: sc.parse("hold", Some(d.hold))?,
        hierarchy_levels: sc.parse("hierarchy_levels", Some(d.hierarchy_levels))?,
        setup_size: sc.parse("setup_size", Some(d.setup_size))?,
        connect_size: sc.parse("connect_size", Some(d.connect_size))?,
        propagation: sc.parse("propagation", Some(d.propagation))?,
    };
    if c.switches == 0 {
        return Err(perr(sc.end, "call.switches", "a call crosses at least one switch"));
    }
    if c.setup_size == 0 || c.connect_size == 0 {
        return Err(perr(sc.end, "call.setup_size", "message sizes must be positive"));
    }
    sc.finish()?;
    Ok(c)
}

fn parse_expect(lines: &[(usize, String)]) -> Result<Vec<Expectation>> {
    let mut out = Vec::new();
    for (no, text) in lines {
        let (metric, bound, v) = if let Some((m, v)) = text.split_once(">=") {
            (m.trim(), true, v.trim())
        } else if let Some((m, v)) = text.split_once("<=") {
            (m.trim(), false, v.trim())
        } else {
            return Err(perr(*no, text, "expected `metric >= value` or `metric <= value`"));
        };
        if !AGGREGATE_METRICS.contains(&metric) {
            return Err(perr(*no, metric, "unknown aggregate metric"));
        }
        let v: f64 = v
            .parse()
            .map_err(|_| perr(*no, metric, format!("cannot parse `{v}`")))?;
        out.push(Expectation {
            metric: metric.to_string(),
            bound: if bound { Bound::AtLeast(v) } else { Bound::AtMost(v) },
        });
    }
    Ok(out)
}

fn positive_sizes(no: usize, field: &str, sizes: &[u32]) -> Result<()> {
    if sizes.is_empty() {
        return Err(perr(no, field, "list is empty"));
    }
    if sizes.contains(&0) {
        return Err(perr(no, field, "frame sizes must be positive"));
    }
    Ok(())
}

/// Parses and validates a test spec. Every default is resolved in the result.
pub fn parse_spec(text: &str) -> Result<TestSpec> {
    let items = lex(text)?;
    let last_line = text.lines().count().max(1);
    let mut top_lines = Vec::new();
    let mut blocks: BTreeMap<String, (usize, Vec<(usize, String)>)> = BTreeMap::new();
    for item in items {
        match item {
            Item::Line { no, text } => top_lines.push((no, text)),
            Item::Block { no, name, lines } => {
                if !["system", "background", "call", "expect"].contains(&name.as_str()) {
                    return Err(perr(no, &name, "unknown block"));
                }
                if blocks.insert(name.clone(), (no, lines)).is_some() {
                    return Err(perr(no, &name, "block given twice"));
                }
            }
        }
    }
    let mut top = Scope::new("", &top_lines, last_line)?;

    let (sys_no, sys_lines) = blocks
        .remove("system")
        .ok_or_else(|| perr(last_line, "system", "missing system description"))?;
    let system = parse_system(Scope::new("system", &sys_lines, sys_no)?)?;
    let rates: Vec<LinkRate> = system.rates.iter().map(|&r| LinkRate::new(r)).collect::<Result<_>>()?;

    let seed: u64 = top.parse("seed", None)?;
    let suites = match top.take_raw("metrics") {
        Some((no, v)) => parse_suites(no, &v)?,
        None => Vec::new(),
    };
    let configs = match top.take_raw("configs") {
        Some((no, v)) => {
            let mut out = Vec::new();
            for s in split_top(&v) {
                let kind: ConnectionKind = s.parse().map_err(|e: Error| perr(no, "configs", e.to_string()))?;
                build(kind, system.ports).map_err(|e| perr(no, "configs", e.to_string()))?;
                out.push(kind);
            }
            if out.is_empty() {
                return Err(perr(no, "configs", "list is empty"));
            }
            out
        }
        None => vec![ConnectionKind::Straight],
    };
    let (fno, frame_sizes) = top.list("frame_sizes", vec![64, 1518, 9188, 65536])?;
    positive_sizes(fno, "frame_sizes", &frame_sizes)?;
    let load_ladder = match top.take_raw("load_ladder") {
        None => LoadLadder::Search,
        Some((_, v)) if v == "search" => LoadLadder::Search,
        Some((no, v)) => {
            let loads: Vec<f64> = v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| perr(no, "load_ladder", format!("cannot parse `{}`", s.trim())))
                })
                .collect::<Result<_>>()?;
            if loads.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
                return Err(perr(no, "load_ladder", "loads must lie in (0, 1]"));
            }
            let mut sorted = loads.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() != loads.len() {
                return Err(perr(no, "load_ladder", "loads must be distinct"));
            }
            LoadLadder::Fixed(loads)
        }
    };
    let repetitions: u32 = top.parse("repetitions", Some(1))?;
    if repetitions == 0 {
        return Err(perr(last_line, "repetitions", "at least one repetition"));
    }
    let duration: Tick = top.parse("duration", Some(50_000_000))?;
    let warmup_fraction: f64 = top.parse("warmup_fraction", Some(0.1))?;
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(perr(last_line, "warmup_fraction", "must lie in [0, 1)"));
    }
    if duration == 0 {
        return Err(perr(last_line, "duration", "must be positive"));
    }
    let epsilon_bps = match top.take_raw("epsilon_bps") {
        None => None,
        Some((_, v)) if v == "auto" => None,
        Some((no, v)) => match v.parse::<f64>() {
            Ok(e) if e > 0.0 => Some(e),
            _ => {
                return Err(perr(
                    no,
                    "epsilon_bps",
                    format!("expected a positive rate or `auto`, got `{v}`"),
                ))
            }
        },
    };
    let golden_iterations = top.parse("golden_iterations", Some(6))?;
    let p: usize = top.parse("p", Some(1000))?;
    if p < 2 {
        return Err(perr(last_line, "p", "latency runs need at least two frames"));
    }
    let alpha: f64 = top.parse("alpha", Some(0.05))?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(perr(last_line, "alpha", "must lie in (0, 1)"));
    }
    let latency_start: f64 = top.parse("latency_start", Some(0.125))?;
    let latency_factor: f64 = top.parse("latency_factor", Some(2.0))?;
    if !(latency_start > 0.0 && latency_start <= 1.0) || !(latency_factor > 1.0) {
        return Err(perr(
            last_line,
            "latency_start",
            "need 0 < latency_start <= 1 and latency_factor > 1",
        ));
    }
    let mfbs_ceiling: u64 = top.parse("mfbs_ceiling", Some(1024))?;
    if mfbs_ceiling == 0 {
        return Err(perr(last_line, "mfbs_ceiling", "must be positive"));
    }
    let (gno, goodput_sizes) = top.list("goodput_sizes", vec![64, 1518, 9188])?;
    positive_sizes(gno, "goodput_sizes", &goodput_sizes)?;
    let (fpsno, goodput_fps) = top.list("goodput_fps", vec![2000.0, 4000.0, 6000.0, 8000.0, 10000.0])?;
    if goodput_fps.is_empty() || goodput_fps.iter().any(|&f: &f64| !(f > 0.0 && f.is_finite())) {
        return Err(perr(fpsno, "goodput_fps", "frame rates must be positive"));
    }
    let output: String = top.parse("output", Some("report".to_string()))?;
    let (_, formats) = top.list("formats", vec![Format::Table, Format::Csv, Format::Jsonl])?;
    top.finish()?;

    let background = match blocks.remove("background") {
        Some((no, lines)) => Some(parse_background(Scope::new("background", &lines, no)?, &rates)?),
        None => None,
    };
    let call = match blocks.remove("call") {
        Some((no, lines)) => parse_call(Scope::new("call", &lines, no)?)?,
        None => CallSpec::default(),
    };
    let expect = match blocks.remove("expect") {
        Some((_, lines)) => parse_expect(&lines)?,
        None => Vec::new(),
    };
    if suites.contains(&Suite::Latency) && system.ports < 3 {
        return Err(perr(sys_no, "system.ports", "latency runs need at least three ports"));
    }

    Ok(TestSpec {
        seed,
        suites,
        configs,
        frame_sizes,
        load_ladder,
        repetitions,
        duration,
        warmup_fraction,
        epsilon_bps,
        golden_iterations,
        p,
        alpha,
        latency_start,
        latency_factor,
        mfbs_ceiling,
        goodput_sizes,
        goodput_fps,
        output,
        formats,
        system,
        background,
        call,
        expect,
    })
}
