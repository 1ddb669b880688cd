//! Lossless, peak and full-load throughput.
//!
//! A probe runs the system with every foreground source at `load` times its
//! full rate and counts the foreground frame copies whose first bit entered
//! in the window `[warmup, horizon)`. With `W` the window length and `D` the
//! larger of `W` and the time from window start to the last counted delivery,
//!
//! - offered rate = input frames * 8 * payload / W,
//! - throughput = complete output frames * 8 * payload / D.
//!
//! Stretching the denominator to `D` keeps a probe's throughput within the
//! payload capacity of every output it uses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fairness::fairness_index;
use super::frames::frame_outcomes;
use super::loss::frame_loss_ratio;
use crate::aal::ServiceClass;
use crate::error::{invalid, Error, Result};
use crate::sim::{simulate, Egress, Network, PortRef, RoutingTable, Trace, TrafficSpec};
use crate::topology::{max_min_allocation, VcId};
use crate::{Tick, TICKS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measurement {
    pub warmup: Tick,
    pub horizon: Tick,
}

impl Measurement {
    pub fn new(warmup: Tick, horizon: Tick) -> Result<Self> {
        if warmup >= horizon {
            return Err(invalid(format!(
                "warm-up {warmup} must end before the horizon {horizon}"
            )));
        }
        Ok(Self { warmup, horizon })
    }

    pub fn window(&self) -> Tick {
        self.horizon - self.warmup
    }
}

/// A foreground source whose rate scales with the probe load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTemplate {
    pub vc_id: VcId,
    pub payload_octets: u32,
    pub class: ServiceClass,
    /// Offered AAL payload rate at 100% load.
    pub full_bps: f64,
    pub phase: Tick,
    /// Emulated VCs the flow stands for (loopback chains); 1 otherwise.
    pub weight: u32,
}

impl FlowTemplate {
    pub fn ubr(vc_id: VcId, payload_octets: u32, full_bps: f64) -> Self {
        Self {
            vc_id,
            payload_octets,
            class: ServiceClass::Ubr,
            full_bps,
            phase: 0,
            weight: 1,
        }
    }

    fn at(&self, load: f64) -> TrafficSpec {
        self.at_rate(self.full_bps * load).starting_at(self.phase)
    }

    pub(crate) fn at_rate(&self, rate: f64) -> TrafficSpec {
        match self.class {
            ServiceClass::Cbr => TrafficSpec::cbr(self.vc_id, rate),
            ServiceClass::Signaling => TrafficSpec::signaling(self.vc_id, self.payload_octets, rate),
            ServiceClass::Ubr => TrafficSpec::ubr(self.vc_id, self.payload_octets, rate),
        }
    }
}

/// System under test plus its foreground and background load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub network: Network,
    pub routes: RoutingTable,
    pub foreground: Vec<FlowTemplate>,
    /// Sent unchanged at every load.
    pub background: Vec<TrafficSpec>,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub vc_id: VcId,
    pub leaf: u32,
    pub offered_bps: f64,
    pub in_frames: u64,
    pub out_frames: u64,
    pub throughput_bps: f64,
    pub ideal_bps: f64,
}

/// Outcome of one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub load: f64,
    pub offered_bps: f64,
    pub throughput_bps: f64,
    pub in_frames: u64,
    pub out_frames: u64,
    /// `None` when no frame entered the window (low load, short window).
    pub flr: Option<f64>,
    pub fairness: Option<f64>,
    pub flows: Vec<FlowPoint>,
}

impl LoadPoint {
    pub fn lossless(&self) -> bool {
        self.in_frames == self.out_frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Link {
    In(PortRef),
    Out(PortRef),
}

impl System {
    pub fn traffic_at(&self, load: f64) -> Vec<TrafficSpec> {
        let mut traffic: Vec<_> = self.foreground.iter().map(|f| f.at(load)).collect();
        traffic.extend(self.background.iter().cloned());
        traffic
    }

    pub fn run(&self, load: f64) -> Result<Trace> {
        if !(load > 0.0 && load <= 1.0) {
            return Err(invalid(format!("load must lie in (0, 1], got {load}")));
        }
        simulate(
            &self.network,
            &self.routes,
            &self.traffic_at(load),
            self.measurement.horizon,
        )
    }

    /// Foreground rate at 100% load on the busiest input link.
    pub fn max_ingress_full_bps(&self) -> Result<f64> {
        let mut per_port: BTreeMap<PortRef, f64> = BTreeMap::new();
        for f in &self.foreground {
            let port = self.routes.ingress_of(&self.network, f.vc_id)?;
            *per_port.entry(port).or_default() += f.full_bps;
        }
        per_port
            .into_values()
            .reduce(f64::max)
            .ok_or_else(|| invalid("system has no foreground flows"))
    }

    pub fn measure(&self, load: f64) -> Result<LoadPoint> {
        let trace = self.run(load)?;
        self.evaluate(&trace, load)
    }

    /// Window statistics of a probe trace.
    pub fn evaluate(&self, trace: &Trace, load: f64) -> Result<LoadPoint> {
        let m = self.measurement;
        let templates: BTreeMap<VcId, &FlowTemplate> = self.foreground.iter().map(|f| (f.vc_id, f)).collect();
        let mut counts: BTreeMap<(VcId, u32), (u64, u64)> = BTreeMap::new();
        let mut last_exit = m.horizon;
        for f in frame_outcomes(trace)? {
            if !templates.contains_key(&f.vc_id) || f.events.t1 < m.warmup || f.events.t1 >= m.horizon {
                continue;
            }
            let c = counts.entry((f.vc_id, f.leaf)).or_default();
            c.0 += 1;
            if let Some(t3) = f.events.t3 {
                c.1 += 1;
                last_exit = last_exit.max(t3);
            }
        }
        let window = m.window() as f64 / TICKS_PER_SEC as f64;
        let span = (last_exit - m.warmup) as f64 / TICKS_PER_SEC as f64;

        let mut flows = Vec::new();
        let mut routes = Vec::new();
        let mut capacity: BTreeMap<Link, f64> = BTreeMap::new();
        for info in trace.flows.iter().filter(|f| templates.contains_key(&f.vc_id)) {
            let t = templates[&info.vc_id];
            let (in_frames, out_frames) = counts.get(&(info.vc_id, info.leaf)).copied().unwrap_or_default();
            let bits = 8.0 * f64::from(t.payload_octets);
            let mut links = Vec::new();
            if info.leaves == 1 {
                links.push(Link::In(info.ingress));
                capacity
                    .entry(Link::In(info.ingress))
                    .or_insert(info.input_rate.payload_capacity(t.payload_octets));
            }
            let out = match info.egress {
                Egress::Port(p) | Egress::Absorbed(p) => p,
            };
            links.push(Link::Out(out));
            capacity
                .entry(Link::Out(out))
                .or_insert(info.output_rate.payload_capacity(t.payload_octets));
            routes.push(links);
            flows.push(FlowPoint {
                vc_id: info.vc_id,
                leaf: info.leaf,
                offered_bps: t.full_bps * load,
                in_frames,
                out_frames,
                throughput_bps: out_frames as f64 * bits / span,
                ideal_bps: 0.0,
            });
        }
        let index: BTreeMap<Link, usize> = capacity.keys().enumerate().map(|(i, &l)| (l, i)).collect();
        let routes: Vec<Vec<usize>> = routes.iter().map(|r| r.iter().map(|l| index[l]).collect()).collect();
        let caps: Vec<f64> = capacity.values().copied().collect();
        let demands: Vec<f64> = flows.iter().map(|f| f.offered_bps).collect();
        let ideal = max_min_allocation(&demands, &caps, &routes)?;
        for (f, i) in flows.iter_mut().zip(&ideal) {
            f.ideal_bps = *i;
        }
        let measured: Vec<f64> = flows.iter().map(|f| f.throughput_bps).collect();
        let fairness = fairness_index(&measured, &ideal).ok();

        let weight = |vc: VcId| f64::from(templates[&vc].weight);
        let in_frames: u64 = flows.iter().map(|f| f.in_frames).sum();
        let out_frames: u64 = flows.iter().map(|f| f.out_frames).sum();
        let offered_bps = flows
            .iter()
            .map(|f| {
                weight(f.vc_id) * f.in_frames as f64 * 8.0 * f64::from(templates[&f.vc_id].payload_octets) / window
            })
            .sum();
        let throughput_bps = flows.iter().map(|f| weight(f.vc_id) * f.throughput_bps).sum();
        let flr = if in_frames == 0 {
            None
        } else {
            Some(frame_loss_ratio(in_frames, out_frames)?)
        };
        Ok(LoadPoint {
            load,
            offered_bps,
            throughput_bps,
            in_frames,
            out_frames,
            flr,
            fairness,
            flows,
        })
    }
}

/// Runs probes once per load and remembers them in order.
pub struct Prober<'a> {
    system: &'a System,
    cache: BTreeMap<u64, usize>,
    points: Vec<LoadPoint>,
}

impl<'a> Prober<'a> {
    pub fn new(system: &'a System) -> Self {
        Self {
            system,
            cache: BTreeMap::new(),
            points: Vec::new(),
        }
    }

    pub fn probe(&mut self, load: f64) -> Result<&LoadPoint> {
        let idx = match self.cache.get(&load.to_bits()) {
            Some(&i) => i,
            None => {
                let point = self.system.measure(load)?;
                self.points.push(point);
                self.cache.insert(load.to_bits(), self.points.len() - 1);
                self.points.len() - 1
            }
        };
        Ok(&self.points[idx])
    }

    pub fn points(&self) -> &[LoadPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<LoadPoint> {
        self.points
    }

    fn best(&self, filter: impl Fn(&LoadPoint) -> bool) -> Option<&LoadPoint> {
        self.points.iter().filter(|p| filter(p)).max_by(|a, b| {
            a.throughput_bps
                .total_cmp(&b.throughput_bps)
                .then(b.load.total_cmp(&a.load))
        })
    }
}

/// 21 loads from 5% to 100% in equal ratios.
pub fn default_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..20).map(|k| 0.05 * 20f64.powf(f64::from(k) / 20.0)).collect();
    grid.push(1.0);
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Lossless search resolution on the busiest input link; `None` means
    /// 0.1% of that link's full foreground rate.
    pub epsilon_bps: Option<f64>,
    pub grid: Vec<f64>,
    pub golden_iterations: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            epsilon_bps: None,
            grid: default_grid(),
            golden_iterations: 6,
        }
    }
}

/// Largest zero-loss throughput, by bisection over the load with resolution
/// `epsilon_bps`. Returns the winning probe after re-running it.
pub fn lossless_throughput(prober: &mut Prober<'_>, epsilon_bps: f64) -> Result<LoadPoint> {
    let link = prober.system.max_ingress_full_bps()?;
    if !(epsilon_bps > 0.0) || epsilon_bps >= link {
        return Err(invalid(format!(
            "resolution {epsilon_bps} bps must be positive and below the link rate {link} bps"
        )));
    }
    let step = epsilon_bps / link;
    let floor = step;
    if !prober.probe(floor)?.lossless() {
        return Err(Error::BelowMeasurementFloor(floor * link));
    }
    if !prober.probe(1.0)?.lossless() {
        let (mut lo, mut hi) = (floor, 1.0);
        while hi - lo > step {
            let mid = 0.5 * (lo + hi);
            if prober.probe(mid)?.lossless() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let best = prober
        .best(LoadPoint::lossless)
        .expect("floor probe was lossless")
        .clone();
    let again = prober.system.measure(best.load)?;
    if again != best {
        return Err(Error::TraceCorruption(format!(
            "confirmation run at load {} disagrees with the first run",
            best.load
        )));
    }
    Ok(best)
}

/// Highest throughput over the grid, refined by golden-section search around
/// the best grid point. Every probe already made counts.
pub fn peak_throughput(prober: &mut Prober<'_>, grid: &[f64], golden_iterations: u32) -> Result<LoadPoint> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] <= 0.0 || grid[grid.len() - 1] > 1.0 {
        return Err(invalid("sweep grid must be non-empty, increasing and within (0, 1]"));
    }
    let mut through = Vec::with_capacity(grid.len());
    for &g in grid {
        through.push(prober.probe(g)?.throughput_bps);
    }
    let i = (0..grid.len())
        .max_by(|&a, &b| through[a].total_cmp(&through[b]).then(b.cmp(&a)))
        .expect("grid is non-empty");
    let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    if b > a {
        let mut x1 = b - phi * (b - a);
        let mut x2 = a + phi * (b - a);
        let mut f1 = prober.probe(x1)?.throughput_bps;
        let mut f2 = prober.probe(x2)?.throughput_bps;
        for _ in 0..golden_iterations {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = prober.probe(x1)?.throughput_bps;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = prober.probe(x2)?.throughput_bps;
            }
        }
    }
    Ok(prober.best(|_| true).expect("at least one probe").clone())
}

pub fn full_load_throughput(prober: &mut Prober<'_>) -> Result<LoadPoint> {
    prober.probe(1.0).cloned()
}

/// The three throughput levels of one system and frame size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputResult {
    /// `None` when even the lowest probe lost frames.
    pub lossless: Option<LoadPoint>,
    pub peak: LoadPoint,
    pub full_load: LoadPoint,
    pub grid: Vec<f64>,
    /// Every probe in the order it ran.
    pub probes: Vec<LoadPoint>,
}

impl ThroughputResult {
    pub fn lossless_bps(&self) -> Option<f64> {
        self.lossless.as_ref().map(|p| p.throughput_bps)
    }
}

pub fn throughput_levels(system: &System, params: &SearchParams) -> Result<ThroughputResult> {
    let mut prober = Prober::new(system);
    let eps = match params.epsilon_bps {
        Some(e) => e,
        None => 0.001 * system.max_ingress_full_bps()?,
    };
    let lossless = match lossless_throughput(&mut prober, eps) {
        Ok(p) => Some(p),
        Err(Error::BelowMeasurementFloor(_)) => None,
        Err(e) => return Err(e),
    };
    let peak = peak_throughput(&mut prober, &params.grid, params.golden_iterations)?;
    let full_load = full_load_throughput(&mut prober)?;
    Ok(ThroughputResult {
        lossless,
        peak,
        full_load,
        grid: params.grid.clone(),
        probes: prober.into_points(),
    })
}
