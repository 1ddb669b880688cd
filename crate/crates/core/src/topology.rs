//! Connection configurations and ideal allocations.
//!
//! Builders return immutable [`ConnectionConfig`]s describing virtual connections
//! on a single switch. Ports are rotated by a fixed permutation so that two runs
//! of the same builder always produce the same VC ids and pairings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::aal::LinkRate;
use crate::error::{invalid, Error, Result};

/// Port index within one switch.
pub type PortId = u32;
pub type VcId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "param")]
pub enum ConnectionKind {
    Straight,
    FullCross,
    PartialCross(u32),
    KTo1(u32),
    Multicast,
}

impl fmt::Display for ConnectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConnectionKind::Straight => f.write_str("straight"),
            ConnectionKind::FullCross => f.write_str("full_cross"),
            ConnectionKind::PartialCross(m) => write!(f, "partial_cross({m})"),
            ConnectionKind::KTo1(k) => write!(f, "k_to_1({k})"),
            ConnectionKind::Multicast => f.write_str("multicast"),
        }
    }
}

impl std::str::FromStr for ConnectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(invalid(format!("malformed connection kind `{s}`"))),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<u32> {
            a.ok_or_else(|| invalid(format!("`{name}` needs a parameter")))?
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad parameter in `{s}`")))
        };
        match (name.trim(), arg) {
            ("straight", None) => Ok(ConnectionKind::Straight),
            ("full_cross", None) => Ok(ConnectionKind::FullCross),
            ("partial_cross", a) => Ok(ConnectionKind::PartialCross(num(a)?)),
            ("k_to_1", a) => Ok(ConnectionKind::KTo1(num(a)?)),
            ("multicast", None) => Ok(ConnectionKind::Multicast),
            _ => Err(invalid(format!("unknown connection kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VcRole {
    Foreground,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Establishment {
    Permanent,
    Switched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionLevel {
    Channel,
    Path,
}

/// A virtual connection through one switch.
///
/// `next_vc` is the label a cell carries after leaving on an output port. It is
/// how loopback chains hand a frame from one emulated VC to the next; `None`
/// keeps the VC's own id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vc {
    pub vc_id: VcId,
    pub input_port: PortId,
    pub output_ports: Vec<PortId>,
    pub role: VcRole,
    pub establishment: Establishment,
    pub level: ConnectionLevel,
    pub next_vc: Option<VcId>,
}

impl Vc {
    pub fn new(vc_id: VcId, input_port: PortId, output_ports: Vec<PortId>) -> Self {
        Self {
            vc_id,
            input_port,
            output_ports,
            role: VcRole::Foreground,
            establishment: Establishment::Permanent,
            level: ConnectionLevel::Channel,
            next_vc: None,
        }
    }

    pub fn egress_label(&self) -> VcId {
        self.next_vc.unwrap_or(self.vc_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionConfig {
    pub kind: ConnectionKind,
    pub vcs: Vec<Vc>,
    pub n_ports: u32,
}

impl ConnectionConfig {
    /// Number of VCs the kind prescribes on `n_ports` ports.
    pub fn expected_vc_count(kind: ConnectionKind, n_ports: u32) -> u32 {
        match kind {
            ConnectionKind::Straight => n_ports,
            ConnectionKind::FullCross => n_ports * (n_ports - 1),
            ConnectionKind::PartialCross(m) => n_ports * m,
            ConnectionKind::KTo1(k) => k,
            ConnectionKind::Multicast => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::expected_vc_count(self.kind, self.n_ports);
        if self.vcs.len() as u32 != expected {
            return Err(invalid(format!(
                "{} on {} ports needs {expected} VCs, found {}",
                self.kind,
                self.n_ports,
                self.vcs.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for vc in &self.vcs {
            if !ids.insert(vc.vc_id) {
                return Err(invalid(format!("duplicate VC id {}", vc.vc_id)));
            }
            if vc.output_ports.is_empty() {
                return Err(invalid(format!("VC {} has no output port", vc.vc_id)));
            }
            if vc.output_ports.len() > 1 && self.kind != ConnectionKind::Multicast {
                return Err(invalid(format!(
                    "VC {} is multicast in a {} config",
                    vc.vc_id, self.kind
                )));
            }
            for &p in std::iter::once(&vc.input_port).chain(&vc.output_ports) {
                if p >= self.n_ports {
                    return Err(invalid(format!("VC {} uses missing port {p}", vc.vc_id)));
                }
            }
            if vc.output_ports.contains(&vc.input_port) {
                return Err(invalid(format!("VC {} loops onto its own input port", vc.vc_id)));
            }
        }
        Ok(())
    }

    pub fn vc(&self, id: VcId) -> Option<&Vc> {
        self.vcs.iter().find(|v| v.vc_id == id)
    }

    /// VCs grouped by input port.
    pub fn by_input_port(&self) -> BTreeMap<PortId, Vec<&Vc>> {
        let mut map: BTreeMap<PortId, Vec<&Vc>> = BTreeMap::new();
        for vc in &self.vcs {
            map.entry(vc.input_port).or_default().push(vc);
        }
        map
    }
}

fn need_ports(n: u32) -> Result<()> {
    if n < 2 {
        return Err(invalid(format!(
            "a connection configuration needs at least 2 ports, got {n}"
        )));
    }
    Ok(())
}

fn offsets_config(kind: ConnectionKind, n: u32, offsets: impl Iterator<Item = u32> + Clone) -> ConnectionConfig {
    let mut vcs = Vec::new();
    for i in 0..n {
        for d in offsets.clone() {
            vcs.push(Vc::new(vcs.len() as VcId, i, vec![(i + d) % n]));
        }
    }
    ConnectionConfig { kind, vcs, n_ports: n }
}

/// n VCs, port i to port (i+1) mod n.
pub fn build_straight(n: u32) -> Result<ConnectionConfig> {
    need_ports(n)?;
    Ok(offsets_config(ConnectionKind::Straight, n, 1..2))
}

/// One VC per ordered port pair.
pub fn build_full_cross(n: u32) -> Result<ConnectionConfig> {
    need_ports(n)?;
    Ok(offsets_config(ConnectionKind::FullCross, n, 1..n))
}

/// Port i sends to ports i+1 ..= i+m (mod n).
pub fn build_partial_cross(n: u32, m: u32) -> Result<ConnectionConfig> {
    need_ports(n)?;
    if m == 0 || m > n - 1 {
        return Err(invalid(format!("partial cross needs 1 <= m <= {}, got {m}", n - 1)));
    }
    Ok(offsets_config(ConnectionKind::PartialCross(m), n, 1..m + 1))
}

/// k inputs converging on `out_port`. The inputs are the k ports following
/// `out_port` in rotation order.
pub fn build_k_to_1(k: u32, out_port: PortId, n: u32) -> Result<ConnectionConfig> {
    need_ports(n)?;
    if out_port >= n {
        return Err(invalid(format!("output port {out_port} does not exist on {n} ports")));
    }
    if k < 2 || k > n - 1 {
        return Err(invalid(format!(
            "k-to-1 needs 2 <= k <= {} on {n} ports, got {k}",
            n - 1
        )));
    }
    let inputs: Vec<PortId> = (1..=k).map(|j| (out_port + j) % n).collect();
    build_k_to_1_from(&inputs, out_port, n)
}

pub fn build_k_to_1_from(inputs: &[PortId], out_port: PortId, n: u32) -> Result<ConnectionConfig> {
    need_ports(n)?;
    if inputs.contains(&out_port) {
        return Err(invalid(format!("output port {out_port} is also an input")));
    }
    let distinct: BTreeSet<_> = inputs.iter().collect();
    if distinct.len() != inputs.len() {
        return Err(invalid("k-to-1 inputs must be distinct"));
    }
    let config = ConnectionConfig {
        kind: ConnectionKind::KTo1(inputs.len() as u32),
        vcs: inputs
            .iter()
            .enumerate()
            .map(|(i, &p)| Vc::new(i as VcId, p, vec![out_port]))
            .collect(),
        n_ports: n,
    };
    config.validate()?;
    Ok(config)
}

/// One VC from port 0 replicated to every other port.
pub fn build_multicast(n: u32) -> Result<ConnectionConfig> {
    need_ports(n)?;
    Ok(ConnectionConfig {
        kind: ConnectionKind::Multicast,
        vcs: vec![Vc::new(0, 0, (1..n).collect())],
        n_ports: n,
    })
}

pub fn build(kind: ConnectionKind, n: u32) -> Result<ConnectionConfig> {
    match kind {
        ConnectionKind::Straight => build_straight(n),
        ConnectionKind::FullCross => build_full_cross(n),
        ConnectionKind::PartialCross(m) => build_partial_cross(n, m),
        ConnectionKind::KTo1(k) => build_k_to_1(k, 0, n),
        ConnectionKind::Multicast => build_multicast(n),
    }
}

/// Result of laying out a single-analyzer loopback test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopbackConfig {
    /// Emulated VCs, ids in chain order: VC j hands its cells to VC j+1.
    pub config: ConnectionConfig,
    pub monitor_port: PortId,
    pub loopback_ports: BTreeSet<PortId>,
}

/// Port order that alternates network modules round-robin.
fn module_interleave(module_map: &[u32]) -> Vec<PortId> {
    let mut by_module: BTreeMap<u32, Vec<PortId>> = BTreeMap::new();
    for (p, &m) in module_map.iter().enumerate() {
        by_module.entry(m).or_default().push(p as PortId);
    }
    let mut queues: Vec<std::collections::VecDeque<PortId>> = by_module.into_values().map(Into::into).collect();
    let mut order = Vec::with_capacity(module_map.len());
    while order.len() < module_map.len() {
        for q in queues.iter_mut() {
            if let Some(p) = q.pop_front() {
                order.push(p);
            }
        }
    }
    order
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Emulates an n-to-m partial cross with one monitor link and loopbacks on every
/// other port.
///
/// Ports are ordered so that successive positions alternate network modules, and
/// the m offsets (in that order) are chosen to maximize module crossings. The
/// resulting VC graph has in- and out-degree m at every port; the VCs are
/// chained along an Euler circuit starting and ending at the monitor port, so a
/// single injected frame crosses the switch n*m times.
pub fn build_loopback_throughput(n_ports: u32, m: u32, module_map: &[u32]) -> Result<LoopbackConfig> {
    need_ports(n_ports)?;
    if module_map.len() != n_ports as usize {
        return Err(invalid(format!(
            "module map lists {} ports but the switch has {n_ports}",
            module_map.len()
        )));
    }
    if m == 0 || m > n_ports - 1 {
        return Err(invalid(format!(
            "loopback emulation needs 1 <= m <= {}, got {m}",
            n_ports - 1
        )));
    }
    let n = n_ports as usize;
    let order = module_interleave(module_map);
    let module = |pos: usize| module_map[order[pos % n] as usize];

    let mut scored: Vec<(usize, u32)> = (1..n_ports)
        .map(|d| {
            let crossings = (0..n).filter(|&k| module(k) != module(k + d as usize)).count();
            (crossings, d)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut offsets: Vec<u32> = scored.iter().take(m as usize).map(|&(_, d)| d).collect();
    if offsets.iter().fold(n_ports, |g, &d| gcd(g, d)) != 1 {
        // chain would not reach every port; trade the weakest offset for 1
        offsets.pop();
        offsets.push(1);
    }
    offsets.sort_unstable();

    // adjacency in position space, consumed back to front by Hierholzer
    let mut adj: Vec<Vec<usize>> = (0..n)
        .map(|k| offsets.iter().rev().map(|&d| (k + d as usize) % n).collect())
        .collect();
    let mut stack = vec![0usize];
    let mut circuit = Vec::new();
    while let Some(&v) = stack.last() {
        if let Some(w) = adj[v].pop() {
            stack.push(w);
        } else {
            circuit.push(v);
            stack.pop();
        }
    }
    circuit.reverse();
    if circuit.len() != n * m as usize + 1 {
        return Err(invalid("loopback chain does not cover every emulated VC"));
    }

    let hops = circuit.len() - 1;
    let vcs = circuit
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let mut vc = Vc::new(j as VcId, order[w[0]], vec![order[w[1]]]);
            vc.next_vc = (j + 1 < hops).then_some(j as VcId + 1);
            vc
        })
        .collect();
    let monitor_port = order[0];
    let config = ConnectionConfig {
        kind: ConnectionKind::PartialCross(m),
        vcs,
        n_ports,
    };
    config.validate()?;
    Ok(LoopbackConfig {
        config,
        monitor_port,
        loopback_ports: (0..n_ports).filter(|&p| p != monitor_port).collect(),
    })
}

/// Load limits of a latency test, in raw link bits per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadBudget {
    /// Full foreground load: the lesser of the foreground input and output link rates.
    pub ffl_bps: u64,
    /// Maximum background load: every link rate except the foreground input link.
    pub mbl_bps: u64,
}

impl LoadBudget {
    pub fn new(port_rates: &[LinkRate], fg_in: PortId, fg_out: PortId) -> Self {
        let ffl_bps = port_rates[fg_in as usize].bps().min(port_rates[fg_out as usize].bps());
        let mbl_bps = port_rates
            .iter()
            .enumerate()
            .filter(|&(p, _)| p != fg_in as usize)
            .map(|(_, r)| r.bps())
            .sum();
        Self { ffl_bps, mbl_bps }
    }
}

/// Foreground/background layout for a latency test on a w-port switch with two
/// analyzer links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyLayout {
    pub foreground: Vc,
    pub background: ConnectionConfig,
    /// Background VCs whose input is the analyzer link; traffic is injected there.
    pub background_ingress: Vec<VcId>,
    pub budget: LoadBudget,
    pub loopback_ports: BTreeSet<PortId>,
    pub module_map: Vec<u32>,
}

/// Lays out a latency test.
///
/// The foreground VC runs from port 0 to the first port of the second network
/// module (ports split into two halves). Background traffic enters on the
/// foreground output port and leaves on the foreground input port, the reverse
/// directions of the two analyzer links; the other w-2 ports are looped back.
/// The analyzer pair plus the loopback ports form n = w-1 virtual ports over
/// which `kind` is built; cells of VC (i -> j) continue on VC (j -> 2j-i), so
/// every background stream starts and ends on the analyzer.
pub fn build_latency_background(kind: ConnectionKind, port_rates: &[LinkRate]) -> Result<LatencyLayout> {
    let w = port_rates.len() as u32;
    if w < 3 {
        return Err(invalid(format!("latency layout needs at least 3 ports, got {w}")));
    }
    let module_map: Vec<u32> = (0..w).map(|p| u32::from(p >= w / 2)).collect();
    let fg_in: PortId = 0;
    let fg_out: PortId = w / 2;
    let n = w - 1;

    // virtual port 0 is the analyzer pair; the rest alternate modules
    let mut remaining: Vec<PortId> = (0..w).filter(|&p| p != fg_in && p != fg_out).collect();
    let mut virt: Vec<PortId> = vec![fg_out];
    let mut prev_module = module_map[fg_out as usize];
    while !remaining.is_empty() {
        let pick = remaining
            .iter()
            .position(|&p| module_map[p as usize] != prev_module)
            .unwrap_or(0);
        let p = remaining.remove(pick);
        prev_module = module_map[p as usize];
        virt.push(p);
    }
    let in_port = |v: u32| virt[v as usize];
    let out_port = |v: u32| if v == 0 { fg_in } else { virt[v as usize] };

    let offsets: Vec<u32> = match kind {
        ConnectionKind::Straight => vec![1],
        ConnectionKind::FullCross => (1..n).collect(),
        ConnectionKind::PartialCross(m) if m >= 1 && m < n => (1..=m).collect(),
        ConnectionKind::Multicast => Vec::new(),
        other => {
            return Err(invalid(format!(
                "{other} is not a background configuration for {w} ports"
            )))
        }
    };

    let mut vcs = Vec::new();
    let mut ingress = Vec::new();
    if kind == ConnectionKind::Multicast {
        let mut vc = Vc::new(0, in_port(0), (1..n).map(out_port).collect());
        vc.role = VcRole::Background;
        vcs.push(vc);
        ingress.push(0);
    } else {
        let id = |i: u32, k: usize| i * offsets.len() as u32 + k as u32;
        for i in 0..n {
            for (k, &d) in offsets.iter().enumerate() {
                let j = (i + d) % n;
                let mut vc = Vc::new(id(i, k), in_port(i), vec![out_port(j)]);
                vc.role = VcRole::Background;
                vc.next_vc = (j != 0).then(|| id(j, k));
                vcs.push(vc);
                if i == 0 {
                    ingress.push(id(i, k));
                }
            }
        }
    }
    let n_bg = vcs.len() as VcId;
    let background = ConnectionConfig { kind, vcs, n_ports: w };
    if background.vcs.len() as u32 != ConnectionConfig::expected_vc_count(kind, n) {
        return Err(invalid("background VC count does not match its configuration"));
    }
    for vc in &background.vcs {
        if vc.input_port == fg_in || vc.output_ports.contains(&fg_out) {
            return Err(Error::InvalidSpec(format!(
                "background VC {} shares a foreground link direction",
                vc.vc_id
            )));
        }
    }
    let foreground = Vc::new(n_bg, fg_in, vec![fg_out]);
    Ok(LatencyLayout {
        foreground,
        background,
        background_ingress: ingress,
        budget: LoadBudget::new(port_rates, fg_in, fg_out),
        loopback_ports: (0..w).filter(|&p| p != fg_in && p != fg_out).collect(),
        module_map,
    })
}

/// Highest background input rate that can be sustained without loss.
///
/// With identical link rates that is the full MBL, i.e. every link except the
/// foreground input; otherwise it is (n-1) times the slowest link.
pub fn max_background_lossless_rate(link_rates: &[u64], n: u32) -> Result<u64> {
    let lowest = *link_rates.iter().min().ok_or_else(|| invalid("no link rates given"))?;
    if n < 2 {
        return Err(invalid(format!("n must be at least 2, got {n}")));
    }
    if link_rates.iter().all(|&r| r == lowest) {
        Ok(lowest * (link_rates.len() as u64 - 1))
    } else {
        Ok(u64::from(n - 1) * lowest)
    }
}

/// Name recorded in reports for the ideal-allocation policy.
pub const FAIRNESS_POLICY: &str = "max-min (equal weights)";

/// Max-min fair shares by progressive filling, in exact arithmetic.
///
/// `demands[i] = None` means flow i is unlimited. `routes[i]` lists the links
/// flow i crosses. All flows are raised together; a flow freezes when it
/// reaches its demand or when one of its links saturates.
pub fn max_min_allocation_exact(
    demands: &[Option<BigRational>],
    capacities: &[BigRational],
    routes: &[Vec<usize>],
) -> Result<Vec<BigRational>> {
    if demands.len() != routes.len() {
        return Err(invalid("demands and routes differ in length"));
    }
    for (i, c) in capacities.iter().enumerate() {
        if *c <= BigRational::zero() {
            return Err(invalid(format!("link {i} has non-positive capacity")));
        }
    }
    for (i, route) in routes.iter().enumerate() {
        if route.is_empty() {
            return Err(invalid(format!("flow {i} is routed over no links")));
        }
        if let Some(&l) = route.iter().find(|&&l| l >= capacities.len()) {
            return Err(invalid(format!("flow {i} uses unknown link {l}")));
        }
        if let Some(d) = &demands[i] {
            if *d < BigRational::zero() {
                return Err(invalid(format!("flow {i} has a negative demand")));
            }
        }
    }

    let n = demands.len();
    let mut alloc = vec![BigRational::zero(); n];
    let mut frozen: Vec<bool> = demands.iter().map(|d| d.as_ref().is_some_and(Zero::is_zero)).collect();
    let mut remaining: Vec<BigRational> = capacities.to_vec();

    while frozen.iter().any(|f| !f) {
        let mut active_on = vec![0usize; capacities.len()];
        for (i, route) in routes.iter().enumerate() {
            if !frozen[i] {
                for &l in route {
                    active_on[l] += 1;
                }
            }
        }
        let mut step: Option<BigRational> = None;
        let mut consider = |x: BigRational| {
            if step.as_ref().is_none_or(|s| x < *s) {
                step = Some(x);
            }
        };
        for (l, &k) in active_on.iter().enumerate() {
            if k > 0 {
                consider(&remaining[l] / BigRational::from_usize(k).expect("count fits"));
            }
        }
        for i in 0..n {
            if let (false, Some(d)) = (frozen[i], &demands[i]) {
                consider(d - &alloc[i]);
            }
        }
        let step = step.expect("every active flow crosses at least one link");
        for i in 0..n {
            if !frozen[i] {
                alloc[i] += &step;
                for &l in &routes[i] {
                    remaining[l] -= &step;
                }
            }
        }
        for i in 0..n {
            if frozen[i] {
                continue;
            }
            let at_demand = demands[i].as_ref().is_some_and(|d| alloc[i] == *d);
            let saturated = routes[i].iter().any(|&l| remaining[l].is_zero());
            if at_demand || saturated {
                frozen[i] = true;
            }
        }
    }
    Ok(alloc)
}

/// Floating-point front end to [`max_min_allocation_exact`]. An infinite demand
/// is unlimited.
pub fn max_min_allocation(demands: &[f64], capacities: &[f64], routes: &[Vec<usize>]) -> Result<Vec<f64>> {
    let to_exact = |x: f64| BigRational::from_float(x).ok_or_else(|| invalid(format!("{x} is not a finite number")));
    let demands = demands
        .iter()
        .map(|&d| {
            if d == f64::INFINITY {
                Ok(None)
            } else {
                to_exact(d).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let capacities = capacities.iter().map(|&c| to_exact(c)).collect::<Result<Vec<_>>>()?;
    let shares = max_min_allocation_exact(&demands, &capacities, routes)?;
    Ok(shares.iter().map(|s| s.to_f64().unwrap_or(f64::NAN)).collect())
}
