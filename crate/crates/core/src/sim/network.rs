use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aal::LinkRate;
use crate::error::{Error, Result};
use crate::topology::{ConnectionConfig, PortId, VcId};
use crate::Tick;

/// A port on a particular switch of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub switch: u32,
    pub port: PortId,
}

impl PortRef {
    pub fn new(switch: u32, port: PortId) -> Self {
        Self { switch, port }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}p{}", self.switch, self.port)
    }
}

/// Output-queued store-and-forward cell switch.
///
/// A cell becomes eligible for its output queue `cell_latency` ticks after its
/// last bit arrives. Each output port holds at most `buffer_cells` waiting cells
/// (the cell on the wire is not counted); `None` means unlimited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchModel {
    pub port_rates: Vec<LinkRate>,
    pub module_of: Vec<u32>,
    /// Fabric id of each network module, indexed by module id.
    pub fabric_of: Vec<u32>,
    pub cell_latency: Tick,
    pub buffer_cells: Option<u32>,
    pub loopback: BTreeSet<PortId>,
}

impl SwitchModel {
    /// `n` ports at one rate, split into two network modules on one fabric.
    pub fn uniform(n: u32, rate: LinkRate, cell_latency: Tick, buffer_cells: Option<u32>) -> Self {
        Self {
            port_rates: vec![rate; n as usize],
            module_of: (0..n).map(|p| u32::from(n >= 2 && p >= n / 2)).collect(),
            fabric_of: vec![0, 0],
            cell_latency,
            buffer_cells,
            loopback: BTreeSet::new(),
        }
    }

    pub fn n_ports(&self) -> u32 {
        self.port_rates.len() as u32
    }

    pub fn rate(&self, port: PortId) -> LinkRate {
        self.port_rates[port as usize]
    }

    pub fn validate(&self) -> Result<()> {
        if self.port_rates.is_empty() {
            return Err(Error::InvalidSpec("switch has no ports".into()));
        }
        if self.module_of.len() != self.port_rates.len() {
            return Err(Error::InvalidSpec(format!(
                "module map covers {} ports, switch has {}",
                self.module_of.len(),
                self.port_rates.len()
            )));
        }
        if let Some(&m) = self.module_of.iter().find(|&&m| m as usize >= self.fabric_of.len()) {
            return Err(Error::InvalidSpec(format!("network module {m} has no fabric")));
        }
        if self.buffer_cells == Some(0) {
            return Err(Error::InvalidSpec("output buffers must hold at least one cell".into()));
        }
        if let Some(&p) = self.loopback.iter().find(|&&p| p >= self.n_ports()) {
            return Err(Error::InvalidSpec(format!("loopback on missing port {p}")));
        }
        Ok(())
    }
}

/// One-way link from an output port to an input port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trunk {
    pub from: PortRef,
    pub to: PortRef,
    pub propagation: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub switches: Vec<SwitchModel>,
    pub trunks: Vec<Trunk>,
}

impl Network {
    pub fn single(switch: SwitchModel) -> Self {
        Self {
            switches: vec![switch],
            trunks: Vec::new(),
        }
    }

    /// `count` two-port switches in a line, port 1 of switch i wired both ways to
    /// port 0 of switch i+1. The outer ports (s0p0 and the last switch's p1)
    /// stay external.
    pub fn linear_chain(
        count: u32,
        rate: LinkRate,
        cell_latency: Tick,
        buffer_cells: Option<u32>,
        propagation: Tick,
    ) -> Self {
        let switches = (0..count)
            .map(|_| SwitchModel::uniform(2, rate, cell_latency, buffer_cells))
            .collect();
        let mut trunks = Vec::new();
        for s in 0..count.saturating_sub(1) {
            let east = PortRef::new(s, 1);
            let west = PortRef::new(s + 1, 0);
            trunks.push(Trunk {
                from: east,
                to: west,
                propagation,
            });
            trunks.push(Trunk {
                from: west,
                to: east,
                propagation,
            });
        }
        Self { switches, trunks }
    }

    pub fn switch(&self, s: u32) -> &SwitchModel {
        &self.switches[s as usize]
    }

    pub fn rate(&self, p: PortRef) -> LinkRate {
        self.switch(p.switch).rate(p.port)
    }

    pub fn contains(&self, p: PortRef) -> bool {
        (p.switch as usize) < self.switches.len() && p.port < self.switch(p.switch).n_ports()
    }

    /// Where cells leaving output `p` arrive, with the propagation delay.
    pub fn peer(&self, p: PortRef) -> Option<(PortRef, Tick)> {
        if self.switch(p.switch).loopback.contains(&p.port) {
            return Some((p, 0));
        }
        self.trunks.iter().find(|t| t.from == p).map(|t| (t.to, t.propagation))
    }

    /// Ports whose input is driven by a trunk or loopback.
    fn fed_inputs(&self) -> BTreeSet<PortRef> {
        let mut fed: BTreeSet<PortRef> = self.trunks.iter().map(|t| t.to).collect();
        for (s, sw) in self.switches.iter().enumerate() {
            fed.extend(sw.loopback.iter().map(|&p| PortRef::new(s as u32, p)));
        }
        fed
    }

    /// True when the port faces test equipment in both directions.
    pub fn is_external(&self, p: PortRef) -> bool {
        self.peer(p).is_none() && !self.fed_inputs().contains(&p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.switches.is_empty() {
            return Err(Error::InvalidSpec("network has no switches".into()));
        }
        for sw in &self.switches {
            sw.validate()?;
        }
        let mut sources = BTreeSet::new();
        let mut sinks = BTreeSet::new();
        for t in &self.trunks {
            for p in [t.from, t.to] {
                if !self.contains(p) {
                    return Err(Error::InvalidSpec(format!("trunk uses missing port {p}")));
                }
            }
            if self.switch(t.from.switch).loopback.contains(&t.from.port)
                || self.switch(t.to.switch).loopback.contains(&t.to.port)
            {
                return Err(Error::InvalidSpec(format!(
                    "trunk {} -> {} touches a loopback port",
                    t.from, t.to
                )));
            }
            if !sources.insert(t.from) || !sinks.insert(t.to) {
                return Err(Error::InvalidSpec(format!(
                    "port wired twice by trunk {} -> {}",
                    t.from, t.to
                )));
            }
            if self.rate(t.from) != self.rate(t.to) {
                return Err(Error::InvalidSpec(format!(
                    "trunk {} -> {} joins ports of different rates",
                    t.from, t.to
                )));
            }
        }
        Ok(())
    }
}

/// Per-switch label-switching tables: `(input port, label) -> [(output port, label)]`.
/// An entry with no outputs absorbs the cell at that input.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    entries: BTreeMap<(PortRef, VcId), Vec<(PortId, VcId)>>,
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, input: PortRef, label: VcId, outputs: Vec<(PortId, VcId)>) -> Result<()> {
        if self.entries.insert((input, label), outputs).is_some() {
            return Err(Error::InvalidSpec(format!("label {label} routed twice at {input}")));
        }
        Ok(())
    }

    pub fn get(&self, input: PortRef, label: VcId) -> Option<&[(PortId, VcId)]> {
        self.entries.get(&(input, label)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PortRef, VcId, &[(PortId, VcId)])> {
        self.entries.iter().map(|(&(p, l), o)| (p, l, o.as_slice()))
    }

    /// Installs `config` on switch `switch`. Cells that come back through a
    /// loopback port with a label nobody continues are absorbed there.
    pub fn from_config(switch: u32, config: &ConnectionConfig, network: &Network) -> Result<Self> {
        let mut table = Self::new();
        table.add_config(switch, config, network)?;
        Ok(table)
    }

    pub fn add_config(&mut self, switch: u32, config: &ConnectionConfig, network: &Network) -> Result<()> {
        if switch as usize >= network.switches.len() {
            return Err(Error::InvalidSpec(format!("switch {switch} does not exist")));
        }
        if config.n_ports > network.switch(switch).n_ports() {
            return Err(Error::InvalidSpec(format!(
                "{} needs {} ports, switch {switch} has {}",
                config.kind,
                config.n_ports,
                network.switch(switch).n_ports()
            )));
        }
        for vc in &config.vcs {
            let label = vc.egress_label();
            self.insert(
                PortRef::new(switch, vc.input_port),
                vc.vc_id,
                vc.output_ports.iter().map(|&o| (o, label)).collect(),
            )?;
        }
        let loopback = &network.switch(switch).loopback;
        for vc in &config.vcs {
            let label = vc.egress_label();
            for &o in &vc.output_ports {
                let at = PortRef::new(switch, o);
                if loopback.contains(&o) && self.get(at, label).is_none() {
                    self.entries.insert((at, label), Vec::new());
                }
            }
        }
        Ok(())
    }

    /// The external input port where traffic for `vc` is injected.
    pub fn ingress_of(&self, network: &Network, vc: VcId) -> Result<PortRef> {
        let mut found = self
            .entries
            .keys()
            .filter(|&&(p, l)| l == vc && network.contains(p) && network.is_external(p))
            .map(|&(p, _)| p);
        let first = found
            .next()
            .ok_or_else(|| Error::InvalidSpec(format!("VC {vc} has no entry on an external input port")))?;
        if let Some(other) = found.next() {
            return Err(Error::InvalidSpec(format!(
                "VC {vc} enters at both {first} and {other}"
            )));
        }
        Ok(first)
    }
}
