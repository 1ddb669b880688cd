use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use super::network::{Network, PortRef, RoutingTable};
use super::trace::{CellRecord, Egress, FlowInfo, SimStats, Trace, VcCounters};
use super::traffic::{Schedule, TrafficSpec};
use crate::aal::ServiceClass;
use crate::error::{Error, Result};
use crate::topology::VcId;
use crate::{Tick, TICKS_PER_SEC};

/// Replication tree of one VC: the ingress input is node 0.
#[derive(Debug)]
struct Tree {
    vc: VcId,
    class: ServiceClass,
    payload_octets: u32,
    nodes: Vec<Node>,
    egress: Vec<Egress>,
}

#[derive(Debug)]
struct Node {
    input: PortRef,
    /// Empty means the copy is absorbed at this input.
    branches: Vec<Branch>,
    lo: u32,
}

#[derive(Debug)]
struct Branch {
    output: PortRef,
    after: After,
    lo: u32,
    hi: u32,
}

#[derive(Debug, Clone, Copy)]
enum After {
    Link {
        node: u32,
        propagation: Tick,
    },
    /// The attached analyzer sends the cell straight back into the same port.
    Reflect {
        node: u32,
    },
    Exit,
}

struct TreeBuilder<'a> {
    network: &'a Network,
    routes: &'a RoutingTable,
    vc: VcId,
    nodes: Vec<Node>,
    egress: Vec<Egress>,
    seen: BTreeSet<(PortRef, VcId)>,
}

impl TreeBuilder<'_> {
    fn visit(&mut self, input: PortRef, label: VcId) -> Result<u32> {
        if !self.seen.insert((input, label)) {
            return Err(Error::InvalidSpec(format!(
                "VC {} reaches {input} with label {label} twice (routing loop)",
                self.vc
            )));
        }
        let outs = self.routes.get(input, label).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "VC {}: label {label} arriving at {input} has no route",
                self.vc
            ))
        })?;
        let idx = self.nodes.len();
        self.nodes.push(Node {
            input,
            branches: Vec::new(),
            lo: self.egress.len() as u32,
        });
        if outs.is_empty() {
            self.egress.push(Egress::Absorbed(input));
        }
        let mut branches = Vec::with_capacity(outs.len());
        for &(port, out_label) in outs {
            let output = PortRef::new(input.switch, port);
            if !self.network.contains(output) {
                return Err(Error::InvalidSpec(format!(
                    "VC {} routed to missing port {output}",
                    self.vc
                )));
            }
            let lo = self.egress.len() as u32;
            let after = match self.network.peer(output) {
                Some((to, propagation)) => After::Link {
                    node: self.visit(to, out_label)?,
                    propagation,
                },
                None if self.routes.get(output, out_label).is_some() => After::Reflect {
                    node: self.visit(output, out_label)?,
                },
                None => {
                    self.egress.push(Egress::Port(output));
                    After::Exit
                }
            };
            branches.push(Branch {
                output,
                after,
                lo,
                hi: self.egress.len() as u32,
            });
        }
        self.nodes[idx].branches = branches;
        Ok(idx as u32)
    }
}

fn build_tree(network: &Network, routes: &RoutingTable, ingress: PortRef, spec: &TrafficSpec) -> Result<Tree> {
    let mut b = TreeBuilder {
        network,
        routes,
        vc: spec.vc_id,
        nodes: Vec::new(),
        egress: Vec::new(),
        seen: BTreeSet::new(),
    };
    b.visit(ingress, spec.vc_id)?;
    Ok(Tree {
        vc: spec.vc_id,
        class: spec.class,
        payload_octets: spec.payload_octets,
        nodes: b.nodes,
        egress: b.egress,
    })
}

#[derive(Debug)]
struct BaseCell {
    tree: u32,
    frame: u64,
    seq: u32,
    is_first: bool,
    is_last: bool,
    entry: Tick,
    exits_at: usize,
}

#[derive(Debug, Clone, Copy)]
struct Hop {
    base: u32,
    node: u32,
}

#[derive(Debug, Clone, Copy)]
struct Out {
    base: u32,
    node: u32,
    branch: u32,
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    Fresh(u32),
    Reflected(Hop),
}

#[derive(Debug, Default)]
struct IngressLink {
    busy: bool,
    queue: VecDeque<Pending>,
}

#[derive(Debug, Default)]
struct OutputPort {
    busy: Option<Out>,
    high: VecDeque<Out>,
    low: VecDeque<Out>,
}

struct Source {
    schedule: Schedule,
    tree: u32,
    ingress: PortRef,
    frame: u64,
    seq: u32,
}

#[derive(Debug)]
enum Kind {
    TxDone,
    Arrive(Hop),
    Emit(usize),
    Enqueue(Out),
}

impl Kind {
    fn rank(&self) -> u8 {
        match self {
            Kind::TxDone => 0,
            Kind::Arrive(_) => 1,
            Kind::Emit(_) => 2,
            Kind::Enqueue(_) => 3,
        }
    }
}

/// Total order: time, event kind, switch, port, VC, frame, cell, leaf, insertion.
type Key = (Tick, u8, u32, u32, VcId, u64, u32, u32, u64);

#[derive(Debug)]
struct Event {
    key: Key,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

struct Engine<'a> {
    network: &'a Network,
    trees: Vec<Tree>,
    sources: Vec<Source>,
    cells: Vec<BaseCell>,
    exits: Vec<Option<Tick>>,
    ingress: BTreeMap<PortRef, IngressLink>,
    outputs: BTreeMap<PortRef, OutputPort>,
    heap: BinaryHeap<Reverse<Event>>,
    counter: u64,
    stats: SimStats,
}

impl Engine<'_> {
    fn push(&mut self, time: Tick, at: PortRef, base: Option<u32>, leaf: u32, kind: Kind) {
        let (vc, frame, seq) = match base {
            Some(b) => {
                let c = &self.cells[b as usize];
                (self.trees[c.tree as usize].vc, c.frame, c.seq)
            }
            None => (0, 0, 0),
        };
        let key = (
            time,
            kind.rank(),
            at.switch,
            at.port,
            vc,
            frame,
            seq,
            leaf,
            self.counter,
        );
        self.counter += 1;
        self.heap.push(Reverse(Event { key, kind }));
    }

    fn push_emit(&mut self, src: usize, time: Tick) {
        let s = &self.sources[src];
        let key = (
            time,
            Kind::Emit(src).rank(),
            s.ingress.switch,
            s.ingress.port,
            self.trees[s.tree as usize].vc,
            s.frame,
            s.seq,
            0,
            self.counter,
        );
        self.counter += 1;
        self.heap.push(Reverse(Event {
            key,
            kind: Kind::Emit(src),
        }));
    }

    fn counters(&mut self, tree: u32) -> &mut VcCounters {
        let vc = self.trees[tree as usize].vc;
        self.stats.per_vc.entry(vc).or_default()
    }

    fn emit(&mut self, src: usize, t: Tick) {
        let s = &self.sources[src];
        let (tree, frame, seq, ingress) = (s.tree, s.frame, s.seq, s.ingress);
        let cells = s.schedule.cells();
        let leaves = self.trees[tree as usize].egress.len();
        let base = self.cells.len() as u32;
        self.cells.push(BaseCell {
            tree,
            frame,
            seq,
            is_first: seq == 0,
            is_last: seq + 1 == cells,
            entry: 0,
            exits_at: self.exits.len(),
        });
        self.exits.extend(std::iter::repeat_n(None, leaves));
        self.ingress
            .entry(ingress)
            .or_default()
            .queue
            .push_back(Pending::Fresh(base));
        self.start_ingress(ingress, t);

        let s = &mut self.sources[src];
        if seq + 1 < cells {
            s.seq += 1;
        } else {
            s.frame += 1;
            s.seq = 0;
        }
        if let Some(next) = s.schedule.cell_time(s.frame, s.seq) {
            self.push_emit(src, next.max(t));
        }
    }

    fn start_ingress(&mut self, port: PortRef, t: Tick) {
        let link = self.ingress.entry(port).or_default();
        if link.busy {
            return;
        }
        let Some(pending) = link.queue.pop_front() else {
            return;
        };
        link.busy = true;
        let copy = match pending {
            Pending::Fresh(base) => {
                self.cells[base as usize].entry = t;
                let tree = self.cells[base as usize].tree;
                self.counters(tree).injected_cells += 1;
                Hop { base, node: 0 }
            }
            Pending::Reflected(copy) => copy,
        };
        let arrive = t + self.network.rate(port).cell_time();
        let leaf = self.node(copy.base, copy.node).lo;
        self.push(arrive, port, Some(copy.base), leaf, Kind::Arrive(copy));
    }

    fn tree_of(&self, base: u32) -> &Tree {
        &self.trees[self.cells[base as usize].tree as usize]
    }

    fn node(&self, base: u32, node: u32) -> &Node {
        &self.tree_of(base).nodes[node as usize]
    }

    fn branch(&self, out: Out) -> &Branch {
        &self.node(out.base, out.node).branches[out.branch as usize]
    }

    fn deliver(&mut self, base: u32, leaf: u32, t: Tick) {
        let c = &self.cells[base as usize];
        self.exits[c.exits_at + leaf as usize] = Some(t);
        let tree = c.tree;
        self.counters(tree).delivered += 1;
    }

    fn arrive(&mut self, copy: Hop, t: Tick) {
        let node = self.node(copy.base, copy.node);
        let input = node.input;
        let lo = node.lo;
        let fanout = node.branches.len();
        if let Some(link) = self.ingress.get_mut(&input) {
            link.busy = false;
            self.start_ingress(input, t);
        }
        if fanout == 0 {
            self.deliver(copy.base, lo, t);
            return;
        }
        let ready = t + self.network.switch(input.switch).cell_latency;
        for b in 0..fanout as u32 {
            let out = Out {
                base: copy.base,
                node: copy.node,
                branch: b,
            };
            let br = self.branch(out);
            let (output, leaf) = (br.output, br.lo);
            self.push(ready, output, Some(copy.base), leaf, Kind::Enqueue(out));
        }
    }

    fn enqueue(&mut self, out: Out, t: Tick) {
        let br = self.branch(out);
        let (output, lo, hi) = (br.output, br.lo, br.hi);
        let high = self.tree_of(out.base).class.is_high_priority();
        let limit = self.network.switch(output.switch).buffer_cells;
        let port = self.outputs.entry(output).or_default();
        if port.busy.is_none() {
            self.start_tx(output, out, t);
        } else if limit.is_none_or(|b| port.high.len() + port.low.len() < b as usize) {
            if high {
                port.high.push_back(out);
            } else {
                port.low.push_back(out);
            }
        } else {
            let tree = self.cells[out.base as usize].tree;
            self.counters(tree).dropped += u64::from(hi - lo);
            self.stats.buffer_drops += 1;
        }
    }

    fn start_tx(&mut self, output: PortRef, out: Out, t: Tick) {
        self.outputs.entry(output).or_default().busy = Some(out);
        let done = t + self.network.rate(output).cell_time();
        let leaf = self.branch(out).lo;
        self.push(done, output, Some(out.base), leaf, Kind::TxDone);
    }

    fn tx_done(&mut self, output: PortRef, t: Tick) -> Result<()> {
        let port = self.outputs.get_mut(&output);
        let Some(out) = port.and_then(|p| p.busy.take()) else {
            return Err(Error::TraceCorruption(format!(
                "transmission ended on idle port {output}"
            )));
        };
        let br = self.branch(out);
        let (after, lo) = (br.after, br.lo);
        match after {
            After::Link { node, propagation } => {
                let leaf = self.trees[self.cells[out.base as usize].tree as usize].nodes[node as usize].lo;
                let copy = Hop { base: out.base, node };
                let at = self.node(out.base, node).input;
                self.push(t + propagation, at, Some(out.base), leaf, Kind::Arrive(copy));
            }
            After::Reflect { node } => {
                let copy = Hop { base: out.base, node };
                self.ingress
                    .entry(output)
                    .or_default()
                    .queue
                    .push_back(Pending::Reflected(copy));
                self.start_ingress(output, t);
            }
            After::Exit => self.deliver(out.base, lo, t),
        }
        let port = self.outputs.get_mut(&output).expect("port state exists");
        if let Some(next) = port.high.pop_front().or_else(|| port.low.pop_front()) {
            self.start_tx(output, next, t);
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        while let Some(Reverse(ev)) = self.heap.pop() {
            self.stats.events += 1;
            let t = ev.key.0;
            let at = PortRef::new(ev.key.2, ev.key.3);
            match ev.kind {
                Kind::Emit(src) => self.emit(src, t),
                Kind::Arrive(copy) => self.arrive(copy, t),
                Kind::Enqueue(out) => self.enqueue(out, t),
                Kind::TxDone => self.tx_done(at, t)?,
            }
        }
        Ok(())
    }
}

/// Runs the network until every generated cell has been delivered or dropped.
///
/// Sources start frames strictly before `horizon`; frames already started are
/// completed. Each VC with traffic must enter the network at exactly one
/// external input port.
pub fn simulate(network: &Network, routes: &RoutingTable, traffic: &[TrafficSpec], horizon: Tick) -> Result<Trace> {
    network.validate()?;
    let mut trees = Vec::with_capacity(traffic.len());
    let mut sources = Vec::with_capacity(traffic.len());
    let mut seen = BTreeSet::new();
    let mut load: BTreeMap<PortRef, f64> = BTreeMap::new();
    for spec in traffic {
        spec.validate()?;
        if !seen.insert(spec.vc_id) {
            return Err(Error::InvalidSpec(format!(
                "VC {} has more than one source",
                spec.vc_id
            )));
        }
        let ingress = routes.ingress_of(network, spec.vc_id)?;
        let rate = network.rate(ingress);
        let schedule = Schedule::new(spec.clone(), rate, horizon);
        if !schedule.frame_fits() {
            return Err(Error::InvalidSpec(format!(
                "VC {}: frame with {} idle cells between cells does not fit its interval",
                spec.vc_id, spec.idle_cells_between
            )));
        }
        *load.entry(ingress).or_default() += spec.cell_rate();
        trees.push(build_tree(network, routes, ingress, spec)?);
        sources.push(Source {
            schedule,
            tree: (trees.len() - 1) as u32,
            ingress,
            frame: 0,
            seq: 0,
        });
    }
    for (&port, &cells_per_sec) in &load {
        // the model's link carries exactly one cell per (rounded) cell time
        let link = TICKS_PER_SEC as f64 / network.rate(port).cell_time() as f64;
        if cells_per_sec > link * (1.0 + 1e-9) {
            return Err(Error::InvalidSpec(format!(
                "sources at {port} offer {cells_per_sec:.1} cells/s, link carries {link:.1}"
            )));
        }
    }

    let mut engine = Engine {
        network,
        trees,
        sources,
        cells: Vec::new(),
        exits: Vec::new(),
        ingress: BTreeMap::new(),
        outputs: BTreeMap::new(),
        heap: BinaryHeap::new(),
        counter: 0,
        stats: SimStats::default(),
    };
    for tree in &engine.trees {
        engine.stats.per_vc.entry(tree.vc).or_default();
    }
    for src in 0..engine.sources.len() {
        if let Some(t) = engine.sources[src].schedule.cell_time(0, 0) {
            engine.push_emit(src, t);
        }
    }
    engine.run()?;
    finish(engine, horizon)
}

fn finish(engine: Engine<'_>, horizon: Tick) -> Result<Trace> {
    let Engine {
        network,
        trees,
        sources,
        cells,
        exits,
        stats,
        ..
    } = engine;
    let ingress_of: Vec<PortRef> = {
        let mut v = vec![PortRef::new(0, 0); trees.len()];
        for s in &sources {
            v[s.tree as usize] = s.ingress;
        }
        v
    };
    let mut records = Vec::with_capacity(exits.len());
    for c in &cells {
        let tree = &trees[c.tree as usize];
        let c_in = network.rate(ingress_of[c.tree as usize]).cell_time();
        for leaf in 0..tree.egress.len() {
            records.push(CellRecord {
                vc_id: tree.vc,
                frame_id: c.frame,
                seq_in_frame: c.seq,
                is_first: c.is_first,
                is_last: c.is_last,
                entry_first_bit: c.entry,
                entry_last_bit: c.entry + c_in,
                exit_last_bit: exits[c.exits_at + leaf],
                leaf: leaf as u32,
                class: tree.class,
            });
        }
    }
    records.sort_unstable_by_key(|r| (r.vc_id, r.leaf, r.frame_id, r.seq_in_frame));

    let mut flows = Vec::new();
    for (i, tree) in trees.iter().enumerate() {
        let ingress = ingress_of[i];
        for (leaf, &egress) in tree.egress.iter().enumerate() {
            let out_port = match egress {
                Egress::Port(p) | Egress::Absorbed(p) => p,
            };
            flows.push(FlowInfo {
                vc_id: tree.vc,
                leaf: leaf as u32,
                leaves: tree.egress.len() as u32,
                ingress,
                egress,
                input_rate: network.rate(ingress),
                output_rate: network.rate(out_port),
                payload_octets: tree.payload_octets,
                class: tree.class,
            });
        }
    }
    flows.sort_by_key(|f| (f.vc_id, f.leaf));

    for tree in &trees {
        let c = stats.per_vc[&tree.vc];
        if c.injected_cells * tree.egress.len() as u64 != c.delivered + c.dropped {
            return Err(Error::TraceCorruption(format!(
                "VC {}: {} cells x {} leaves injected, {} delivered, {} dropped",
                tree.vc,
                c.injected_cells,
                tree.egress.len(),
                c.delivered,
                c.dropped
            )));
        }
    }
    Ok(Trace {
        records,
        flows,
        horizon,
        stats,
    })
}
