use serde::{Deserialize, Serialize};

use super::engine::simulate;
use super::network::{Network, PortRef, RoutingTable};
use super::trace::Trace;
use super::traffic::{FrameLimit, TrafficSpec};
use crate::aal::ServiceClass;
use crate::error::{Error, Result};
use crate::topology::PortId;
use crate::Tick;

/// One switch crossing of a signaling path, in the calling direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathHop {
    pub switch: u32,
    pub input: PortId,
    pub output: PortId,
}

/// Traces of a setup/connect exchange.
///
/// The connect trace is rebased to the moment the destination emits the
/// connect message, so the destination's decision time never appears in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalingExchange {
    pub setup: Trace,
    pub connect: Trace,
    /// Absolute emission tick of the connect message, `None` if the setup was lost.
    pub connect_emitted_at: Option<Tick>,
}

fn check_path(network: &Network, path: &[PathHop]) -> Result<()> {
    if path.is_empty() {
        return Err(Error::InvalidSpec("signaling path is empty".into()));
    }
    for h in path {
        let (i, o) = (PortRef::new(h.switch, h.input), PortRef::new(h.switch, h.output));
        if !network.contains(i) || !network.contains(o) || h.input == h.output {
            return Err(Error::InvalidSpec(format!("bad signaling hop {i} -> {o}")));
        }
    }
    for w in path.windows(2) {
        let from = PortRef::new(w[0].switch, w[0].output);
        let to = PortRef::new(w[1].switch, w[1].input);
        if network.peer(from).map(|(p, _)| p) != Some(to) || network.peer(to).map(|(p, _)| p) != Some(from) {
            return Err(Error::InvalidSpec(format!(
                "signaling path not wired both ways between {from} and {to}"
            )));
        }
    }
    let first = PortRef::new(path[0].switch, path[0].input);
    let last = PortRef::new(path[path.len() - 1].switch, path[path.len() - 1].output);
    if !network.is_external(first) || !network.is_external(last) {
        return Err(Error::InvalidSpec(
            "signaling path must start and end on external ports".into(),
        ));
    }
    Ok(())
}

fn routes(path: &[PathHop], label: u32, reverse: bool) -> Result<RoutingTable> {
    let mut table = RoutingTable::new();
    for h in path {
        let (i, o) = if reverse {
            (h.output, h.input)
        } else {
            (h.input, h.output)
        };
        table.insert(PortRef::new(h.switch, i), label, vec![(o, label)])?;
    }
    Ok(table)
}

fn message(spec: &TrafficSpec, start: Tick) -> Result<TrafficSpec> {
    if spec.class != ServiceClass::Signaling {
        return Err(Error::InvalidSpec(format!(
            "VC {}: signaling messages must use the signaling class",
            spec.vc_id
        )));
    }
    Ok(spec.clone().starting_at(start).limited(FrameLimit::Count(1)))
}

/// Sends `setup` along `path`, then `connect` back along the reverse path
/// `destination_hold` ticks after the setup's last bit reaches the far end.
///
/// Each message is a single frame; only its `vc_id`, payload, rate and idle
/// cell spacing are used (start and frame count are set here).
pub fn run_signaling_exchange(
    network: &Network,
    path: &[PathHop],
    setup: &TrafficSpec,
    connect: &TrafficSpec,
    destination_hold: Tick,
) -> Result<SignalingExchange> {
    network.validate()?;
    check_path(network, path)?;
    let setup_spec = message(setup, setup.start_tick)?;
    let forward = routes(path, setup.vc_id, false)?;
    let setup_trace = simulate(network, &forward, &[setup_spec], setup.start_tick + 1)?;

    let complete = !setup_trace.records.is_empty() && setup_trace.records.iter().all(|r| !r.is_lost());
    let t3 = setup_trace
        .records
        .iter()
        .filter(|r| r.is_last)
        .filter_map(|r| r.exit_last_bit)
        .max();
    let t3 = match t3 {
        Some(t) if complete => t,
        _ => {
            let connect = Trace {
                records: Vec::new(),
                flows: Vec::new(),
                horizon: 0,
                stats: Default::default(),
            };
            return Ok(SignalingExchange {
                setup: setup_trace,
                connect,
                connect_emitted_at: None,
            });
        }
    };
    let emit = t3 + destination_hold;
    let connect_spec = message(connect, emit)?;
    let backward = routes(path, connect.vc_id, true)?;
    let connect_trace = simulate(network, &backward, &[connect_spec], emit + 1)?;
    Ok(SignalingExchange {
        setup: setup_trace,
        connect: connect_trace.rebased(emit),
        connect_emitted_at: Some(emit),
    })
}

/// Hops of the chain built by [`Network::linear_chain`].
pub fn linear_path(count: u32) -> Vec<PathHop> {
    (0..count)
        .map(|s| PathHop {
            switch: s,
            input: 0,
            output: 1,
        })
        .collect()
}
