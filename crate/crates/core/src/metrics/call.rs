use serde::{Deserialize, Serialize};

use super::frames::frame_outcomes;
use super::latency::{mimo_from_events, Latency};
use crate::aal::ServiceClass;
use crate::error::{invalid, Result};
use crate::sim::{run_signaling_exchange, Network, PathHop, Trace, TrafficSpec};
use crate::Tick;

fn message_latency(trace: &Trace, what: &str) -> Result<Latency> {
    let frames = frame_outcomes(trace)?;
    let mut signaling = frames.iter().filter(|f| f.class == ServiceClass::Signaling);
    let frame = signaling
        .next()
        .ok_or_else(|| invalid(format!("{what} trace holds no signaling frame")))?;
    if signaling.next().is_some() {
        return Err(invalid(format!("{what} trace holds more than one signaling frame")));
    }
    mimo_from_events(&frame.events)
}

/// Setup latency plus connect latency. A trace without its message (the
/// connect is never sent when the setup is lost) counts as unbounded.
pub fn call_establishment_latency(setup: &Trace, connect: &Trace) -> Result<Latency> {
    let s = message_latency(setup, "setup")?;
    if connect.records.is_empty() {
        return Ok(Latency::Unbounded);
    }
    let c = message_latency(connect, "connect")?;
    Ok(sum(s, c))
}

fn sum(a: Latency, b: Latency) -> Latency {
    match (a, b) {
        (Latency::Finite(a), Latency::Finite(b)) => Latency::Finite(a + b),
        _ => Latency::Unbounded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallReport {
    pub latency: Latency,
    pub setup: Latency,
    pub connect: Latency,
    pub switches: u32,
    /// Carried through from the test description; not measured.
    pub hierarchy_levels: u32,
}

pub fn measure_call(
    network: &Network,
    path: &[PathHop],
    setup: &TrafficSpec,
    connect: &TrafficSpec,
    destination_hold: Tick,
    hierarchy_levels: u32,
) -> Result<CallReport> {
    let ex = run_signaling_exchange(network, path, setup, connect, destination_hold)?;
    let s = message_latency(&ex.setup, "setup")?;
    let c = if ex.connect.records.is_empty() {
        Latency::Unbounded
    } else {
        message_latency(&ex.connect, "connect")?
    };
    Ok(CallReport {
        latency: sum(s, c),
        setup: s,
        connect: c,
        switches: path.len() as u32,
        hierarchy_levels,
    })
}
