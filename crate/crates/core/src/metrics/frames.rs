use serde::{Deserialize, Serialize};

use crate::aal::{reassemble, LinkRate, Reassembly, ServiceClass};
use crate::error::{Error, Result};
use crate::sim::{FrameCells, Trace};
use crate::topology::VcId;
use crate::Tick;

/// The three frame events latency is defined on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEvents {
    /// First bit enters the system.
    pub t1: Tick,
    /// Last bit enters the system.
    pub t2: Tick,
    /// Last bit leaves the system; `None` when the frame was lost.
    pub t3: Option<Tick>,
    pub input_rate: LinkRate,
    pub output_rate: LinkRate,
}

impl FrameEvents {
    pub fn fit(&self) -> Tick {
        self.t2 - self.t1
    }
}

/// One frame copy as seen at its egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameOutcome {
    pub vc_id: VcId,
    pub leaf: u32,
    pub frame_id: u64,
    pub payload_octets: u32,
    pub class: ServiceClass,
    pub events: FrameEvents,
}

impl FrameOutcome {
    pub fn delivered(&self) -> bool {
        self.events.t3.is_some()
    }
}

/// Reassembles one frame copy and extracts its events.
pub fn frame_outcome(frame: &FrameCells<'_>) -> Result<FrameOutcome> {
    let flow = frame.flow;
    let cells: Vec<_> = frame.cells.iter().map(|r| r.cell(flow.payload_octets)).collect();
    let received: Vec<_> = frame
        .cells
        .iter()
        .zip(&cells)
        .filter(|(r, _)| !r.is_lost())
        .map(|(_, c)| *c)
        .collect();
    // every generated cell has a record, lost or not
    if let Reassembly::Lost { .. } = reassemble(&cells)? {
        return Err(Error::TraceCorruption(format!(
            "VC {} frame {} is missing cell records",
            flow.vc_id,
            frame.frame_id()
        )));
    }
    let complete = !received.is_empty() && reassemble(&received)?.is_complete();
    let first = frame
        .cells
        .iter()
        .find(|r| r.is_first)
        .expect("complete frame has a first cell");
    let last = frame
        .cells
        .iter()
        .find(|r| r.is_last)
        .expect("complete frame has a last cell");
    let t3 = if complete {
        frame.cells.iter().filter_map(|r| r.exit_last_bit).max()
    } else {
        None
    };
    Ok(FrameOutcome {
        vc_id: flow.vc_id,
        leaf: flow.leaf,
        frame_id: frame.frame_id(),
        payload_octets: flow.payload_octets,
        class: flow.class,
        events: FrameEvents {
            t1: first.entry_first_bit,
            t2: last.entry_last_bit,
            t3,
            input_rate: flow.input_rate,
            output_rate: flow.output_rate,
        },
    })
}

/// All frame copies of a trace, in record order.
pub fn frame_outcomes(trace: &Trace) -> Result<Vec<FrameOutcome>> {
    trace.frames().map(|f| frame_outcome(&f)).collect()
}
