use serde::{Deserialize, Serialize};

use super::trace::CellRecord;
use crate::aal::LinkRate;
use crate::Tick;

/// Cell-level analyzer. Every transfer delay it reports is biased by its
/// internal `overhead` plus the `propagation` delay of its cabling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorModel {
    pub overhead: Tick,
    pub propagation: Tick,
}

/// What the analyzer reports for one delivered cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    /// Cell transfer delay as measured.
    pub ctd: Tick,
    /// Time the last bit reached the analyzer.
    pub arrival: Tick,
}

impl MonitorModel {
    pub fn new(overhead: Tick, propagation: Tick) -> Self {
        Self { overhead, propagation }
    }

    /// Total amount added to every measured transfer delay.
    pub fn bias(&self) -> Tick {
        self.overhead + self.propagation
    }

    pub fn observe(&self, record: &CellRecord) -> Option<Observation> {
        let exit = record.exit_last_bit?;
        Some(Observation {
            ctd: exit - record.entry_first_bit + self.bias(),
            arrival: exit + self.propagation,
        })
    }
}

/// Closed-loop calibration: the analyzer's output cabled to its own input.
///
/// Returns the measured delay of one cell minus its transmit time and the
/// cable's propagation delay.
pub fn calibrate_monitor_overhead(monitor: &MonitorModel, rate: LinkRate) -> Tick {
    let wire = CellRecord {
        vc_id: 0,
        frame_id: 0,
        seq_in_frame: 0,
        is_first: true,
        is_last: true,
        entry_first_bit: 0,
        entry_last_bit: rate.cell_time(),
        exit_last_bit: Some(rate.cell_time()),
        leaf: 0,
        class: crate::aal::ServiceClass::Ubr,
    };
    let measured = monitor.observe(&wire).expect("loop delivers").ctd;
    measured - rate.cell_time() - monitor.propagation
}
