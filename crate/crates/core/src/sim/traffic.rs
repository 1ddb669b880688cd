use serde::{Deserialize, Serialize};

use crate::aal::{cells_per_frame, LinkRate, ServiceClass, CELL_PAYLOAD_OCTETS};
use crate::error::{Error, Result};
use crate::topology::VcId;
use crate::{div_round_half_up, Tick};

/// Payload length used for the single-cell "frames" of a CBR stream.
pub const CBR_CELL_PAYLOAD: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLimit {
    /// Exactly this many frames (or CBR cells).
    Count(u64),
    /// Frames whose nominal start is before the tick.
    Until(Tick),
}

/// A traffic source bound to one VC.
///
/// UBR and signaling sources emit fixed-length frames, equally spaced at
/// `effective_bps` of AAL payload. The cells of a frame go out back to back,
/// or with `idle_cells_between` idle cell slots between consecutive cells.
/// A CBR source emits a contiguous stream of single cells; its rate counts
/// the 48-octet cell payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub vc_id: VcId,
    pub class: ServiceClass,
    pub payload_octets: u32,
    pub effective_bps: f64,
    pub start_tick: Tick,
    pub limit: FrameLimit,
    pub idle_cells_between: u32,
}

impl TrafficSpec {
    pub fn ubr(vc_id: VcId, payload_octets: u32, effective_bps: f64) -> Self {
        Self {
            vc_id,
            class: ServiceClass::Ubr,
            payload_octets,
            effective_bps,
            start_tick: 0,
            limit: FrameLimit::Until(Tick::MAX),
            idle_cells_between: 0,
        }
    }

    pub fn signaling(vc_id: VcId, payload_octets: u32, effective_bps: f64) -> Self {
        Self {
            class: ServiceClass::Signaling,
            ..Self::ubr(vc_id, payload_octets, effective_bps)
        }
    }

    pub fn cbr(vc_id: VcId, cell_payload_bps: f64) -> Self {
        Self {
            vc_id,
            class: ServiceClass::Cbr,
            payload_octets: CBR_CELL_PAYLOAD,
            effective_bps: cell_payload_bps,
            start_tick: 0,
            limit: FrameLimit::Until(Tick::MAX),
            idle_cells_between: 0,
        }
    }

    pub fn starting_at(mut self, tick: Tick) -> Self {
        self.start_tick = tick;
        self
    }

    pub fn limited(mut self, limit: FrameLimit) -> Self {
        self.limit = limit;
        self
    }

    pub fn with_idle_cells(mut self, idle: u32) -> Self {
        self.idle_cells_between = idle;
        self
    }

    pub fn cells_per_frame(&self) -> u32 {
        match self.class {
            ServiceClass::Cbr => 1,
            _ => cells_per_frame(u64::from(self.payload_octets)) as u32,
        }
    }

    /// Cells per second this source puts on its input link.
    pub fn cell_rate(&self) -> f64 {
        match self.class {
            ServiceClass::Cbr => self.effective_bps / (CELL_PAYLOAD_OCTETS * 8) as f64,
            _ => self.effective_bps / (8.0 * f64::from(self.payload_octets)) * f64::from(self.cells_per_frame()),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.effective_bps > 0.0) || !self.effective_bps.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "VC {}: rate must be positive, got {}",
                self.vc_id, self.effective_bps
            )));
        }
        if self.payload_octets == 0 {
            return Err(Error::InvalidSpec(format!("VC {}: empty frames", self.vc_id)));
        }
        Ok(())
    }
}

/// Nominal emission schedule of one source.
#[derive(Debug, Clone)]
pub(crate) struct Schedule {
    pub spec: TrafficSpec,
    /// Frame spacing in picoseconds.
    interval_ps: u64,
    cell_gap: Tick,
    cells: u32,
    horizon: Tick,
}

impl Schedule {
    pub fn new(spec: TrafficSpec, rate: LinkRate, horizon: Tick) -> Self {
        let cells = spec.cells_per_frame();
        let bits = match spec.class {
            ServiceClass::Cbr => (CELL_PAYLOAD_OCTETS * 8) as f64,
            _ => 8.0 * f64::from(spec.payload_octets),
        };
        let raw = (bits * 1e12 / spec.effective_bps).round();
        // snap to the line-rate spacing when the rate is the link's own capacity
        let floor_ps = u64::from(cells) * rate.cell_time() * 1000;
        let interval_ps = if raw < floor_ps as f64 && raw >= floor_ps as f64 * (1.0 - 1e-9) {
            floor_ps
        } else {
            raw as u64
        };
        Self {
            cell_gap: rate.cell_time() * (1 + u64::from(spec.idle_cells_between)),
            interval_ps: interval_ps.max(1),
            cells,
            horizon,
            spec,
        }
    }

    pub fn cells(&self) -> u32 {
        self.cells
    }

    /// True when the last cell of a frame is on the wire before the next frame starts.
    pub fn frame_fits(&self) -> bool {
        let span =
            u64::from(self.cells - 1) * self.cell_gap + self.cell_gap / (1 + u64::from(self.spec.idle_cells_between));
        span * 1000 <= self.interval_ps
    }

    pub fn frame_start(&self, frame: u64) -> Tick {
        let offset = div_round_half_up(u128::from(frame) * u128::from(self.interval_ps), 1000);
        self.spec.start_tick.saturating_add(offset as Tick)
    }

    /// Nominal ready time of a cell, or `None` once the source is exhausted.
    pub fn cell_time(&self, frame: u64, seq: u32) -> Option<Tick> {
        let start = self.frame_start(frame);
        let within = match self.spec.limit {
            FrameLimit::Count(n) => frame < n,
            FrameLimit::Until(t) => start < t,
        };
        if !within || start >= self.horizon {
            return None;
        }
        Some(start + u64::from(seq) * self.cell_gap)
    }
}
