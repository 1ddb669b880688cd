//! Frames, cells and AAL5 framing.
//!
//! A frame is the AAL payload handed to the adaptation layer. AAL5 appends an
//! 8-octet trailer, pads the result to a multiple of 48 octets and carries it in
//! 53-octet cells. Every throughput figure in this crate counts AAL payload bits
//! only.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::{div_round_half_up, Tick, TICKS_PER_SEC};

pub const CELL_OCTETS: u64 = 53;
pub const CELL_PAYLOAD_OCTETS: u64 = 48;
pub const CELL_BITS: u64 = CELL_OCTETS * 8;
pub const AAL5_TRAILER_OCTETS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceClass {
    Ubr,
    Cbr,
    Signaling,
}

impl ServiceClass {
    /// CBR is served ahead of everything else at an output port.
    pub fn is_high_priority(self) -> bool {
        matches!(self, ServiceClass::Cbr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceClass::Ubr => "ubr",
            ServiceClass::Cbr => "cbr",
            ServiceClass::Signaling => "signaling",
        }
    }
}

impl fmt::Display for ServiceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ServiceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ubr" | "UBR" => Ok(ServiceClass::Ubr),
            "cbr" | "CBR" => Ok(ServiceClass::Cbr),
            "signaling" | "SIGNALING" => Ok(ServiceClass::Signaling),
            other => Err(invalid(format!("unknown service class `{other}`"))),
        }
    }
}

/// A reassembled AAL payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub vc_id: u32,
    pub payload_octets: u32,
    pub class: ServiceClass,
}

/// One cell of a segmented frame.
///
/// `length` mirrors the AAL5 trailer length field; it is carried on every cell
/// so that reassembly can check the cell count without modelling payload bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub vc_id: u32,
    pub frame_id: u64,
    pub seq_in_frame: u32,
    pub is_first: bool,
    pub is_last: bool,
    pub length: u32,
    pub class: ServiceClass,
}

/// Raw line rate of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkRate {
    bits_per_second: u64,
}

impl LinkRate {
    /// Fastest rate whose cell time still rounds to at least one tick.
    pub const MAX_BPS: u64 = 2 * CELL_BITS * TICKS_PER_SEC;

    pub fn new(bits_per_second: u64) -> Result<Self> {
        if bits_per_second == 0 {
            return Err(invalid("link rate must be positive"));
        }
        if bits_per_second > Self::MAX_BPS {
            return Err(invalid(format!(
                "link rate {bits_per_second} bps is too fast for nanosecond ticks"
            )));
        }
        Ok(Self { bits_per_second })
    }

    pub fn bps(self) -> u64 {
        self.bits_per_second
    }

    /// Time to put one 53-octet cell on the wire, in ticks, rounded half up.
    pub fn cell_time(self) -> Tick {
        div_round_half_up(
            u128::from(CELL_BITS) * u128::from(TICKS_PER_SEC),
            u128::from(self.bits_per_second),
        ) as Tick
    }

    /// Cell time in picoseconds, rounded half up.
    pub fn cell_time_ps(self) -> u64 {
        div_round_half_up(
            u128::from(CELL_BITS) * 1_000_000_000_000,
            u128::from(self.bits_per_second),
        ) as u64
    }

    /// Highest effective (AAL payload) rate this link can carry for frames of
    /// `payload_octets`, with cells sent back to back.
    pub fn payload_capacity(self, payload_octets: u32) -> f64 {
        let cells = cells_per_frame(u64::from(payload_octets)) as f64;
        let bits = 8.0 * f64::from(payload_octets);
        bits * TICKS_PER_SEC as f64 / (cells * self.cell_time() as f64)
    }

    /// Cell-payload capacity (48 octets per cell), used for CBR streams.
    pub fn cell_payload_capacity(self) -> f64 {
        (CELL_PAYLOAD_OCTETS * 8) as f64 * TICKS_PER_SEC as f64 / self.cell_time() as f64
    }
}

impl fmt::Display for LinkRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bps", self.bits_per_second)
    }
}

/// Number of cells AAL5 needs for a payload of `payload_octets`.
pub fn cells_per_frame(payload_octets: u64) -> u64 {
    (payload_octets + AAL5_TRAILER_OCTETS).div_ceil(CELL_PAYLOAD_OCTETS)
}

pub fn segment_frame(payload_octets: u32, frame_id: u64, vc_id: u32, class: ServiceClass) -> Result<Vec<Cell>> {
    if payload_octets == 0 {
        return Err(invalid("frame payload must be at least one octet"));
    }
    let n = cells_per_frame(u64::from(payload_octets)) as u32;
    Ok((0..n)
        .map(|seq| Cell {
            vc_id,
            frame_id,
            seq_in_frame: seq,
            is_first: seq == 0,
            is_last: seq + 1 == n,
            length: payload_octets,
            class,
        })
        .collect())
}

/// Outcome of reassembling the cells that reached the receiver for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reassembly {
    Complete(Frame),
    /// Some cells never arrived. Partial delivery is frame loss.
    Lost {
        vc_id: u32,
        frame_id: u64,
        received_cells: usize,
        expected_cells: usize,
    },
}

impl Reassembly {
    pub fn is_complete(&self) -> bool {
        matches!(self, Reassembly::Complete(_))
    }
}

pub fn reassemble(cells: &[Cell]) -> Result<Reassembly> {
    let first = cells
        .first()
        .ok_or_else(|| invalid("cannot reassemble an empty cell list"))?;
    if cells
        .iter()
        .any(|c| c.frame_id != first.frame_id || c.vc_id != first.vc_id)
    {
        return Err(invalid("cells belong to more than one frame"));
    }
    let expected = cells_per_frame(u64::from(first.length)) as usize;
    let mut seen = BTreeSet::new();
    for c in cells {
        if c.length != first.length {
            return Err(Error::TraceCorruption(format!(
                "frame {} carries inconsistent length fields",
                first.frame_id
            )));
        }
        if c.seq_in_frame as usize >= expected {
            return Err(Error::TraceCorruption(format!(
                "frame {} has sequence number {} beyond its {expected} cells",
                first.frame_id, c.seq_in_frame
            )));
        }
        if c.is_first != (c.seq_in_frame == 0) || c.is_last != (c.seq_in_frame as usize + 1 == expected) {
            return Err(Error::TraceCorruption(format!(
                "frame {} cell {} has wrong first/last flags",
                first.frame_id, c.seq_in_frame
            )));
        }
        if !seen.insert(c.seq_in_frame) {
            return Err(Error::TraceCorruption(format!(
                "frame {} has duplicate sequence number {}",
                first.frame_id, c.seq_in_frame
            )));
        }
    }
    if seen.len() == expected {
        Ok(Reassembly::Complete(Frame {
            frame_id: first.frame_id,
            vc_id: first.vc_id,
            payload_octets: first.length,
            class: first.class,
        }))
    } else {
        Ok(Reassembly::Lost {
            vc_id: first.vc_id,
            frame_id: first.frame_id,
            received_cells: seen.len(),
            expected_cells: expected,
        })
    }
}

/// Cells per second needed to carry `effective_bps` of AAL payload in frames of
/// `payload_octets`.
pub fn effective_rate_to_cell_rate(effective_bps: f64, payload_octets: u32) -> Result<f64> {
    check_rate_args(effective_bps, payload_octets)?;
    let frames_per_sec = effective_bps / (8.0 * f64::from(payload_octets));
    Ok(frames_per_sec * cells_per_frame(u64::from(payload_octets)) as f64)
}

pub fn cell_rate_to_effective_rate(cells_per_sec: f64, payload_octets: u32) -> Result<f64> {
    check_rate_args(cells_per_sec, payload_octets)?;
    let frames_per_sec = cells_per_sec / cells_per_frame(u64::from(payload_octets)) as f64;
    Ok(frames_per_sec * 8.0 * f64::from(payload_octets))
}

fn check_rate_args(rate: f64, payload_octets: u32) -> Result<()> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(invalid(format!("rate must be positive and finite, got {rate}")));
    }
    if payload_octets == 0 {
        return Err(invalid("payload must be at least one octet"));
    }
    Ok(())
}
