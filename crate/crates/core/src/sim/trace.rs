//! Cell-level trace: what an analyzer attached to every external port would see.
//!
//! The text format is one record per line, tab separated, fields in the order
//! `vc_id frame_id seq_in_frame is_first is_last entry_first_bit entry_last_bit
//! exit_last_bit transfer_delay leaf class`. Booleans are `0`/`1`; a lost cell
//! has `LOST` in both `exit_last_bit` and `transfer_delay`. Lines starting with
//! `#` are comments.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::network::PortRef;
use crate::aal::{Cell, LinkRate, ServiceClass};
use crate::error::{Error, Result};
use crate::topology::VcId;
use crate::Tick;

pub const TRACE_HEADER: &str =
    "# vc_id\tframe_id\tseq_in_frame\tis_first\tis_last\tentry_first_bit\tentry_last_bit\texit_last_bit\ttransfer_delay\tleaf\tclass";

/// One cell copy's journey from system entry to system exit.
///
/// A multicast cell has one record per leaf; `leaf` numbers the copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub vc_id: VcId,
    pub frame_id: u64,
    pub seq_in_frame: u32,
    pub is_first: bool,
    pub is_last: bool,
    pub entry_first_bit: Tick,
    pub entry_last_bit: Tick,
    pub exit_last_bit: Option<Tick>,
    pub leaf: u32,
    pub class: ServiceClass,
}

impl CellRecord {
    pub fn transfer_delay(&self) -> Option<Tick> {
        self.exit_last_bit.map(|e| e - self.entry_first_bit)
    }

    pub fn is_lost(&self) -> bool {
        self.exit_last_bit.is_none()
    }

    pub fn cell(&self, length: u32) -> Cell {
        Cell {
            vc_id: self.vc_id,
            frame_id: self.frame_id,
            seq_in_frame: self.seq_in_frame,
            is_first: self.is_first,
            is_last: self.is_last,
            length,
            class: self.class,
        }
    }
}

/// Where a leaf copy leaves the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Egress {
    /// Transmitted on an external output port.
    Port(PortRef),
    /// Absorbed after coming back through a loopback input.
    Absorbed(PortRef),
}

/// Static description of one (VC, leaf) flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowInfo {
    pub vc_id: VcId,
    pub leaf: u32,
    pub leaves: u32,
    pub ingress: PortRef,
    pub egress: Egress,
    pub input_rate: LinkRate,
    pub output_rate: LinkRate,
    pub payload_octets: u32,
    pub class: ServiceClass,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcCounters {
    /// Cells the sources put on the wire.
    pub injected_cells: u64,
    /// Leaf copies that reached their egress.
    pub delivered: u64,
    /// Leaf copies lost to full buffers.
    pub dropped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub per_vc: BTreeMap<VcId, VcCounters>,
    /// Number of buffer-overflow events (one per discarded copy at a port).
    pub buffer_drops: u64,
    pub events: u64,
}

impl SimStats {
    pub fn totals(&self) -> VcCounters {
        self.per_vc.values().fold(VcCounters::default(), |a, c| VcCounters {
            injected_cells: a.injected_cells + c.injected_cells,
            delivered: a.delivered + c.delivered,
            dropped: a.dropped + c.dropped,
        })
    }
}

/// Output of one simulation run. Records are sorted by
/// `(vc_id, leaf, frame_id, seq_in_frame)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<CellRecord>,
    pub flows: Vec<FlowInfo>,
    pub horizon: Tick,
    pub stats: SimStats,
}

/// Cells of one frame copy, in sequence order.
#[derive(Debug, Clone, Copy)]
pub struct FrameCells<'a> {
    pub flow: &'a FlowInfo,
    pub cells: &'a [CellRecord],
}

impl<'a> FrameCells<'a> {
    pub fn frame_id(&self) -> u64 {
        self.cells[0].frame_id
    }
}

impl Trace {
    pub fn flow(&self, vc: VcId, leaf: u32) -> Option<&FlowInfo> {
        self.flows.iter().find(|f| f.vc_id == vc && f.leaf == leaf)
    }

    /// Iterates frame copies in record order.
    pub fn frames(&self) -> impl Iterator<Item = FrameCells<'_>> + '_ {
        let flows: BTreeMap<(VcId, u32), &FlowInfo> = self.flows.iter().map(|f| ((f.vc_id, f.leaf), f)).collect();
        self.records
            .chunk_by(|a, b| a.vc_id == b.vc_id && a.leaf == b.leaf && a.frame_id == b.frame_id)
            .map(move |cells| FrameCells {
                flow: flows[&(cells[0].vc_id, cells[0].leaf)],
                cells,
            })
    }

    /// Shifts every timestamp back by `origin`.
    pub fn rebased(&self, origin: Tick) -> Trace {
        let mut t = self.clone();
        for r in &mut t.records {
            r.entry_first_bit -= origin;
            r.entry_last_bit -= origin;
            r.exit_last_bit = r.exit_last_bit.map(|e| e - origin);
        }
        t.horizon = t.horizon.saturating_sub(origin);
        t
    }

    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            let exit = r.exit_last_bit.map_or("LOST".to_string(), |e| e.to_string());
            let delay = r.transfer_delay().map_or("LOST".to_string(), |d| d.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.vc_id,
                r.frame_id,
                r.seq_in_frame,
                u8::from(r.is_first),
                u8::from(r.is_last),
                r.entry_first_bit,
                r.entry_last_bit,
                exit,
                delay,
                r.leaf,
                r.class
            )?;
        }
        Ok(())
    }
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<CellRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 11 {
            return Err(Error::Parse {
                line: lineno,
                field: "record".into(),
                message: format!("expected 11 fields, found {}", fields.len()),
            });
        }
        let bad = |field: &str, msg: String| Error::Parse {
            line: lineno,
            field: field.into(),
            message: msg,
        };
        let num = |idx: usize, name: &str| -> Result<u64> {
            fields[idx]
                .parse()
                .map_err(|_| bad(name, format!("`{}` is not an integer", fields[idx])))
        };
        let flag = |idx: usize, name: &str| -> Result<bool> {
            match fields[idx] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(name, format!("`{other}` is not 0 or 1"))),
            }
        };
        let exit = match fields[7] {
            "LOST" => None,
            _ => Some(num(7, "exit_last_bit")?),
        };
        let record = CellRecord {
            vc_id: num(0, "vc_id")? as VcId,
            frame_id: num(1, "frame_id")?,
            seq_in_frame: num(2, "seq_in_frame")? as u32,
            is_first: flag(3, "is_first")?,
            is_last: flag(4, "is_last")?,
            entry_first_bit: num(5, "entry_first_bit")?,
            entry_last_bit: num(6, "entry_last_bit")?,
            exit_last_bit: exit,
            leaf: num(9, "leaf")? as u32,
            class: fields[10].parse().map_err(|e: Error| bad("class", e.to_string()))?,
        };
        let delay_ok = match (fields[8], record.transfer_delay()) {
            ("LOST", None) => true,
            (d, Some(expected)) => d.parse::<u64>().ok() == Some(expected),
            _ => false,
        };
        if !delay_ok {
            return Err(bad("transfer_delay", "does not match the entry and exit times".into()));
        }
        records.push(record);
    }
    Ok(records)
}
