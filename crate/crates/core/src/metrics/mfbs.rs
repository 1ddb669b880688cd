use serde::{Deserialize, Serialize};

use super::frames::frame_outcomes;
use super::throughput::System;
use crate::error::{invalid, Result};
use crate::sim::{simulate, FrameLimit, TrafficSpec};
use crate::TICKS_PER_SEC;

/// Largest burst every foreground source can send back to back at the peak
/// rate without any frame being lost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfbsResult {
    pub payload_octets: u32,
    pub peak_bps: f64,
    /// `None` when no burst up to `ceiling_frames` lost anything.
    pub frames: Option<u64>,
    pub ceiling_frames: u64,
    /// Bursts tried, in order.
    pub probes: Vec<BurstProbe>,
}

/// Frame counts of one burst, summed over the foreground flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstProbe {
    pub frames: u64,
    pub sent: u64,
    pub delivered: u64,
}

impl BurstProbe {
    pub fn lossless(&self) -> bool {
        self.sent == self.delivered
    }
}

impl MfbsResult {
    /// The burst size in AAL payload octets.
    pub fn octets(&self) -> Option<u64> {
        self.frames.map(|f| f * u64::from(self.payload_octets))
    }
}

/// Sends one burst of `frames` frames on every foreground flow, starting at
/// the end of warm-up, and counts what arrived.
pub fn burst(system: &System, peak_bps: f64, frames: u64) -> Result<BurstProbe> {
    let start = system.measurement.warmup;
    let mut longest = 0.0f64;
    let mut traffic: Vec<TrafficSpec> = Vec::new();
    for f in &system.foreground {
        let spec = f
            .at_rate(peak_bps)
            .starting_at(start + f.phase)
            .limited(FrameLimit::Count(frames));
        let span = frames as f64 * 8.0 * f64::from(f.payload_octets) / peak_bps;
        longest = longest.max(span + f.phase as f64 / TICKS_PER_SEC as f64);
        traffic.push(spec);
    }
    traffic.extend(system.background.iter().cloned());
    let horizon = start + (longest * TICKS_PER_SEC as f64).ceil() as u64 + 1;
    let trace = simulate(&system.network, &system.routes, &traffic, horizon)?;
    let fg: Vec<_> = system.foreground.iter().map(|f| f.vc_id).collect();
    let mut probe = BurstProbe {
        frames,
        sent: 0,
        delivered: 0,
    };
    for f in frame_outcomes(&trace)?.iter().filter(|f| fg.contains(&f.vc_id)) {
        probe.sent += 1;
        probe.delivered += u64::from(f.delivered());
    }
    Ok(probe)
}

pub fn burst_is_lossless(system: &System, peak_bps: f64, frames: u64) -> Result<bool> {
    Ok(burst(system, peak_bps, frames)?.lossless())
}

/// Successive increase (doubling) to the first lossy burst, then bisection
/// down to the exact boundary.
pub fn mfbs(system: &System, peak_bps: f64, ceiling_frames: u64) -> Result<MfbsResult> {
    let payload = system
        .foreground
        .first()
        .ok_or_else(|| invalid("system has no foreground flows"))?
        .payload_octets;
    if ceiling_frames == 0 {
        return Err(invalid("burst ceiling must be at least one frame"));
    }
    let mut probes = Vec::new();
    let mut check = |n: u64| -> Result<bool> {
        let probe = burst(system, peak_bps, n)?;
        probes.push(probe);
        Ok(probe.lossless())
    };
    let mut lo = 0;
    let mut hi = None;
    let mut n = 1;
    while hi.is_none() {
        if check(n)? {
            lo = n;
            if n == ceiling_frames {
                break;
            }
            n = (n * 2).min(ceiling_frames);
        } else {
            hi = Some(n);
        }
    }
    let frames = match hi {
        None => None,
        Some(mut hi) => {
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if check(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(lo)
        }
    };
    Ok(MfbsResult {
        payload_octets: payload,
        peak_bps,
        frames,
        ceiling_frames,
        probes,
    })
}
