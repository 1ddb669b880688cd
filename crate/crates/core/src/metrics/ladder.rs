use serde::{Deserialize, Serialize};

use super::frames::frame_outcome;
use super::latency::{latency_stats, mimo_from_events, mimo_from_monitor, Latency, LatencyStats};
use super::throughput::FlowTemplate;
use crate::error::{invalid, Error, Result};
use crate::sim::{simulate, FrameLimit, MonitorModel, Network, RoutingTable, TrafficSpec};
use crate::{Tick, TICKS_PER_SEC};

/// A latency test: one foreground VC measured over `p` consecutive frames
/// while background traffic runs from tick 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySystem {
    pub network: Network,
    pub routes: RoutingTable,
    /// `full_bps` is the full foreground load.
    pub foreground: FlowTemplate,
    pub background: Vec<TrafficSpec>,
    /// Foreground starts here, after the background has settled.
    pub warmup: Tick,
    pub p: usize,
    pub alpha: f64,
    pub monitor: MonitorModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    /// Fraction of the full foreground load.
    pub fraction: f64,
    pub rate_bps: f64,
    pub stats: LatencyStats,
    pub samples: Vec<Latency>,
}

impl LatencySystem {
    pub fn measure(&self, fraction: f64) -> Result<LatencyPoint> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(invalid(format!(
                "foreground fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let rate = self.foreground.full_bps * fraction;
        let fg = self
            .foreground
            .at_rate(rate)
            .starting_at(self.warmup + self.foreground.phase)
            .limited(FrameLimit::Count(self.p as u64));
        let span = self.p as f64 * 8.0 * f64::from(self.foreground.payload_octets) / rate;
        let horizon = fg.start_tick + (span * TICKS_PER_SEC as f64).ceil() as Tick + 1;
        let mut traffic = vec![fg];
        traffic.extend(self.background.iter().cloned());
        let trace = simulate(&self.network, &self.routes, &traffic, horizon)?;

        let vc = self.foreground.vc_id;
        let mut samples = Vec::with_capacity(self.p);
        for frame in trace.frames().filter(|f| f.flow.vc_id == vc) {
            let outcome = frame_outcome(&frame)?;
            let by_events = mimo_from_events(&outcome.events)?;
            let by_cells = mimo_from_monitor(&frame, &self.monitor)?;
            if by_events != by_cells {
                return Err(Error::TraceCorruption(format!(
                    "frame {}: latency {by_events:?} from events but {by_cells:?} from cells",
                    outcome.frame_id
                )));
            }
            samples.push(by_events);
        }
        if samples.len() != self.p {
            return Err(Error::TraceCorruption(format!(
                "expected {} foreground frames, trace holds {}",
                self.p,
                samples.len()
            )));
        }
        Ok(LatencyPoint {
            fraction,
            rate_bps: rate,
            stats: latency_stats(&samples, self.alpha)?,
            samples,
        })
    }

    /// Measures at each fraction in turn, stopping after the first run that
    /// lost a frame.
    pub fn ladder(&self, fractions: &[f64]) -> Result<Vec<LatencyPoint>> {
        let mut points = Vec::new();
        for &f in fractions {
            let point = self.measure(f)?;
            let lossy = point.stats.is_unbounded();
            points.push(point);
            if lossy {
                break;
            }
        }
        Ok(points)
    }
}

/// `start, start*factor, ...` below 1, then 1.
pub fn geometric_ladder(start: f64, factor: f64) -> Result<Vec<f64>> {
    if !(start > 0.0 && start <= 1.0) || !(factor > 1.0) {
        return Err(invalid(format!(
            "ladder needs 0 < start <= 1 and factor > 1, got {start} and {factor}"
        )));
    }
    let mut v = Vec::new();
    let mut x = start;
    while x < 1.0 - 1e-12 {
        v.push(x);
        x *= factor;
    }
    v.push(1.0);
    Ok(v)
}
