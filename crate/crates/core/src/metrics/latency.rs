//! MIMO frame latency.
//!
//! With t1/t2 the first/last bit entering and t3 the last bit leaving,
//! `MIMO = min(LILO, FILO - NFOT)` where `LILO = t3 - t2`, `FILO = t3 - t1` and
//! NFOT is the frame input time scaled by the input/output rate ratio. The same
//! value can be rebuilt from the per-cell transfer delays a monitor reports:
//! from the last cell alone when the input is the slower link, or from the
//! first cell plus the first-to-last inter-arrival time when it is the faster.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::frames::FrameEvents;
use crate::aal::LinkRate;
use crate::error::{invalid, Error, Result};
use crate::sim::{FrameCells, MonitorModel};
use crate::{div_round_half_up, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Finite(Tick),
    /// Lost or corrupted frame.
    Unbounded,
}

impl Latency {
    pub fn finite(self) -> Option<Tick> {
        match self {
            Latency::Finite(t) => Some(t),
            Latency::Unbounded => None,
        }
    }
}

/// Nominal frame output time: `fit * input_bps / output_bps`, rounded half up.
pub fn nfot(fit: Tick, input_rate: LinkRate, output_rate: LinkRate) -> Tick {
    div_round_half_up(
        u128::from(fit) * u128::from(input_rate.bps()),
        u128::from(output_rate.bps()),
    ) as Tick
}

pub fn mimo_from_events(e: &FrameEvents) -> Result<Latency> {
    if e.t2 < e.t1 {
        return Err(Error::InvalidTrace(format!(
            "last bit in at {} before first bit at {}",
            e.t2, e.t1
        )));
    }
    let Some(t3) = e.t3 else {
        return Ok(Latency::Unbounded);
    };
    if t3 < e.t2 {
        return Err(Error::InvalidTrace(format!(
            "frame leaves at {t3} before it has entered at {}",
            e.t2
        )));
    }
    let lilo = t3 - e.t2;
    let filo = t3 - e.t1;
    let nominal = nfot(e.fit(), e.input_rate, e.output_rate);
    let filo_branch = filo
        .checked_sub(nominal)
        .ok_or_else(|| Error::InvalidTrace(format!("FILO {filo} is shorter than the nominal output time {nominal}")))?;
    Ok(Latency::Finite(lilo.min(filo_branch)))
}

fn calibrated(value: i128, what: &str) -> Result<Tick> {
    if value < 0 {
        return Err(Error::Calibration(format!("{what} came out negative ({value} ticks)")));
    }
    Ok(value as Tick)
}

/// Input link no faster than the output: last cell's CTD minus its input
/// transmit time and the monitor bias.
pub fn mimo_from_cells_slow_input(last_ctd: Tick, input_rate: LinkRate, monitor: &MonitorModel) -> Result<Tick> {
    let v = i128::from(last_ctd) - i128::from(input_rate.cell_time()) - i128::from(monitor.bias());
    calibrated(v, "latency from the last cell")
}

/// Input link no slower than the output: `FIFO + FOLO - NFOT`.
pub fn mimo_from_cells_fast_input(
    first_ctd: Tick,
    first_last_interarrival: Tick,
    input_rate: LinkRate,
    output_rate: LinkRate,
    fit: Tick,
    monitor: &MonitorModel,
) -> Result<Tick> {
    if input_rate.bps() < output_rate.bps() {
        return Err(invalid("fast-input reconstruction needs input rate >= output rate"));
    }
    let c_out = i128::from(output_rate.cell_time());
    let fifo = i128::from(first_ctd) - c_out - i128::from(monitor.bias());
    let folo = i128::from(first_last_interarrival) + c_out;
    let v = fifo + folo - i128::from(nfot(fit, input_rate, output_rate));
    calibrated(v, "latency from the first cell")
}

/// Rebuilds a frame copy's MIMO latency from what `monitor` would report,
/// choosing the reconstruction that fits the rate pair.
pub fn mimo_from_monitor(frame: &FrameCells<'_>, monitor: &MonitorModel) -> Result<Latency> {
    let flow = frame.flow;
    if frame.cells.iter().any(|r| r.is_lost()) {
        return Ok(Latency::Unbounded);
    }
    let first = frame
        .cells
        .iter()
        .find(|r| r.is_first)
        .ok_or_else(|| invalid("frame without first cell"))?;
    let last = frame
        .cells
        .iter()
        .find(|r| r.is_last)
        .ok_or_else(|| invalid("frame without last cell"))?;
    let obs_first = monitor.observe(first).expect("delivered");
    let obs_last = monitor.observe(last).expect("delivered");
    let latency = if flow.input_rate.bps() <= flow.output_rate.bps() {
        mimo_from_cells_slow_input(obs_last.ctd, flow.input_rate, monitor)?
    } else {
        let fit = last.entry_last_bit - first.entry_first_bit;
        mimo_from_cells_fast_input(
            obs_first.ctd,
            obs_last.arrival - obs_first.arrival,
            flow.input_rate,
            flow.output_rate,
            fit,
            monitor,
        )?
    };
    Ok(Latency::Finite(latency))
}

/// Location and spread of a latency sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stddev: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p: usize,
    pub alpha: f64,
    pub z: f64,
    pub lost_in_window: usize,
    /// `None` when any frame in the window was lost: the mean is unbounded.
    pub summary: Option<Summary>,
}

impl LatencyStats {
    pub fn is_unbounded(&self) -> bool {
        self.summary.is_none()
    }
}

/// The (1 - alpha/2) quantile of the unit normal distribution.
pub fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(1.0 - alpha / 2.0))
}

/// Sample statistics of `p` consecutive frame latencies with a `1 - alpha`
/// confidence interval for the mean. Standard deviation divides by `p - 1`.
pub fn latency_stats(latencies: &[Latency], alpha: f64) -> Result<LatencyStats> {
    let p = latencies.len();
    if p < 2 {
        return Err(invalid(format!("need at least two latency samples, got {p}")));
    }
    let z = z_quantile(alpha)?;
    let lost = latencies.iter().filter(|l| l.finite().is_none()).count();
    let summary = (lost == 0).then(|| {
        let xs: Vec<f64> = latencies.iter().filter_map(|l| l.finite()).map(|t| t as f64).collect();
        let n = p as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let stddev = var.sqrt();
        let stderr = stddev / n.sqrt();
        Summary {
            mean,
            stddev,
            stderr,
            ci_low: mean - z * stderr,
            ci_high: mean + z * stderr,
        }
    });
    Ok(LatencyStats {
        p,
        alpha,
        z,
        lost_in_window: lost,
        summary,
    })
}
