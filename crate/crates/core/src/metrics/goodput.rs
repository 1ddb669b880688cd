use super::frames::FrameOutcome;
use crate::aal::ServiceClass;
use crate::error::{invalid, Result};
use crate::Tick;

/// Frames received over frames transmitted in a measurement interval.
pub fn application_goodput(received: u64, transmitted: u64) -> Result<f64> {
    if transmitted == 0 {
        return Err(invalid("goodput with no transmitted frames"));
    }
    if received > transmitted {
        return Err(invalid(format!("{received} frames received but {transmitted} sent")));
    }
    Ok(received as f64 / transmitted as f64)
}

/// Counts `(transmitted, received)` user frames whose first bit entered in
/// `[from, to)`. Signaling and CBR streams are not user frames.
pub fn goodput_counts<'a>(frames: impl IntoIterator<Item = &'a FrameOutcome>, from: Tick, to: Tick) -> (u64, u64) {
    let mut counts = (0, 0);
    for f in frames {
        if f.class != ServiceClass::Ubr || f.events.t1 < from || f.events.t1 >= to {
            continue;
        }
        counts.0 += 1;
        counts.1 += u64::from(f.delivered());
    }
    counts
}
