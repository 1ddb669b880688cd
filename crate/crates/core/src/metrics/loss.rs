use crate::error::{invalid, Result};

/// Fraction of offered frames that were not forwarded in full.
pub fn frame_loss_ratio(input_frames: u64, output_frames: u64) -> Result<f64> {
    if input_frames == 0 {
        return Err(invalid("frame loss ratio of zero input frames"));
    }
    if output_frames > input_frames {
        return Err(invalid(format!(
            "{output_frames} frames out but only {input_frames} in"
        )));
    }
    Ok((input_frames - output_frames) as f64 / input_frames as f64)
}

/// Loss ratio over several runs: total lost over total offered. Each run is
/// `(input, output)`, either frame counts or rates.
pub fn average_flr(runs: &[(f64, f64)]) -> Result<f64> {
    if runs.is_empty() {
        return Err(invalid("average loss ratio of zero runs"));
    }
    let input: f64 = runs.iter().map(|r| r.0).sum();
    let output: f64 = runs.iter().map(|r| r.1).sum();
    if !(input > 0.0) {
        return Err(invalid("average loss ratio of zero input"));
    }
    Ok((input - output) / input)
}

/// The naive average of per-run ratios. Kept for comparison only: it
/// over-weights short runs.
pub fn mean_of_ratios(runs: &[(f64, f64)]) -> Result<f64> {
    if runs.is_empty() {
        return Err(invalid("mean of zero runs"));
    }
    let sum: f64 = runs.iter().map(|&(i, o)| (i - o) / i).sum();
    Ok(sum / runs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(frame_loss_ratio(100, 100).unwrap(), 0.0);
        assert_eq!(frame_loss_ratio(100, 90).unwrap(), 0.1);
        assert!(frame_loss_ratio(0, 0).is_err());
        assert!(frame_loss_ratio(5, 6).is_err());
        let runs = [(100.0, 90.0), (300.0, 240.0)];
        assert_eq!(average_flr(&runs).unwrap(), 0.175);
        assert!((mean_of_ratios(&runs).unwrap() - 0.15).abs() < 1e-15);
    }
}
