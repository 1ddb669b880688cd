use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{invalid, Result};

/// Jain's index over relative allocations `x_i = measured_i / ideal_i`:
/// `(sum x)^2 / (n * sum x^2)`. 1 is perfectly fair; k equal non-zero shares
/// among n give k/n.
pub fn fairness_index(measured: &[f64], ideal: &[f64]) -> Result<f64> {
    check_lengths(measured.len(), ideal.len())?;
    if let Some(i) = ideal.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(invalid(format!("ideal share {i} must be positive, got {}", ideal[i])));
    }
    if let Some(i) = measured.iter().position(|&t| t < 0.0 || !t.is_finite()) {
        return Err(invalid(format!(
            "measured throughput {i} must be non-negative, got {}",
            measured[i]
        )));
    }
    let xs: Vec<f64> = measured.iter().zip(ideal).map(|(t, i)| t / i).collect();
    let sum: f64 = xs.iter().sum();
    let sum_sq: f64 = xs.iter().map(|x| x * x).sum();
    if sum_sq == 0.0 {
        return Err(invalid("fairness is undefined when every flow received nothing"));
    }
    Ok(sum * sum / (xs.len() as f64 * sum_sq))
}

/// [`fairness_index`] in exact rational arithmetic.
pub fn fairness_index_exact(measured: &[BigRational], ideal: &[BigRational]) -> Result<BigRational> {
    check_lengths(measured.len(), ideal.len())?;
    if ideal.iter().any(|t| *t <= BigRational::zero()) {
        return Err(invalid("ideal shares must be positive"));
    }
    let xs: Vec<BigRational> = measured.iter().zip(ideal).map(|(t, i)| t / i).collect();
    let sum: BigRational = xs.iter().sum();
    let sum_sq: BigRational = xs.iter().map(|x| x * x).sum();
    if sum_sq.is_zero() {
        return Err(invalid("fairness is undefined when every flow received nothing"));
    }
    let n = BigRational::from_integer(xs.len().into());
    Ok(&sum * &sum / (n * sum_sq))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(invalid(format!("{a} measured values but {b} ideal shares")));
    }
    if a == 0 {
        return Err(invalid("fairness of zero flows"));
    }
    Ok(())
}

/// Arithmetic mean of per-repetition fairness indices.
pub fn mean_fairness(indices: &[f64]) -> Result<f64> {
    if indices.is_empty() {
        return Err(invalid("mean fairness of zero runs"));
    }
    Ok(indices.iter().sum::<f64>() / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(fairness_index(&[3.0, 3.0, 3.0], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(fairness_index(&[1.0, 1.0, 0.0, 0.0], &[1.0; 4]).unwrap(), 0.5);
        let f = fairness_index(&[1.0, 2.0, 3.0], &[1.0; 3]).unwrap();
        assert!((f - 36.0 / 42.0).abs() < 1e-15);
        assert!(fairness_index(&[1.0], &[0.0]).is_err());
        assert!(fairness_index(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn units_do_not_matter() {
        let a = fairness_index(&[1.0, 2.0, 5.0], &[2.0, 2.0, 4.0]).unwrap();
        let b = fairness_index(&[1e6, 2e6, 5e6], &[2e6, 2e6, 4e6]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn means() {
        assert_eq!(mean_fairness(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mean_fairness(&[0.5, 1.0]).unwrap(), 0.75);
        assert_eq!(mean_fairness(&[0.8]).unwrap(), 0.8);
        assert!(mean_fairness(&[]).is_err());
    }
}
