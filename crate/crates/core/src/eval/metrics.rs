//! Coefficient of determination.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("R² needs at least 2 values, got {0}")]
    TooFew(usize),
    #[error("{actual} actual values but {predicted} predictions")]
    Length { actual: usize, predicted: usize },
    #[error("actual values have zero variance; R² is undefined")]
    ZeroVariance,
    #[error("non-finite value in R² input")]
    NonFinite,
}

/// `1 - SS_res / SS_tot`, with `SS_tot` taken about the mean of `actual`.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricError> {
    if actual.len() != predicted.len() {
        return Err(MetricError::Length {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.len() < 2 {
        return Err(MetricError::TooFew(actual.len()));
    }
    if !actual.iter().chain(predicted).all(|v| v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(r2(&a, &a).unwrap(), 1.0);
        assert_eq!(r2(&a, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&a, &[1.0, 2.0, 4.0]).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert_eq!(r2(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::ZeroVariance));
        assert_eq!(r2(&[1.0], &[1.0]), Err(MetricError::TooFew(1)));
        assert!(matches!(r2(&[1.0, 2.0], &[1.0]), Err(MetricError::Length { .. })));
        assert_eq!(r2(&[1.0, 2.0], &[f64::NAN, 1.0]), Err(MetricError::NonFinite));
    }
}
