//! Per-position mean imputation.

use serde::{Deserialize, Serialize};

use super::{DataError, MaskedCurve};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeStats {
    pub means: Vec<f64>,
}

impl ImputeStats {
    /// Means of the observed values at each position over `curves` (the
    /// training split). Fails if any position is never observed.
    pub fn fit(curves: &[MaskedCurve]) -> Result<Self, DataError> {
        let p = curves
            .first()
            .map(MaskedCurve::len)
            .ok_or_else(|| DataError::Invalid("imputation needs at least one training curve".into()))?;
        let mut sums = vec![0.0; p];
        let mut counts = vec![0usize; p];
        for c in curves {
            if c.len() != p {
                return Err(DataError::Invalid("training curves have different lengths".into()));
            }
            for (i, (v, m)) in c.values.iter().zip(&c.mask).enumerate() {
                if *m {
                    sums[i] += v;
                    counts[i] += 1;
                }
            }
        }
        let never: Vec<usize> = counts.iter().enumerate().filter(|(_, c)| **c == 0).map(|(i, _)| i).collect();
        if !never.is_empty() {
            return Err(DataError::Invalid(format!(
                "grid positions never observed in training: {never:?}"
            )));
        }
        Ok(Self {
            means: sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect(),
        })
    }

    /// Fills masked positions with the training means; observed values pass
    /// through unchanged.
    pub fn apply(&self, curve: &MaskedCurve) -> Result<Vec<f64>, DataError> {
        if curve.len() != self.means.len() {
            return Err(DataError::Invalid(format!(
                "curve has {} points, imputation stats {}",
                curve.len(),
                self.means.len()
            )));
        }
        Ok(curve
            .values
            .iter()
            .zip(&curve.mask)
            .zip(&self.means)
            .map(|((v, m), mean)| if *m { *v } else { *mean })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masked(values: &[f64], mask: &[bool]) -> MaskedCurve {
        MaskedCurve::new(values, mask.to_vec()).unwrap()
    }

    #[test]
    fn fully_observed_curve_is_unchanged() {
        let stats = ImputeStats {
            means: vec![9.0, 9.0, 9.0],
        };
        let c = MaskedCurve::fully_observed(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(stats.apply(&c).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn five_sample_fixture_matches_hand_means() {
        let t = true;
        let f = false;
        let train = vec![
            masked(&[0.0, 1.0, 2.0, 3.0], &[t, t, f, t]),
            masked(&[0.0, 3.0, 4.0, 5.0], &[t, t, t, f]),
            masked(&[0.0, 2.0, 6.0, 7.0], &[t, f, t, t]),
            masked(&[0.0, 5.0, 8.0, 1.0], &[t, t, t, t]),
            masked(&[0.0, 4.0, 1.0, 9.0], &[t, f, f, t]),
        ];
        let stats = ImputeStats::fit(&train).unwrap();
        // position 1: {1,3,5}; position 2: {4,6,8}; position 3: {3,7,1,9}
        assert_eq!(stats.means, vec![0.0, 3.0, 6.0, 5.0]);
        let out = stats.apply(&masked(&[0.5, 0.0, 0.0, 2.0], &[t, f, f, t])).unwrap();
        assert_eq!(out, vec![0.5, 3.0, 6.0, 2.0]);
    }

    #[test]
    fn mean_of_two() {
        let stats = ImputeStats::fit(&[
            masked(&[1.0, 0.0], &[true, false]),
            masked(&[3.0, 0.0], &[true, true]),
        ])
        .unwrap();
        assert_eq!(stats.means[0], 2.0);
    }

    #[test]
    fn never_observed_position_is_listed() {
        let err = ImputeStats::fit(&[masked(&[1.0, 0.0, 0.0], &[true, false, false])]).unwrap_err();
        assert!(err.to_string().contains("[1, 2]"));
    }
}
