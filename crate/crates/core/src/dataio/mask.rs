//! Contiguous-window masking of curves.

use rand::Rng;

use super::DataError;

/// A curve with some entries removed. Removed entries hold NaN; `mask[i]` is
/// true where the value was observed.
#[derive(Clone, Debug)]
pub struct MaskedCurve {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub masked_fraction: f64,
}

impl MaskedCurve {
    /// Builds a masked curve from full values and an observation mask.
    pub fn new(values: &[f64], mask: Vec<bool>) -> Result<Self, DataError> {
        if values.len() != mask.len() {
            return Err(DataError::Invalid(format!(
                "{} values but {} mask entries",
                values.len(),
                mask.len()
            )));
        }
        if values.iter().zip(&mask).any(|(v, m)| *m && !v.is_finite()) {
            return Err(DataError::Invalid("observed curve values must be finite".into()));
        }
        let observed = mask.iter().filter(|m| **m).count();
        Ok(Self {
            values: values
                .iter()
                .zip(&mask)
                .map(|(v, m)| if *m { *v } else { f64::NAN })
                .collect(),
            masked_fraction: 1.0 - observed as f64 / mask.len() as f64,
            mask,
        })
    }

    /// A curve with nothing removed.
    pub fn fully_observed(values: &[f64]) -> Result<Self, DataError> {
        Self::new(values, vec![true; values.len()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index range of the masked entries when they form one window.
    pub fn window(&self) -> Option<(usize, usize)> {
        let start = self.mask.iter().position(|m| !m)?;
        let len = self.mask[start..].iter().take_while(|m| !**m).count();
        Some((start, len))
    }
}

/// Validates a masking fraction range `lo <= hi` inside `(0, 1)`.
pub fn check_fraction_range(range: (f64, f64)) -> Result<(), DataError> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(DataError::Invalid(format!(
            "mask fraction range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1"
        )));
    }
    Ok(())
}

/// Draws `f` uniformly from `range` and removes `round(f * P)` contiguous
/// points at a uniformly random start.
pub fn mask_curve<R: Rng>(stress: &[f64], range: (f64, f64), rng: &mut R) -> Result<MaskedCurve, DataError> {
    check_fraction_range(range)?;
    let p = stress.len();
    let f = if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    };
    let len = (f * p as f64).round() as usize;
    if len >= p {
        return Err(DataError::Invalid(format!(
            "mask window of {len} points would cover the whole {p}-point curve"
        )));
    }
    let start = rng.random_range(0..=p - len);
    let mask = (0..p).map(|i| i < start || i >= start + len).collect();
    MaskedCurve::new(stress, mask)
}
