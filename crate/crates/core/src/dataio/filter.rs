//! Interquartile-range outlier removal over the four Minkowski functionals.

use serde::{Deserialize, Serialize};

use super::{DataError, Sample, N_MINKOWSKI};

/// Quantile by linear interpolation between order statistics at position
/// `q * (n - 1)` of the sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fence {
    pub q1: f64,
    pub q3: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IqrOutcome {
    pub kept: Vec<Sample>,
    pub dropped_ids: Vec<String>,
    pub fences: [Fence; N_MINKOWSKI],
}

/// Drops every sample with any functional strictly outside
/// `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`. Kept samples retain their order.
pub fn iqr_filter(samples: &[Sample]) -> Result<IqrOutcome, DataError> {
    if samples.len() < 4 {
        return Err(DataError::Invalid(format!(
            "IQR filtering needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    let fences: [Fence; N_MINKOWSKI] = std::array::from_fn(|j| {
        let mut col: Vec<f64> = samples.iter().map(|s| s.minkowski[j]).collect();
        col.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&col, 0.25), quantile(&col, 0.75));
        let iqr = q3 - q1;
        Fence {
            q1,
            q3,
            lower: q1 - 1.5 * iqr,
            upper: q3 + 1.5 * iqr,
        }
    });
    let mut kept = Vec::with_capacity(samples.len());
    let mut dropped_ids = Vec::new();
    for s in samples {
        let outside = s
            .minkowski
            .iter()
            .zip(&fences)
            .any(|(v, f)| *v < f.lower || *v > f.upper);
        if outside {
            dropped_ids.push(s.id.clone());
        } else {
            kept.push(s.clone());
        }
    }
    Ok(IqrOutcome {
        kept,
        dropped_ids,
        fences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: usize, m: [f64; 4]) -> Sample {
        Sample {
            id: format!("s{id}"),
            minkowski: m,
            aux: None,
            stress: vec![0.0, 1.0],
        }
    }

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn planted_porosity_outlier_is_the_only_drop() {
        let porosity = [0.10, 0.12, 0.14, 0.16, 0.18, 0.20, 0.22, 0.24, 0.95];
        let samples: Vec<Sample> = porosity
            .iter()
            .enumerate()
            .map(|(i, &p)| sample(i, [p, 1.0 + i as f64 * 0.1, 0.0, i as f64]))
            .collect();
        let out = iqr_filter(&samples).unwrap();
        assert_eq!(out.dropped_ids, vec!["s8".to_string()]);
        assert_eq!(out.kept.len(), 8);
        // n = 9: Q1 at position 2, Q3 at position 6 of the sorted column.
        let f = out.fences[0];
        assert!((f.q1 - 0.14).abs() < 1e-15);
        assert!((f.q3 - 0.22).abs() < 1e-15);
        assert!((f.lower - (0.14 - 1.5 * 0.08)).abs() < 1e-12);
        assert!((f.upper - (0.22 + 1.5 * 0.08)).abs() < 1e-12);
    }

    #[test]
    fn identical_features_drop_nothing() {
        let samples: Vec<Sample> = (0..6).map(|i| sample(i, [0.3, 2.0, -1.0, 4.0])).collect();
        let out = iqr_filter(&samples).unwrap();
        assert!(out.dropped_ids.is_empty());
        assert_eq!(out.kept, samples);
    }

    #[test]
    fn fewer_than_four_samples_is_an_error() {
        let samples: Vec<Sample> = (0..3).map(|i| sample(i, [0.3, 2.0, -1.0, 4.0])).collect();
        assert!(iqr_filter(&samples).is_err());
    }
}
