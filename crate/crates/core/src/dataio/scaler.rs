//! Per-feature min-max and z-score scaling.

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::nnet::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    MinMax,
    ZScore,
}

/// `a`/`b` are min/max for min-max and mean/std (population) for z-score.
/// `degenerate[j]` marks a constant (to relative 1e-12) training feature: min-max maps it to 0.5,
/// z-score uses std 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl ScalerParams {
    pub fn fit(data: &Matrix, kind: ScalerKind) -> Result<Self, DataError> {
        let (n, d) = data.shape();
        if n == 0 {
            return Err(DataError::Invalid("cannot fit a scaler on zero rows".into()));
        }
        let mut a = Vec::with_capacity(d);
        let mut b = Vec::with_capacity(d);
        let mut degenerate = Vec::with_capacity(d);
        for j in 0..d {
            let col = data.column(j);
            match kind {
                ScalerKind::MinMax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    a.push(lo);
                    b.push(hi);
                    // Spans at rounding level count as constant.
                    degenerate.push(!(hi - lo > 1e-12 * lo.abs().max(hi.abs()).max(1.0)));
                }
                ScalerKind::ZScore => {
                    let mean = col.iter().sum::<f64>() / n as f64;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let std = var.sqrt();
                    let flat = !(std > 1e-12 * mean.abs().max(1.0));
                    a.push(mean);
                    b.push(if flat { 1.0 } else { std });
                    degenerate.push(flat);
                }
            }
        }
        if degenerate.iter().any(|d| *d) {
            log::warn!(
                "{} constant feature(s) in scaler fit",
                degenerate.iter().filter(|d| **d).count()
            );
        }
        Ok(Self { kind, a, b, degenerate })
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    fn check(&self, data: &Matrix) -> Result<(), DataError> {
        if data.cols() != self.width() {
            return Err(DataError::Invalid(format!(
                "scaler fitted on {} features applied to {}",
                self.width(),
                data.cols()
            )));
        }
        Ok(())
    }

    pub fn apply_value(&self, j: usize, v: f64) -> f64 {
        match self.kind {
            ScalerKind::MinMax if self.degenerate[j] => 0.5,
            ScalerKind::MinMax => (v - self.a[j]) / (self.b[j] - self.a[j]),
            ScalerKind::ZScore => (v - self.a[j]) / self.b[j],
        }
    }

    pub fn invert_value(&self, j: usize, v: f64) -> f64 {
        match self.kind {
            ScalerKind::MinMax if self.degenerate[j] => self.a[j],
            ScalerKind::MinMax => self.a[j] + v * (self.b[j] - self.a[j]),
            ScalerKind::ZScore => self.a[j] + v * self.b[j],
        }
    }

    pub fn apply(&self, data: &Matrix) -> Result<Matrix, DataError> {
        self.check(data)?;
        let mut out = data.clone();
        let d = self.width();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.apply_value(k % d, *v);
        }
        Ok(out)
    }

    pub fn invert(&self, data: &Matrix) -> Result<Matrix, DataError> {
        self.check(data)?;
        let mut out = data.clone();
        let d = self.width();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.invert_value(k % d, *v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_maps_range_to_unit_interval() {
        let x = Matrix::from_vec(2, 1, vec![0.0, 10.0]).unwrap();
        let s = ScalerParams::fit(&x, ScalerKind::MinMax).unwrap();
        assert_eq!(s.apply(&x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn zscore_hand_example() {
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let s = ScalerParams::fit(&x, ScalerKind::ZScore).unwrap();
        let y = s.apply(&x).unwrap();
        let mean = y.data().iter().sum::<f64>() / 3.0;
        let var = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_features_are_flagged() {
        let x = Matrix::from_vec(3, 2, vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap();
        let mm = ScalerParams::fit(&x, ScalerKind::MinMax).unwrap();
        assert_eq!(mm.degenerate, vec![true, false]);
        assert_eq!(mm.apply(&x).unwrap().column(0), vec![0.5; 3]);
        assert_eq!(mm.invert(&mm.apply(&x).unwrap()).unwrap().column(0), vec![4.0; 3]);
        let z = ScalerParams::fit(&x, ScalerKind::ZScore).unwrap();
        assert_eq!(z.degenerate, vec![true, false]);
        assert_eq!(z.b[0], 1.0);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let x = Matrix::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let s = ScalerParams::fit(&x, ScalerKind::MinMax).unwrap();
        assert!(s.apply(&Matrix::zeros(1, 3)).is_err());
        assert!(ScalerParams::fit(&Matrix::zeros(0, 3), ScalerKind::ZScore).is_err());
    }
}
