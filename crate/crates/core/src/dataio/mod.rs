//! Dataset model, CSV ingestion, outlier filtering, masking, imputation,
//! scaling, splitting, and the synthetic forward surrogate.

pub mod csvio;
pub mod filter;
pub mod impute;
pub mod mask;
pub mod scaler;
pub mod split;
pub mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnet::Matrix;

pub use csvio::{load_dataset, write_dataset};
pub use filter::{iqr_filter, quantile, IqrOutcome};
pub use impute::ImputeStats;
pub use mask::{mask_curve, MaskedCurve};
pub use scaler::{ScalerKind, ScalerParams};
pub use split::{carve, split, SplitIndices};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Number of Minkowski functionals (M0 porosity, M1 surface area, M2 mean
/// curvature, M3 Euler characteristic).
pub const N_MINKOWSKI: usize = 4;
/// Width of the optional auxiliary feature block.
pub const N_AUX: usize = 35;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}, line {line}, column `{column}`: {message}")]
    Parse {
        file: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{file}: {message}")]
    Schema { file: String, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Strictly increasing strain axis shared by every curve in a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrainGrid {
    points: Vec<f64>,
}

impl StrainGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, DataError> {
        if points.len() < 2 {
            return Err(DataError::Invalid("a strain grid needs at least 2 points".into()));
        }
        if !points.iter().all(|p| p.is_finite()) || points[0] < 0.0 {
            return Err(DataError::Invalid("strain grid points must be finite and non-negative".into()));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DataError::Invalid(format!(
                "strain grid not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { points })
    }

    /// `n` points evenly spaced on `[lo, hi]`, endpoints included.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self, DataError> {
        if n < 2 {
            return Err(DataError::Invalid("a strain grid needs at least 2 points".into()));
        }
        let step = (hi - lo) / (n - 1) as f64;
        Self::new((0..n).map(|i| lo + step * i as f64).collect())
    }

    /// 100 points on `[0, 0.2]`.
    pub fn canonical() -> Self {
        Self::uniform(100, 0.0, 0.2).expect("canonical grid is valid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Piecewise-linear resampling of `values` (given on `self`) onto
    /// `target`. Every target point must lie inside this grid's range.
    pub fn resample(&self, values: &[f64], target: &StrainGrid) -> Result<Vec<f64>, DataError> {
        if values.len() != self.len() {
            return Err(DataError::Invalid(format!(
                "{} values for a {}-point grid",
                values.len(),
                self.len()
            )));
        }
        let (lo, hi) = (self.points[0], self.points[self.len() - 1]);
        let tol = 1e-12 * hi.abs().max(1.0);
        let mut out = Vec::with_capacity(target.len());
        let mut seg = 0;
        for &x in target.points() {
            if x < lo - tol || x > hi + tol {
                return Err(DataError::Invalid(format!(
                    "strain {x} lies outside the source grid [{lo}, {hi}]; extrapolation is not allowed"
                )));
            }
            let x = x.clamp(lo, hi);
            while seg + 2 < self.len() && self.points[seg + 1] < x {
                seg += 1;
            }
            let (x0, x1) = (self.points[seg], self.points[seg + 1]);
            let t = (x - x0) / (x1 - x0);
            out.push(if t == 0.0 {
                values[seg]
            } else if t == 1.0 {
                values[seg + 1]
            } else {
                values[seg] + t * (values[seg + 1] - values[seg])
            });
        }
        Ok(out)
    }
}

/// One microstructure with its mechanical response on the dataset grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub minkowski: [f64; N_MINKOWSKI],
    pub aux: Option<Vec<f64>>,
    pub stress: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: StrainGrid,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Checks curve widths, finiteness, aux block width and id uniqueness.
    pub fn new(grid: StrainGrid, samples: Vec<Sample>) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate sample id `{}`", s.id)));
            }
            if s.stress.len() != grid.len() {
                return Err(DataError::Invalid(format!(
                    "sample `{}` has {} stress values for a {}-point grid",
                    s.id,
                    s.stress.len(),
                    grid.len()
                )));
            }
            if !s.stress.iter().chain(&s.minkowski).all(|v| v.is_finite()) {
                return Err(DataError::Invalid(format!("sample `{}` has non-finite values", s.id)));
            }
            if let Some(aux) = &s.aux {
                if aux.len() != N_AUX || !aux.iter().all(|v| v.is_finite()) {
                    return Err(DataError::Invalid(format!(
                        "sample `{}` needs {N_AUX} finite auxiliary features",
                        s.id
                    )));
                }
            }
        }
        Ok(Self { grid, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            grid: self.grid.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// n x 4 targets.
    pub fn minkowski_matrix(&self) -> Matrix {
        let data = self.samples.iter().flat_map(|s| s.minkowski).collect();
        Matrix::from_vec(self.len(), N_MINKOWSKI, data).expect("consistent widths")
    }

    /// n x P curves.
    pub fn curve_matrix(&self) -> Matrix {
        let data = self.samples.iter().flat_map(|s| s.stress.iter().copied()).collect();
        Matrix::from_vec(self.len(), self.grid.len(), data).expect("consistent widths")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_grid_shape() {
        let g = StrainGrid::canonical();
        assert_eq!(g.len(), 100);
        assert_eq!(g.points()[0], 0.0);
        assert!((g.points()[99] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(StrainGrid::new(vec![0.0]).is_err());
        assert!(StrainGrid::new(vec![0.0, 0.1, 0.1]).is_err());
        assert!(StrainGrid::new(vec![-0.1, 0.1]).is_err());
    }

    #[test]
    fn resampling_matches_hand_interpolation() {
        let coarse = StrainGrid::new(vec![0.0, 0.1, 0.2]).unwrap();
        let fine = StrainGrid::new(vec![0.0, 0.05, 0.15, 0.2]).unwrap();
        let v = coarse.resample(&[0.0, 2.0, 3.0], &fine).unwrap();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[2] - 2.5).abs() < 1e-12);
        assert_eq!(v[3], 3.0);
    }

    #[test]
    fn resampling_refuses_to_extrapolate() {
        let coarse = StrainGrid::new(vec![0.0, 0.1]).unwrap();
        let err = coarse.resample(&[0.0, 1.0], &StrainGrid::canonical());
        assert!(matches!(err, Err(DataError::Invalid(_))));
    }

    #[test]
    fn dataset_rejects_duplicates_and_width_mismatch() {
        let g = StrainGrid::uniform(3, 0.0, 0.2).unwrap();
        let s = |id: &str, n| Sample {
            id: id.into(),
            minkowski: [0.1, 1.0, 0.0, 0.0],
            aux: None,
            stress: vec![0.0; n],
        };
        assert!(Dataset::new(g.clone(), vec![s("a", 3), s("a", 3)]).is_err());
        assert!(Dataset::new(g.clone(), vec![s("a", 2)]).is_err());
        assert!(Dataset::new(g, vec![s("a", 3), s("b", 3)]).is_ok());
    }
}
