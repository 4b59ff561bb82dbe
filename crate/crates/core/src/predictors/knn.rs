//! k-nearest-neighbour regression in standardized feature space.

use serde::{Deserialize, Serialize};

use super::PredictorError;
use crate::nnet::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Stores the training rows; prediction is the mean target of the `k`
/// nearest rows by Euclidean distance, equal distances preferring the
/// lower training index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub x: Matrix,
    pub y: Matrix,
}

impl Knn {
    pub fn fit(x: &Matrix, y: &Matrix, config: &KnnConfig) -> Result<Self, PredictorError> {
        if config.k == 0 {
            return Err(PredictorError::Config("knn: k must be at least 1".into()));
        }
        if x.rows() < config.k {
            return Err(PredictorError::Config(format!(
                "knn: k = {} exceeds the {} training rows",
                config.k,
                x.rows()
            )));
        }
        Ok(Self {
            k: config.k,
            x: x.clone(),
            y: y.clone(),
        })
    }

    pub fn neighbours(&self, row: &[f64]) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = (0..self.x.rows())
            .map(|i| {
                let d2: f64 = self.x.row(i).iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_by(cmp);
        dist.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix, PredictorError> {
        if x.cols() != self.x.cols() {
            return Err(PredictorError::Shape(format!(
                "knn: {} input columns, fitted on {}",
                x.cols(),
                self.x.cols()
            )));
        }
        let o = self.y.cols();
        let mut out = Matrix::zeros(x.rows(), o);
        for r in 0..x.rows() {
            let nb = self.neighbours(x.row(r));
            let dst = out.row_mut(r);
            for &i in &nb {
                for (d, v) in dst.iter_mut().zip(self.y.row(i)) {
                    *d += v;
                }
            }
            dst.iter_mut().for_each(|d| *d /= nb.len() as f64);
        }
        Ok(out)
    }
}
