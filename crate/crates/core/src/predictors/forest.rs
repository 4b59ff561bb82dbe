//! Bagged multi-output regression trees.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cart::{Tree, TreeParams};
use super::PredictorError;
use crate::nnet::Matrix;
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: Some(16),
            min_leaf: 2,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl Forest {
    /// Tree `t` draws from its own generator seeded by `(seed, t)`, so the
    /// result does not depend on how many threads build the trees.
    pub fn fit(x: &Matrix, y: &Matrix, config: &ForestConfig, seed: u64) -> Result<Self, PredictorError> {
        if config.n_trees == 0 || config.min_leaf == 0 {
            return Err(PredictorError::Config("forest: n_trees and min_leaf must be at least 1".into()));
        }
        if x.rows() == 0 || x.rows() != y.rows() {
            return Err(PredictorError::Shape(format!("forest: {} input rows, {} target rows", x.rows(), y.rows())));
        }
        let d = x.cols();
        let params = TreeParams {
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
            features_per_split: Some(config.features_per_split.unwrap_or((d as f64).sqrt().ceil() as usize)),
            lambda: 0.0,
        };
        let n = x.rows();
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "tree", t as u64));
                let rows: Vec<usize> = if config.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                Tree::fit(x, y, &rows, &params, &mut rng)
            })
            .collect();
        Ok(Self { trees, n_features: d })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix, PredictorError> {
        if x.cols() != self.n_features {
            return Err(PredictorError::Shape(format!(
                "forest: {} input columns, fitted on {}",
                x.cols(),
                self.n_features
            )));
        }
        let o = self.trees[0].n_outputs;
        let mut out = Matrix::zeros(x.rows(), o);
        for r in 0..x.rows() {
            let row = x.row(r);
            let mut acc = vec![0.0; o];
            for tree in &self.trees {
                for (a, v) in acc.iter_mut().zip(tree.predict_row(row)) {
                    *a += v;
                }
            }
            for (d, a) in out.row_mut(r).iter_mut().zip(acc) {
                *d = a / self.trees.len() as f64;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_vec(80, 3, (0..240).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = Matrix::from_vec(80, 2, (0..80).flat_map(|i| [x.get(i, 0) * 2.0, x.get(i, 1) - x.get(i, 2)]).collect()).unwrap();
        (x, y)
    }

    #[test]
    fn thread_count_does_not_change_the_forest() {
        let (x, y) = data();
        let cfg = ForestConfig {
            n_trees: 12,
            ..ForestConfig::default()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| Forest::fit(&x, &y, &cfg, 7).unwrap());
        let b = four.install(|| Forest::fit(&x, &y, &cfg, 7).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn forest_fits_a_smooth_signal() {
        let (x, y) = data();
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 30, ..ForestConfig::default() }, 1).unwrap();
        let p = f.predict(&x).unwrap();
        let mse = crate::nnet::mse_loss(&p, &y).unwrap();
        assert!(mse < 0.01, "{mse}");
    }
}
