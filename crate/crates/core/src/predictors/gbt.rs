//! Gradient-boosted regression trees, one ensemble per output.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cart::{Tree, TreeParams};
use super::PredictorError;
use crate::nnet::Matrix;
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub max_depth: Option<usize>,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub min_leaf: usize,
    /// Fraction of rows drawn without replacement per round.
    pub subsample: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: Some(4),
            learning_rate: 0.1,
            l2_lambda: 1.0,
            min_leaf: 1,
            subsample: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training mean squared error after each round.
    pub loss_history: Vec<f64>,
}

impl Booster {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| self.learning_rate * t.predict_row(row)[0]).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    pub boosters: Vec<Booster>,
    pub n_features: usize,
}

fn mse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

impl Gbt {
    pub fn fit(x: &Matrix, y: &Matrix, config: &GbtConfig, seed: u64) -> Result<Self, PredictorError> {
        if !(config.learning_rate > 0.0) || !(config.l2_lambda >= 0.0) || config.min_leaf == 0 {
            return Err(PredictorError::Config(
                "gbt: learning rate must be positive, lambda non-negative, min_leaf at least 1".into(),
            ));
        }
        if !(config.subsample > 0.0 && config.subsample <= 1.0) {
            return Err(PredictorError::Config(format!("gbt: subsample {} outside (0, 1]", config.subsample)));
        }
        let n = x.rows();
        if n == 0 || n != y.rows() {
            return Err(PredictorError::Shape(format!("gbt: {} input rows, {} target rows", n, y.rows())));
        }
        let params = TreeParams {
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
            features_per_split: None,
            lambda: config.l2_lambda,
        };
        let n_sub = ((config.subsample * n as f64).round() as usize).clamp(1, n);
        let mut boosters = Vec::with_capacity(y.cols());
        for o in 0..y.cols() {
            let target = y.column(o);
            let base = target.iter().sum::<f64>() / n as f64;
            let mut f = vec![base; n];
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "gbt-output", o as u64));
            let mut trees = Vec::with_capacity(config.n_rounds);
            let mut loss_history = Vec::with_capacity(config.n_rounds);
            for _ in 0..config.n_rounds {
                let residual: Vec<f64> = target.iter().zip(&f).map(|(t, p)| t - p).collect();
                let r = Matrix::from_vec(n, 1, residual)?;
                let rows: Vec<usize> = if n_sub == n {
                    (0..n).collect()
                } else {
                    let mut s = sample(&mut rng, n, n_sub).into_vec();
                    s.sort_unstable();
                    s
                };
                let tree = Tree::fit(x, &r, &rows, &params, &mut rng);
                for (i, fi) in f.iter_mut().enumerate() {
                    *fi += config.learning_rate * tree.predict_row(x.row(i))[0];
                }
                loss_history.push(mse(&target, &f));
                trees.push(tree);
            }
            boosters.push(Booster {
                base,
                learning_rate: config.learning_rate,
                trees,
                loss_history,
            });
        }
        Ok(Self {
            boosters,
            n_features: x.cols(),
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix, PredictorError> {
        if x.cols() != self.n_features {
            return Err(PredictorError::Shape(format!(
                "gbt: {} input columns, fitted on {}",
                x.cols(),
                self.n_features
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.boosters.len());
        for r in 0..x.rows() {
            for (o, b) in self.boosters.iter().enumerate() {
                out.set(r, o, b.predict_row(x.row(r)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn data(seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(60, 2, (0..120).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = Matrix::from_vec(60, 2, (0..60).flat_map(|i| [(x.get(i, 0) * 6.0).sin(), x.get(i, 1)]).collect()).unwrap();
        (x, y)
    }

    #[test]
    fn training_loss_never_increases() {
        for seed in 0..3 {
            let (x, y) = data(seed);
            let g = Gbt::fit(&x, &y, &GbtConfig { n_rounds: 40, ..GbtConfig::default() }, seed).unwrap();
            for b in &g.boosters {
                assert!(b.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            }
        }
    }

    #[test]
    fn one_unregularized_deep_round_interpolates() {
        let (x, y) = data(9);
        let cfg = GbtConfig {
            n_rounds: 1,
            max_depth: None,
            learning_rate: 1.0,
            l2_lambda: 0.0,
            ..GbtConfig::default()
        };
        let g = Gbt::fit(&x, &y, &cfg, 0).unwrap();
        let p = g.predict(&x).unwrap();
        for (a, b) in p.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let (x, y) = data(0);
        assert!(Gbt::fit(&x, &y, &GbtConfig { learning_rate: 0.0, ..GbtConfig::default() }, 0).is_err());
        assert!(Gbt::fit(&x, &y, &GbtConfig { subsample: 1.5, ..GbtConfig::default() }, 0).is_err());
    }
}
