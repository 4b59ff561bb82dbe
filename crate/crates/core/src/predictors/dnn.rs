//! Residual multilayer perceptron with optional law-consistency pretraining.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PredictorError;
use crate::nnet::train::mse_objective;
use crate::nnet::{
    self, EarlyStopConfig, EpochRecord, LayerSpec, Matrix, Network, OptimizerConfig, Part, ScheduleConfig, Tape, TrainSpec,
    Var,
};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnnConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_delta: f64,
    pub pretrain_epochs: usize,
    pub consistency_weight: f64,
    /// Fraction of the training partition held out for validation.
    pub val_fraction: f64,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            epochs: 500,
            batch_size: 32,
            early_stop_patience: 20,
            plateau_factor: 0.5,
            plateau_patience: 10,
            min_delta: 1e-6,
            pretrain_epochs: 50,
            consistency_weight: 0.1,
            val_fraction: 0.1,
        }
    }
}

/// The fixed stage-2 architecture: two 512-wide blocks (the second with a
/// projected residual), a 256-wide ELU block, a 128-wide block and a linear
/// output.
pub fn dnn_layers(output_width: usize) -> Vec<LayerSpec> {
    let leaky = LayerSpec::LeakyRelu { slope: 0.01 };
    vec![
        LayerSpec::linear(512),
        LayerSpec::batch_norm(),
        LayerSpec::Dropout { p: 0.2 },
        leaky.clone(),
        LayerSpec::ResidualBegin,
        LayerSpec::linear(512),
        LayerSpec::batch_norm(),
        LayerSpec::Dropout { p: 0.2 },
        leaky.clone(),
        LayerSpec::ResidualBranch,
        LayerSpec::linear(512),
        LayerSpec::batch_norm(),
        LayerSpec::ResidualEnd,
        LayerSpec::linear(256),
        LayerSpec::batch_norm(),
        LayerSpec::Dropout { p: 0.25 },
        LayerSpec::Elu { alpha: 1.0 },
        LayerSpec::linear(128),
        LayerSpec::batch_norm(),
        leaky,
        LayerSpec::linear(output_width),
    ]
}

pub fn build_dnn(input_width: usize, output_width: usize, seed: u64) -> Result<Network, PredictorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Network::new(input_width, dnn_layers(output_width), &mut rng)?)
}

/// Law residual in standardized target space: row `i` of the training
/// partition contributes `(z_i . weights + offsets[i])^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Consistency {
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DnnHistory {
    pub pretrain: Vec<EpochRecord>,
    pub train: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl DnnConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(PredictorError::Config("dnn: learning rate, batch size and epochs must be positive".into()));
        }
        if !(self.consistency_weight >= 0.0) {
            return Err(PredictorError::Config("dnn: consistency weight must be non-negative".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(PredictorError::Config("dnn: val_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::adamw(self.learning_rate, self.weight_decay)
    }
}

/// Runs `pretrain_epochs` epochs on `mse + lambda * consistency` without
/// validation or scheduling.
pub fn pretrain(
    net: &mut Network,
    train: (&Matrix, &Matrix),
    consistency: &Consistency,
    config: &DnnConfig,
    seed: u64,
) -> Result<Vec<EpochRecord>, PredictorError> {
    if config.pretrain_epochs == 0 {
        return Ok(Vec::new());
    }
    if consistency.offsets.len() != train.0.rows() {
        return Err(PredictorError::Shape(format!(
            "pretraining: {} consistency offsets for {} rows",
            consistency.offsets.len(),
            train.0.rows()
        )));
    }
    let lambda = config.consistency_weight;
    let objective = |tape: &mut Tape, pred: Var, target: &Matrix, _: Part, rows: &[usize]| {
        let mse = tape.mse(pred, target)?;
        if lambda == 0.0 {
            return Ok(mse);
        }
        let offsets: Vec<f64> = rows.iter().map(|&r| consistency.offsets[r]).collect();
        let c = tape.linear_consistency(pred, &consistency.weights, &offsets)?;
        let c = tape.scale(c, lambda);
        tape.add(mse, c)
    };
    let spec = TrainSpec {
        epochs: config.pretrain_epochs,
        batch_size: config.batch_size,
        optimizer: config.optimizer(),
        schedule: None,
        early_stop: None,
        seed: seeds::derive(seed, "dnn-pretrain", 0),
        restore_best: false,
    };
    Ok(nnet::fit(net, train, None, &spec, &objective)?.history)
}

/// Supervised MSE training with plateau decay, early stopping and
/// restoration of the best validation epoch.
pub fn train_main(
    net: &mut Network,
    train: (&Matrix, &Matrix),
    val: (&Matrix, &Matrix),
    config: &DnnConfig,
    seed: u64,
) -> Result<(Vec<EpochRecord>, Option<usize>), PredictorError> {
    let spec = TrainSpec {
        epochs: config.epochs,
        batch_size: config.batch_size,
        optimizer: config.optimizer(),
        schedule: Some(ScheduleConfig::Plateau {
            factor: config.plateau_factor,
            patience: config.plateau_patience,
            min_delta: config.min_delta,
        }),
        early_stop: Some(EarlyStopConfig {
            patience: config.early_stop_patience,
            min_delta: config.min_delta,
        }),
        seed: seeds::derive(seed, "dnn-train", 0),
        restore_best: true,
    };
    let out = nnet::fit(net, train, Some(val), &spec, &mse_objective)?;
    Ok((out.history, out.best_epoch))
}
