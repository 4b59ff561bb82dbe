//! Dense-matrix reverse-mode autodiff and the layers, losses, optimizers
//! and schedules built on it.
//!
//! Everything is `f64` and single threaded; with a fixed seed, training is
//! bit-reproducible.

pub mod checkpoint;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tape;
pub mod train;

pub use checkpoint::Checkpoint;
pub use matrix::Matrix;
pub use network::{predict, BatchStats, Forward, LayerSpec, Mode, Model, Network, RunningStats};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{Gradients, ParamStore};
pub use schedule::{EarlyStopConfig, EarlyStopState, ScheduleConfig, ScheduleState};
pub use tape::{ColumnStats, CustomOp, Tape, Var};
pub use train::{fit, EpochRecord, FitOutcome, Objective, Part, TrainSpec};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite loss in epoch {epoch} (lr = {lr})")]
    NonFiniteLoss { epoch: usize, lr: f64 },
    #[error("usage error: {0}")]
    Usage(String),
}

/// Mean over all entries of squared differences.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / pred.len() as f64)
}

pub fn leaky_relu(x: &Matrix, slope: f64) -> Matrix {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn elu(x: &Matrix, alpha: f64) -> Matrix {
    x.map(|v| if v >= 0.0 { v } else { alpha * v.exp_m1() })
}

pub fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64], epsilon: f64) -> Result<Matrix, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Matrix::row_vector(gamma.to_vec()));
    let b = tape.constant(Matrix::row_vector(beta.to_vec()));
    let y = tape.layer_norm(xv, g, b, epsilon)?;
    Ok(tape.value(y).clone())
}

/// Batch normalization. Training mode normalizes with batch statistics and
/// folds them into `running` with the given momentum; eval mode uses
/// `running` as is.
pub fn batch_norm(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    running: &mut RunningStats,
    momentum: f64,
    epsilon: f64,
    mode: Mode,
) -> Result<Matrix, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Matrix::row_vector(gamma.to_vec()));
    let b = tape.constant(Matrix::row_vector(beta.to_vec()));
    match mode {
        Mode::Train => {
            let (y, stats) = tape.batch_norm_train(xv, g, b, epsilon)?;
            let n = stats.n as f64;
            for (r, m) in running.mean.iter_mut().zip(&stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in running.var.iter_mut().zip(&stats.var) {
                *r = (1.0 - momentum) * *r + momentum * v * n / (n - 1.0);
            }
            Ok(tape.value(y).clone())
        }
        Mode::Eval => {
            let y = tape.batch_norm_fixed(xv, g, b, &running.mean, &running.var, epsilon)?;
            Ok(tape.value(y).clone())
        }
    }
}

pub fn dropout(x: &Matrix, p: f64, rng: &mut ChaCha8Rng, mode: Mode) -> Matrix {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = network::dropout(&mut tape, xv, p, mode, rng);
    tape.value(y).clone()
}
