//! Mini-batch training loop shared by every network in the crate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::network::{Mode, Model};
use super::optim::{Optimizer, OptimizerConfig};
use super::schedule::{EarlyStopConfig, EarlyStopState, ScheduleConfig, ScheduleState};
use super::tape::{Tape, Var};
use super::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: Option<ScheduleConfig>,
    pub early_stop: Option<EarlyStopConfig>,
    pub seed: u64,
    /// Restore the parameters with the lowest validation loss at the end.
    pub restore_best: bool,
}

/// Which partition a batch of rows comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
}

/// Builds a scalar loss node from the prediction, the target rows and the
/// row indices (into the partition's matrices) that make up the batch.
pub type Objective<'a> = dyn Fn(&mut Tape, Var, &Matrix, Part, &[usize]) -> Result<Var, NnError> + 'a;

pub fn mse_objective(tape: &mut Tape, pred: Var, target: &Matrix, _: Part, _: &[usize]) -> Result<Var, NnError> {
    tape.mse(pred, target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
    pub optimizer: Optimizer,
    pub schedule: Option<ScheduleState>,
}

/// Splits a permutation into batches, folding a trailing single row into the
/// previous batch (batch normalization cannot train on one row).
pub fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

/// Eval-mode loss over a whole partition, averaged by rows.
pub fn evaluate_loss<M: Model>(
    model: &M,
    x: &Matrix,
    y: &Matrix,
    part: Part,
    objective: &Objective,
) -> Result<f64, NnError> {
    const CHUNK: usize = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..x.rows()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(CHUNK) {
        let mut tape = Tape::new();
        let input = tape.constant(x.select_rows(chunk));
        let fwd = model.forward_tape(&mut tape, input, Mode::Eval, &mut rng)?;
        let loss = objective(&mut tape, fwd.output, &y.select_rows(chunk), part, chunk)?;
        total += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / x.rows().max(1) as f64)
}

/// Runs `spec.epochs` epochs (fewer if early stopping fires).
pub fn fit<M: Model + Clone>(
    model: &mut M,
    train: (&Matrix, &Matrix),
    val: Option<(&Matrix, &Matrix)>,
    spec: &TrainSpec,
    objective: &Objective,
) -> Result<FitOutcome, NnError> {
    let (tx, ty) = train;
    if tx.rows() != ty.rows() || tx.rows() == 0 {
        return Err(NnError::Config(format!(
            "training inputs ({}) and targets ({}) must have the same non-zero row count",
            tx.rows(),
            ty.rows()
        )));
    }
    if spec.batch_size == 0 {
        return Err(NnError::Config("batch size must be at least 1".into()));
    }
    let mut optimizer = Optimizer::new(spec.optimizer.clone(), model.params())?;
    let mut schedule = spec.schedule.clone().map(ScheduleState::new).transpose()?;
    let mut early = spec.early_stop.as_ref().map(EarlyStopState::new).transpose()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let mut order: Vec<usize> = (0..tx.rows()).collect();

    let mut history = Vec::with_capacity(spec.epochs);
    let mut best: Option<(f64, usize, M)> = None;
    let mut stopped_early = false;

    for epoch in 0..spec.epochs {
        if let Some(s) = schedule.as_mut().filter(|s| !s.is_plateau()) {
            let lr = s.step(epoch, 0.0, optimizer.lr());
            optimizer.set_lr(lr);
        }
        let lr = optimizer.lr();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in batches(&order, spec.batch_size) {
            let mut tape = Tape::new();
            let input = tape.constant(tx.select_rows(batch));
            let fwd = model.forward_tape(&mut tape, input, Mode::Train, &mut dropout_rng)?;
            let loss = objective(&mut tape, fwd.output, &ty.select_rows(batch), Part::Train, batch)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, lr });
            }
            let grads = tape.backward(loss, model.params())?;
            optimizer.step(model.params_mut(), &grads)?;
            model.apply_batch_stats(&fwd.batch_stats);
            epoch_loss += lv * batch.len() as f64;
        }
        let train_loss = epoch_loss / tx.rows() as f64;

        let val_loss = match val {
            Some((vx, vy)) if vx.rows() > 0 => {
                let v = evaluate_loss(model, vx, vy, Part::Val, objective)?;
                if !v.is_finite() {
                    return Err(NnError::NonFiniteLoss { epoch, lr });
                }
                Some(v)
            }
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            }
        }
        if let Some(s) = schedule.as_mut().filter(|s| s.is_plateau()) {
            let lr = s.step(epoch, val_loss.unwrap_or(train_loss), optimizer.lr());
            optimizer.set_lr(lr);
        }
        if let Some(e) = early.as_mut() {
            e.update(val_loss.unwrap_or(train_loss));
            if e.should_stop {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_val_loss, best_epoch) = match best {
        Some((v, e, snapshot)) => {
            if spec.restore_best {
                *model = snapshot;
            }
            (Some(v), Some(e))
        }
        None => (None, None),
    };
    Ok(FitOutcome {
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
        optimizer,
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        let order: Vec<usize> = (0..10).collect();
        assert_eq!(batches(&order, 4).len(), 3);
        assert_eq!(batches(&order[..1], 4).len(), 1);
    }
}
