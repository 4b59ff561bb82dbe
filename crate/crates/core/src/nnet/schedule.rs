//! Learning-rate schedules and early stopping.

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// Multiply by `factor` at every positive multiple of `interval_epochs`.
    StepDecay { factor: f64, interval_epochs: usize },
    /// Multiply by `factor` after `patience` epochs without an improvement
    /// larger than `min_delta`.
    Plateau {
        factor: f64,
        patience: usize,
        min_delta: f64,
    },
}

impl ScheduleConfig {
    pub fn plateau_default() -> Self {
        Self::Plateau {
            factor: 0.5,
            patience: 10,
            min_delta: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let (factor, count) = match *self {
            Self::StepDecay {
                factor,
                interval_epochs,
            } => (factor, interval_epochs),
            Self::Plateau {
                factor,
                patience,
                min_delta,
            } => {
                if min_delta < 0.0 {
                    return Err(NnError::Config("plateau min_delta must be non-negative".into()));
                }
                (factor, patience)
            }
        };
        if !(factor > 0.0 && factor < 1.0) {
            return Err(NnError::Config(format!("schedule factor {factor} outside (0, 1)")));
        }
        if count == 0 {
            return Err(NnError::Config("schedule interval/patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub config: ScheduleConfig,
    pub best_metric: f64,
    pub epochs_since_improve: usize,
}

impl ScheduleState {
    pub fn new(config: ScheduleConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self {
            config,
            best_metric: f64::INFINITY,
            epochs_since_improve: 0,
        })
    }

    /// Learning rate to use from `epoch` on. Step decay reacts to the epoch
    /// index (called at the start of each epoch); plateau reacts to
    /// `val_metric` (called after each epoch's validation).
    pub fn step(&mut self, epoch: usize, val_metric: f64, lr: f64) -> f64 {
        match self.config {
            ScheduleConfig::StepDecay {
                factor,
                interval_epochs,
            } => {
                if epoch > 0 && epoch.is_multiple_of(interval_epochs) {
                    lr * factor
                } else {
                    lr
                }
            }
            ScheduleConfig::Plateau {
                factor,
                patience,
                min_delta,
            } => {
                if val_metric < self.best_metric - min_delta {
                    self.best_metric = val_metric;
                    self.epochs_since_improve = 0;
                    lr
                } else {
                    self.epochs_since_improve += 1;
                    if self.epochs_since_improve >= patience {
                        self.epochs_since_improve = 0;
                        lr * factor
                    } else {
                        lr
                    }
                }
            }
        }
    }

    pub fn is_plateau(&self) -> bool {
        matches!(self.config, ScheduleConfig::Plateau { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: usize,
    #[serde(default)]
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 20,
            min_delta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub patience: usize,
    pub min_delta: f64,
    pub best_val_loss: f64,
    pub epochs_since_improve: usize,
    pub should_stop: bool,
}

impl EarlyStopState {
    pub fn new(config: &EarlyStopConfig) -> Result<Self, NnError> {
        if config.patience == 0 || config.min_delta < 0.0 {
            return Err(NnError::Config(
                "early stopping needs patience >= 1 and min_delta >= 0".into(),
            ));
        }
        Ok(Self {
            patience: config.patience,
            min_delta: config.min_delta,
            best_val_loss: f64::INFINITY,
            epochs_since_improve: 0,
            should_stop: false,
        })
    }

    /// Returns true when `val_loss` is a new best.
    pub fn update(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best_val_loss - self.min_delta {
            self.best_val_loss = val_loss;
            self.epochs_since_improve = 0;
            true
        } else {
            self.epochs_since_improve += 1;
            if self.epochs_since_improve >= self.patience {
                self.should_stop = true;
            }
            false
        }
    }
}
