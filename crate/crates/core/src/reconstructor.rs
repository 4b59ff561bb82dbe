//! Stage 1: a fully connected network that maps masked, mean-imputed curves
//! to full curves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    mask::check_fraction_range, mask_curve, split, DataError, Dataset, ImputeStats, MaskedCurve, Sample,
    ScalerKind, ScalerParams, SplitIndices, StrainGrid,
};
use crate::eval::metrics::{r2, MetricError};
use crate::nnet::{
    self, checkpoint::Checkpoint, train::mse_objective, EpochRecord, LayerSpec, Matrix, Model, Network, NnError,
    OptimizerConfig, ScheduleConfig, TrainSpec,
};
use crate::seeds;

pub const MIN_SAMPLES: usize = 30;
pub const FORMAT: &str = "llh-reconstructor";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid reconstructor input: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructorConfig {
    pub hidden_widths: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout_p: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub step_factor: f64,
    pub step_interval: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub split: (f64, f64, f64),
    pub mask_range: (f64, f64),
    pub seed: u64,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![1024, 512, 256, 128],
            leaky_slope: 0.01,
            dropout_p: 0.2,
            lr: 3e-4,
            weight_decay: 1e-4,
            step_factor: 0.5,
            step_interval: 50,
            epochs: 500,
            batch_size: 32,
            split: (0.8, 0.1, 0.1),
            mask_range: (0.2, 0.5),
            seed: 0,
        }
    }
}

impl ReconstructorConfig {
    pub fn validate(&self) -> Result<(), ReconstructError> {
        let bad = |m: &str| Err(ReconstructError::Invalid(m.into()));
        if self.hidden_widths.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if self.split.1 <= 0.0 {
            return bad("the reconstructor needs a validation fraction > 0");
        }
        check_fraction_range(self.mask_range)?;
        self.optimizer().validate()?;
        self.schedule().validate()?;
        Ok(())
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::adam(self.lr, self.weight_decay)
    }

    fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig::StepDecay {
            factor: self.step_factor,
            interval_epochs: self.step_interval,
        }
    }

    pub fn layers(&self, output_width: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(4 * self.hidden_widths.len() + 1);
        for &w in &self.hidden_widths {
            layers.push(LayerSpec::linear(w));
            layers.push(LayerSpec::layer_norm());
            layers.push(LayerSpec::LeakyRelu {
                slope: self.leaky_slope,
            });
            layers.push(LayerSpec::Dropout { p: self.dropout_p });
        }
        layers.push(LayerSpec::linear(output_width));
        layers
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructorModel {
    pub network: Network,
    pub input_scaler: ScalerParams,
    pub target_scaler: ScalerParams,
    pub impute: ImputeStats,
    pub grid: StrainGrid,
    pub config: ReconstructorConfig,
}

#[derive(Clone, Debug)]
pub struct TrainedReconstructor {
    pub model: ReconstructorModel,
    pub history: Vec<EpochRecord>,
    pub split: SplitIndices,
    pub best_epoch: Option<usize>,
}

/// Masks every curve of `samples` with a generator seeded by `seed`.
pub fn mask_all(samples: &[Sample], range: (f64, f64), seed: u64) -> Result<Vec<MaskedCurve>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.iter().map(|s| mask_curve(&s.stress, range, &mut rng)).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> Matrix {
    Matrix::from_vec(rows.len(), width, rows.concat()).expect("uniform rows")
}

/// Splits, masks, imputes and scales `dataset`, then trains with Adam and
/// step decay, returning the parameters with the lowest validation loss.
pub fn train_reconstructor(dataset: &Dataset, config: &ReconstructorConfig) -> Result<TrainedReconstructor, ReconstructError> {
    config.validate()?;
    if dataset.len() < MIN_SAMPLES {
        return Err(ReconstructError::Invalid(format!(
            "reconstructor training needs at least {MIN_SAMPLES} samples, got {}",
            dataset.len()
        )));
    }
    let p = dataset.grid.len();
    let seed = config.seed;
    let parts = split(dataset.len(), config.split, seeds::derive(seed, "recon-split", 0))?;
    let masked = mask_all(&dataset.samples, config.mask_range, seeds::derive(seed, "recon-mask", 0))?;

    let train_masked: Vec<MaskedCurve> = parts.train.iter().map(|&i| masked[i].clone()).collect();
    let impute = ImputeStats::fit(&train_masked)?;
    let imputed: Vec<Vec<f64>> = masked.iter().map(|m| impute.apply(m)).collect::<Result<_, _>>()?;
    let inputs = rows_to_matrix(&imputed, p);
    let targets = dataset.curve_matrix();

    let input_scaler = ScalerParams::fit(&inputs.select_rows(&parts.train), ScalerKind::MinMax)?;
    let target_scaler = ScalerParams::fit(&targets.select_rows(&parts.train), ScalerKind::MinMax)?;
    let x = input_scaler.apply(&inputs)?;
    let y = target_scaler.apply(&targets)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "recon-init", 0));
    let mut network = Network::new(p, config.layers(p), &mut init_rng)?;
    let spec = TrainSpec {
        epochs: config.epochs,
        batch_size: config.batch_size,
        optimizer: config.optimizer(),
        schedule: Some(config.schedule()),
        early_stop: None,
        seed: seeds::derive(seed, "recon-train", 0),
        restore_best: true,
    };
    let (tx, ty) = (x.select_rows(&parts.train), y.select_rows(&parts.train));
    let (vx, vy) = (x.select_rows(&parts.val), y.select_rows(&parts.val));
    let outcome = nnet::fit(&mut network, (&tx, &ty), Some((&vx, &vy)), &spec, &mse_objective)?;
    log::info!(
        "reconstructor: best val mse {:?} at epoch {:?}",
        outcome.best_val_loss,
        outcome.best_epoch
    );
    Ok(TrainedReconstructor {
        model: ReconstructorModel {
            network,
            input_scaler,
            target_scaler,
            impute,
            grid: dataset.grid.clone(),
            config: config.clone(),
        },
        history: outcome.history,
        split: parts,
        best_epoch: outcome.best_epoch,
    })
}

impl ReconstructorModel {
    pub fn width(&self) -> usize {
        self.grid.len()
    }

    /// Full curves for a batch of masked curves. With `copy_through`,
    /// observed positions are copied from the input instead of taken from
    /// the network.
    pub fn reconstruct_batch(&self, masked: &[MaskedCurve], copy_through: bool) -> Result<Vec<Vec<f64>>, ReconstructError> {
        let p = self.width();
        if let Some(m) = masked.iter().find(|m| m.len() != p) {
            return Err(ReconstructError::Invalid(format!(
                "curve has {} points, the model's grid has {p}",
                m.len()
            )));
        }
        if masked.is_empty() {
            return Ok(Vec::new());
        }
        let imputed: Vec<Vec<f64>> = masked.iter().map(|m| self.impute.apply(m)).collect::<Result<_, _>>()?;
        let x = self.input_scaler.apply(&rows_to_matrix(&imputed, p))?;
        let y = nnet::predict(&self.network, &x)?;
        let out = self.target_scaler.invert(&y)?;
        Ok(masked
            .iter()
            .enumerate()
            .map(|(r, m)| {
                out.row(r)
                    .iter()
                    .zip(m.values.iter().zip(&m.mask))
                    .map(|(net, (obs, seen))| if copy_through && *seen { *obs } else { *net })
                    .collect()
            })
            .collect())
    }

    pub fn reconstruct(&self, masked: &MaskedCurve) -> Result<Vec<f64>, ReconstructError> {
        Ok(self.reconstruct_batch(std::slice::from_ref(masked), true)?.remove(0))
    }

    /// Pooled R² over every point of every curve of `test`, masked with a
    /// generator seeded by `mask_seed`.
    pub fn evaluate(&self, test: &[Sample], mask_seed: u64) -> Result<f64, ReconstructError> {
        if test.is_empty() {
            return Err(ReconstructError::Invalid("empty test set".into()));
        }
        let masked = mask_all(test, self.config.mask_range, mask_seed)?;
        let recon = self.reconstruct_batch(&masked, true)?;
        let actual: Vec<f64> = test.iter().flat_map(|s| s.stress.iter().copied()).collect();
        Ok(r2(&actual, &recon.concat())?)
    }

    pub fn to_checkpoint(&self) -> ReconstructorCheckpoint {
        ReconstructorCheckpoint {
            format: FORMAT.into(),
            version: VERSION,
            network: Checkpoint::new(&self.network, None, None, self.config.seed),
            input_scaler: self.input_scaler.clone(),
            target_scaler: self.target_scaler.clone(),
            impute: self.impute.clone(),
            grid: self.grid.clone(),
            config: self.config.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String, ReconstructError> {
        serde_json::to_string(&self.to_checkpoint()).map_err(|e| ReconstructError::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ReconstructError> {
        let ck: ReconstructorCheckpoint =
            serde_json::from_str(text).map_err(|e| ReconstructError::Invalid(format!("checkpoint: {e}")))?;
        ck.into_model()
    }
}

/// JSON envelope: the network checkpoint plus preprocessing state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructorCheckpoint {
    pub format: String,
    pub version: u32,
    pub network: Checkpoint,
    pub input_scaler: ScalerParams,
    pub target_scaler: ScalerParams,
    pub impute: ImputeStats,
    pub grid: StrainGrid,
    pub config: ReconstructorConfig,
}

impl ReconstructorCheckpoint {
    pub fn into_model(self) -> Result<ReconstructorModel, ReconstructError> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(ReconstructError::Invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let network = self.network.to_network()?;
        let p = self.grid.len();
        if [
            network.input_width(),
            network.output_width(),
            self.input_scaler.width(),
            self.target_scaler.width(),
            self.impute.means.len(),
        ]
        .iter()
        .any(|w| *w != p)
        {
            return Err(ReconstructError::Invalid("checkpoint widths disagree with its grid".into()));
        }
        Ok(ReconstructorModel {
            network,
            input_scaler: self.input_scaler,
            target_scaler: self.target_scaler,
            impute: self.impute,
            grid: self.grid,
            config: self.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticConfig};

    fn small_config(epochs: usize) -> ReconstructorConfig {
        ReconstructorConfig {
            hidden_widths: vec![32, 16],
            epochs,
            seed: 3,
            ..ReconstructorConfig::default()
        }
    }

    fn small_dataset(n: usize) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n_samples: n,
            grid_points: 20,
            seed: 1,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn learning_rate_halves_every_interval() {
        let trained = train_reconstructor(&small_dataset(40), &small_config(120)).unwrap();
        assert_eq!(trained.history.len(), 120);
        assert_eq!(trained.history[49].lr, 3e-4);
        assert_eq!(trained.history[50].lr, 1.5e-4);
        assert_eq!(trained.history[100].lr, 7.5e-5);
    }

    #[test]
    fn returned_model_has_the_lowest_validation_loss() {
        let ds = small_dataset(40);
        let trained = train_reconstructor(&ds, &small_config(30)).unwrap();
        let best = trained.best_epoch.unwrap();
        let best_loss = trained.history[best].val_loss.unwrap();
        assert!(trained.history.iter().all(|h| best_loss <= h.val_loss.unwrap()));
    }

    #[test]
    fn identical_curves_are_learned() {
        let mut ds = small_dataset(200);
        let template = ds.samples[0].stress.clone();
        for s in &mut ds.samples {
            s.stress = template.clone();
        }
        // With dropout the train/eval mismatch holds eval MSE near 3e-3.
        let cfg = ReconstructorConfig {
            epochs: 50,
            dropout_p: 0.0,
            ..ReconstructorConfig::default()
        };
        let trained = train_reconstructor(&ds, &cfg).unwrap();
        let best = trained.history.iter().filter_map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-4, "validation mse {best}");
    }

    #[test]
    fn copy_through_and_determinism() {
        let ds = small_dataset(40);
        let a = train_reconstructor(&ds, &small_config(5)).unwrap();
        let b = train_reconstructor(&ds, &small_config(5)).unwrap();
        assert_eq!(a.model, b.model);

        let masked = mask_all(&ds.samples[..5], (0.3, 0.3), 11).unwrap();
        for m in &masked {
            let out = a.model.reconstruct(m).unwrap();
            for ((o, v), seen) in out.iter().zip(&m.values).zip(&m.mask) {
                if *seen {
                    assert_eq!(o.to_bits(), v.to_bits());
                }
                assert!(o.is_finite());
            }
        }
        let full = MaskedCurve::fully_observed(&ds.samples[0].stress).unwrap();
        assert_eq!(a.model.reconstruct(&full).unwrap(), ds.samples[0].stress);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let ds = small_dataset(40);
        let model = train_reconstructor(&ds, &small_config(3)).unwrap().model;
        let back = ReconstructorModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn grid_mismatch_and_small_datasets_are_rejected() {
        let ds = small_dataset(40);
        let model = train_reconstructor(&ds, &small_config(1)).unwrap().model;
        let wrong = MaskedCurve::fully_observed(&[0.0; 7]).unwrap();
        assert!(model.reconstruct(&wrong).is_err());
        assert!(train_reconstructor(&small_dataset(20), &small_config(1)).is_err());
    }
}
