//! Stage-2 predictors: six model families mapping stress curves, optionally
//! augmented with the strength-law feature, to the four Minkowski
//! functionals.
//!
//! Feature columns are laid out as `[curve (P) | strength feature (1, with
//! the law) | auxiliary features (35, opt-in)]`. Inputs and targets are
//! z-standardized with statistics of the training partition.

pub mod cart;
pub mod cnn;
pub mod dnn;
pub mod forest;
pub mod gbt;
pub mod knn;
pub mod lstm;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cnn::{CnnConfig, CnnModel};
pub use dnn::{build_dnn, dnn_layers, Consistency, DnnConfig, DnnHistory};
pub use forest::{Forest, ForestConfig};
pub use gbt::{Gbt, GbtConfig};
pub use knn::{Knn, KnnConfig};
pub use lstm::{LstmConfig, LstmModel};

use crate::dataio::{carve, split, DataError, Dataset, ScalerKind, ScalerParams, N_MINKOWSKI};
use crate::nnet::{self, EarlyStopConfig, EpochRecord, Matrix, Model, Network, NnError, OptimizerConfig, TrainSpec};
use crate::reconstructor::{mask_all, ReconstructError, ReconstructorModel};
use crate::seeds;
use crate::strength::{peak_stress, LawError, StrengthLaw};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("predictor configuration: {0}")]
    Config(String),
    #[error("predictor shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error("predictor checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Dnn,
    Cnn1d,
    Lstm,
    Knn,
    RandomForest,
    Gbt,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 6] = [
        PredictorKind::Dnn,
        PredictorKind::Cnn1d,
        PredictorKind::Lstm,
        PredictorKind::Knn,
        PredictorKind::RandomForest,
        PredictorKind::Gbt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dnn => "dnn",
            Self::Cnn1d => "cnn1d",
            Self::Lstm => "lstm",
            Self::Knn => "knn",
            Self::RandomForest => "random_forest",
            Self::Gbt => "gbt",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = PredictorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PredictorError::Config(format!("unknown predictor kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainMode {
    WithFunction,
    WithoutFunction,
}

impl DomainMode {
    pub const BOTH: [DomainMode; 2] = [DomainMode::WithFunction, DomainMode::WithoutFunction];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WithFunction => "with_function",
            Self::WithoutFunction => "without_function",
        }
    }
}

impl fmt::Display for DomainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainMode {
    type Err = PredictorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::BOTH
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PredictorError::Config(format!("unknown domain mode `{s}`")))
    }
}

/// Which curves feed stage 2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// Stage-1 output on freshly masked copies.
    #[default]
    Reconstructed,
    /// Ground-truth curves (ablation).
    Raw,
}

/// Mini-batch Adam settings shared by the convolutional and recurrent
/// models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetTraining {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Early-stopping patience on validation loss.
    pub patience: usize,
}

impl Default for NetTraining {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 32,
            patience: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub dnn: DnnConfig,
    pub cnn1d: CnnConfig,
    pub lstm: LstmConfig,
    pub knn: KnnConfig,
    pub random_forest: ForestConfig,
    pub gbt: GbtConfig,
    /// Append the 35 auxiliary features to the inputs. Off by default: they
    /// may be derived from the targets.
    pub include_aux: bool,
    pub input_source: InputSource,
    /// Train/val/test fractions for every kind except the DNN.
    pub baseline_split: (f64, f64, f64),
    /// Train/test fractions for the DNN; its validation set is carved out of
    /// train with `dnn.val_fraction`.
    pub dnn_split: (f64, f64),
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            dnn: DnnConfig::default(),
            cnn1d: CnnConfig::default(),
            lstm: LstmConfig::default(),
            knn: KnnConfig::default(),
            random_forest: ForestConfig::default(),
            gbt: GbtConfig::default(),
            include_aux: false,
            input_source: InputSource::Reconstructed,
            baseline_split: (0.9, 0.05, 0.05),
            dnn_split: (0.8, 0.2),
        }
    }
}

/// Train/validation/test row indices into a [`Stage2Data`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl PredictorConfig {
    /// Both policies shuffle with the same seed, so for a given seed the
    /// baseline test rows are a subset of the DNN test rows.
    pub fn partition(&self, kind: PredictorKind, n: usize, seed: u64) -> Result<Partition, PredictorError> {
        let split_seed = seeds::derive(seed, "stage2-split", 0);
        if kind == PredictorKind::Dnn {
            let (tr, te) = self.dnn_split;
            let parts = split(n, (tr, 0.0, te), split_seed)?;
            let (train, val) = carve(&parts.train, self.dnn.val_fraction, seeds::derive(seed, "stage2-carve", 0))?;
            Ok(Partition {
                train,
                val,
                test: parts.test,
            })
        } else {
            let parts = split(n, self.baseline_split, split_seed)?;
            Ok(Partition {
                train: parts.train,
                val: parts.val,
                test: parts.test,
            })
        }
    }
}

/// Everything stage 2 needs per sample, row-aligned with the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Data {
    pub ids: Vec<String>,
    /// Input curves (reconstructed or raw), n x P.
    pub curves: Matrix,
    /// Peak stress of the ground-truth curves.
    pub true_peaks: Vec<f64>,
    /// Minkowski functionals, n x 4.
    pub targets: Matrix,
    /// Auxiliary features, n x 35, when every sample has them.
    pub aux: Option<Matrix>,
}

impl Stage2Data {
    /// Stage-2 inputs from ground-truth curves.
    pub fn raw(dataset: &Dataset) -> Self {
        Self::with_curves(dataset, dataset.curve_matrix())
    }

    /// Masks every curve with a generator derived from `seed` and replaces
    /// it with the reconstructor's output (observed points copied through).
    pub fn reconstructed(
        dataset: &Dataset,
        reconstructor: &ReconstructorModel,
        mask_range: (f64, f64),
        seed: u64,
    ) -> Result<Self, PredictorError> {
        if reconstructor.grid != dataset.grid {
            return Err(PredictorError::Shape("dataset grid differs from the reconstructor's grid".into()));
        }
        let masked = mask_all(&dataset.samples, mask_range, seeds::derive(seed, "stage2-mask", 0))?;
        let rows = reconstructor.reconstruct_batch(&masked, true)?;
        let curves = Matrix::from_vec(rows.len(), dataset.grid.len(), rows.concat())?;
        Ok(Self::with_curves(dataset, curves))
    }

    pub fn prepare(
        dataset: &Dataset,
        reconstructor: &ReconstructorModel,
        config: &PredictorConfig,
        mask_range: (f64, f64),
        seed: u64,
    ) -> Result<Self, PredictorError> {
        match config.input_source {
            InputSource::Reconstructed => Self::reconstructed(dataset, reconstructor, mask_range, seed),
            InputSource::Raw => Ok(Self::raw(dataset)),
        }
    }

    fn with_curves(dataset: &Dataset, curves: Matrix) -> Self {
        let aux = if dataset.samples.iter().all(|s| s.aux.is_some()) && !dataset.is_empty() {
            let rows: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.aux.clone().unwrap_or_default()).collect();
            Matrix::from_rows(&rows).ok()
        } else {
            None
        };
        Self {
            ids: dataset.samples.iter().map(|s| s.id.clone()).collect(),
            curves,
            true_peaks: dataset.samples.iter().map(|s| peak_stress(&s.stress)).collect(),
            targets: dataset.minkowski_matrix(),
            aux,
        }
    }

    pub fn len(&self) -> usize {
        self.curves.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.curves.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Stage2Data {
        Stage2Data {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            curves: self.curves.select_rows(idx),
            true_peaks: idx.iter().map(|&i| self.true_peaks[i]).collect(),
            targets: self.targets.select_rows(idx),
            aux: self.aux.as_ref().map(|a| a.select_rows(idx)),
        }
    }
}

/// Unscaled feature matrix; the second value counts rows whose strength
/// feature was clamped.
pub fn build_features(
    curves: &Matrix,
    aux: Option<&Matrix>,
    law: Option<&StrengthLaw>,
    include_aux: bool,
) -> Result<(Matrix, usize), PredictorError> {
    let aux = if include_aux {
        Some(aux.ok_or_else(|| PredictorError::Config("include_aux is set but the data has no auxiliary features".into()))?)
    } else {
        None
    };
    if let Some(a) = aux {
        if a.rows() != curves.rows() {
            return Err(PredictorError::Shape(format!("{} auxiliary rows for {} curves", a.rows(), curves.rows())));
        }
    }
    let width = curves.cols() + usize::from(law.is_some()) + aux.map_or(0, |a| a.cols());
    let mut data = Vec::with_capacity(curves.rows() * width);
    let mut flagged = 0;
    for r in 0..curves.rows() {
        let curve = curves.row(r);
        data.extend_from_slice(curve);
        if let Some(law) = law {
            let (v, f) = law.normalize_strength(peak_stress(curve));
            data.push(v);
            flagged += usize::from(f);
        }
        if let Some(a) = aux {
            data.extend_from_slice(a.row(r));
        }
    }
    Ok((Matrix::from_vec(curves.rows(), width, data)?, flagged))
}

/// Fitted model state of one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "snake_case")]
pub enum ModelState {
    Dnn(Network),
    Cnn1d(CnnModel),
    Lstm(LstmModel),
    Knn(Knn),
    RandomForest(Forest),
    Gbt(Gbt),
}

impl ModelState {
    /// Standardized outputs for standardized inputs.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, PredictorError> {
        match self {
            Self::Dnn(m) => Ok(nnet::predict(m, x)?),
            Self::Cnn1d(m) => Ok(nnet::predict(m, x)?),
            Self::Lstm(m) => Ok(nnet::predict(m, x)?),
            Self::Knn(m) => m.predict(x),
            Self::RandomForest(m) => m.predict(x),
            Self::Gbt(m) => m.predict(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    pub kind: PredictorKind,
    pub domain_mode: DomainMode,
    pub seed: u64,
    pub config: PredictorConfig,
    pub seq_len: usize,
    pub input_scaler: ScalerParams,
    pub target_scaler: ScalerParams,
    /// Present exactly in with-function mode.
    pub strength_law: Option<StrengthLaw>,
    pub model: ModelState,
    pub train_runtime_s: f64,
    /// Epoch records of the neural families (empty for the others).
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

const CHECKPOINT_FORMAT: &str = "llh-predictor";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PredictorCheckpoint {
    format: String,
    version: u32,
    predictor: TrainedPredictor,
}

fn fit_sequence_model<M: Model + Clone>(
    model: &mut M,
    train: (&Matrix, &Matrix),
    val: Option<(&Matrix, &Matrix)>,
    training: &NetTraining,
    seed: u64,
) -> Result<Vec<EpochRecord>, PredictorError> {
    if !(training.learning_rate > 0.0) || training.batch_size == 0 || training.epochs == 0 || training.patience == 0 {
        return Err(PredictorError::Config(
            "learning rate, batch size, epochs and patience must be positive".into(),
        ));
    }
    let spec = TrainSpec {
        epochs: training.epochs,
        batch_size: training.batch_size,
        optimizer: OptimizerConfig::adam(training.learning_rate, training.weight_decay),
        schedule: None,
        early_stop: Some(EarlyStopConfig {
            patience: training.patience,
            min_delta: 0.0,
        }),
        seed,
        restore_best: true,
    };
    Ok(nnet::fit(model, train, val, &spec, &nnet::train::mse_objective)?.history)
}

/// Trains one predictor on the rows of `part` (test rows are not touched).
pub fn fit_predictor(
    kind: PredictorKind,
    mode: DomainMode,
    data: &Stage2Data,
    part: &Partition,
    config: &PredictorConfig,
    seed: u64,
) -> Result<TrainedPredictor, PredictorError> {
    if part.train.len() < 2 {
        return Err(PredictorError::Config(format!(
            "{kind}: {} training rows are too few",
            part.train.len()
        )));
    }
    if config.include_aux {
        log::warn!("auxiliary features enabled: they may be derived from the targets and leak them into the inputs");
    }
    let start = Instant::now();
    let law = match mode {
        DomainMode::WithFunction => {
            let m = data.targets.select_rows(&part.train);
            let peaks: Vec<f64> = part.train.iter().map(|&i| data.true_peaks[i]).collect();
            let labels: Vec<String> = part.train.iter().map(|&i| data.ids[i].clone()).collect();
            Some(StrengthLaw::fit(&m, &peaks, Some(&labels))?)
        }
        DomainMode::WithoutFunction => None,
    };
    let (features, flagged) = build_features(&data.curves, data.aux.as_ref(), law.as_ref(), config.include_aux)?;
    if flagged > 0 {
        log::warn!("{kind}: strength feature clamped for {flagged} sample(s)");
    }
    let input_scaler = ScalerParams::fit(&features.select_rows(&part.train), ScalerKind::ZScore)?;
    let target_scaler = ScalerParams::fit(&data.targets.select_rows(&part.train), ScalerKind::ZScore)?;
    let x = input_scaler.apply(&features)?;
    let y = target_scaler.apply(&data.targets)?;
    let (tx, ty) = (x.select_rows(&part.train), y.select_rows(&part.train));
    let (vx, vy) = (x.select_rows(&part.val), y.select_rows(&part.val));
    let val = (!part.val.is_empty()).then_some((&vx, &vy));
    let p = data.seq_len();
    let n_extra = features.cols() - p;
    let model_seed = seeds::derive(seed, kind.as_str(), 0);
    let mut history = Vec::new();

    let model = match kind {
        PredictorKind::Dnn => {
            config.dnn.validate()?;
            let Some(val) = val else {
                return Err(PredictorError::Config("dnn: the validation carve-out is empty".into()));
            };
            let mut net = build_dnn(features.cols(), N_MINKOWSKI, seeds::derive(model_seed, "init", 0))?;
            if let Some(law) = &law {
                let log_peaks = part
                    .train
                    .iter()
                    .map(|&i| {
                        let pk = peak_stress(data.curves.row(i));
                        if pk > 0.0 {
                            Ok(pk.ln())
                        } else {
                            Err(LawError::NonPositive(vec![data.ids[i].clone()]))
                        }
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                let (weights, offsets) = law.standardized_consistency(&target_scaler.a, &target_scaler.b, &log_peaks);
                let c = Consistency { weights, offsets };
                history.extend(dnn::pretrain(&mut net, (&tx, &ty), &c, &config.dnn, model_seed)?);
            }
            let (main, _) = dnn::train_main(&mut net, (&tx, &ty), val, &config.dnn, model_seed)?;
            history.extend(main);
            ModelState::Dnn(net)
        }
        PredictorKind::Cnn1d => {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(model_seed, "init", 0));
            let mut m = CnnModel::new(p, n_extra, N_MINKOWSKI, &config.cnn1d, &mut rng)?;
            history = fit_sequence_model(&mut m, (&tx, &ty), val, &config.cnn1d.training, model_seed)?;
            ModelState::Cnn1d(m)
        }
        PredictorKind::Lstm => {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(model_seed, "init", 0));
            let mut m = LstmModel::new(p, n_extra, N_MINKOWSKI, &config.lstm, &mut rng)?;
            history = fit_sequence_model(&mut m, (&tx, &ty), val, &config.lstm.training, model_seed)?;
            ModelState::Lstm(m)
        }
        PredictorKind::Knn => ModelState::Knn(Knn::fit(&tx, &ty, &config.knn)?),
        PredictorKind::RandomForest => ModelState::RandomForest(Forest::fit(&tx, &ty, &config.random_forest, model_seed)?),
        PredictorKind::Gbt => ModelState::Gbt(Gbt::fit(&tx, &ty, &config.gbt, model_seed)?),
    };
    Ok(TrainedPredictor {
        kind,
        domain_mode: mode,
        seed,
        config: config.clone(),
        seq_len: p,
        input_scaler,
        target_scaler,
        strength_law: law,
        model,
        train_runtime_s: start.elapsed().as_secs_f64(),
        history,
    })
}

/// Prepares stage-2 inputs from `dataset`, partitions them for `kind` and
/// trains. Returns the predictor and its partition.
pub fn train_predictor(
    kind: PredictorKind,
    dataset: &Dataset,
    reconstructor: &ReconstructorModel,
    mode: DomainMode,
    config: &PredictorConfig,
    seed: u64,
) -> Result<(TrainedPredictor, Partition), PredictorError> {
    let data = Stage2Data::prepare(dataset, reconstructor, config, reconstructor.config.mask_range, seed)?;
    let part = config.partition(kind, data.len(), seed)?;
    Ok((fit_predictor(kind, mode, &data, &part, config, seed)?, part))
}

impl TrainedPredictor {
    pub fn input_width(&self) -> usize {
        self.input_scaler.width()
    }

    /// Minkowski predictions (n x 4) for curves on the training grid.
    pub fn predict_curves(&self, curves: &Matrix, aux: Option<&Matrix>) -> Result<Matrix, PredictorError> {
        if curves.cols() != self.seq_len {
            return Err(PredictorError::Shape(format!(
                "curves have {} points, the model was trained on {}",
                curves.cols(),
                self.seq_len
            )));
        }
        let (features, _) = build_features(curves, aux, self.strength_law.as_ref(), self.config.include_aux)?;
        let x = self.input_scaler.apply(&features)?;
        let z = self.model.predict(&x)?;
        Ok(self.target_scaler.invert(&z)?)
    }

    pub fn predict(&self, curve: &[f64], aux: Option<&[f64]>) -> Result<[f64; N_MINKOWSKI], PredictorError> {
        let curves = Matrix::row_vector(curve.to_vec());
        let aux = aux.map(|a| Matrix::row_vector(a.to_vec()));
        let out = self.predict_curves(&curves, aux.as_ref())?;
        let mut m = [0.0; N_MINKOWSKI];
        m.copy_from_slice(out.row(0));
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String, PredictorError> {
        let ck = PredictorCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            predictor: self.clone(),
        };
        serde_json::to_string(&ck).map_err(|e| PredictorError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let ck: PredictorCheckpoint = serde_json::from_str(text).map_err(|e| PredictorError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(PredictorError::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ck.format, ck.version
            )));
        }
        let p = ck.predictor;
        if p.strength_law.is_some() != (p.domain_mode == DomainMode::WithFunction) {
            return Err(PredictorError::Checkpoint("strength law present without with-function mode or vice versa".into()));
        }
        Ok(p)
    }
}
