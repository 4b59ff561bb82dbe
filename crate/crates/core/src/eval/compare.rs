//! Per-model evaluation and the (kind, mode, seed) comparison grid.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{r2, EvalError};
use crate::dataio::{Dataset, N_MINKOWSKI};
use crate::predictors::{fit_predictor, DomainMode, PredictorConfig, PredictorKind, Stage2Data, TrainedPredictor};
use crate::reconstructor::ReconstructorModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: PredictorKind,
    pub domain_mode: DomainMode,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub descriptor: ModelDescriptor,
    pub per_target_r2: [f64; N_MINKOWSKI],
    /// Unweighted mean of `per_target_r2`.
    pub mean_r2: f64,
    pub train_runtime_s: f64,
    pub predict_runtime_s: f64,
    /// Per target, `(actual, predicted)` for every test sample.
    pub scatter: Vec<Vec<(f64, f64)>>,
    pub test_ids: Vec<String>,
}

pub fn mean_of(values: &[f64; N_MINKOWSKI]) -> f64 {
    values.iter().sum::<f64>() / N_MINKOWSKI as f64
}

/// Scores `model` on already prepared test rows.
pub fn evaluate_prepared(
    model: &TrainedPredictor,
    test: &Stage2Data,
    config_digest: &str,
) -> Result<MetricsReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Invalid("empty test set".into()));
    }
    let start = Instant::now();
    let pred = model.predict_curves(&test.curves, test.aux.as_ref())?;
    let predict_runtime_s = start.elapsed().as_secs_f64();
    let mut per_target_r2 = [0.0; N_MINKOWSKI];
    let mut scatter = Vec::with_capacity(N_MINKOWSKI);
    for (j, slot) in per_target_r2.iter_mut().enumerate() {
        let actual = test.targets.column(j);
        let predicted = pred.column(j);
        *slot = r2(&actual, &predicted).map_err(|source| EvalError::Target { target: j, source })?;
        scatter.push(actual.into_iter().zip(predicted).collect());
    }
    Ok(MetricsReport {
        descriptor: ModelDescriptor {
            kind: model.kind,
            domain_mode: model.domain_mode,
            seed: model.seed,
            config_digest: config_digest.to_string(),
        },
        mean_r2: mean_of(&per_target_r2),
        per_target_r2,
        train_runtime_s: model.train_runtime_s,
        predict_runtime_s,
        scatter,
        test_ids: test.ids.clone(),
    })
}

/// Masks and reconstructs the curves of `test` (mask generator derived
/// from `mask_seed`), then scores `model`.
pub fn evaluate_predictor(
    model: &TrainedPredictor,
    test: &Dataset,
    reconstructor: &ReconstructorModel,
    mask_seed: u64,
    config_digest: &str,
) -> Result<MetricsReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Invalid("empty test set".into()));
    }
    let data = Stage2Data::prepare(test, reconstructor, &model.config, reconstructor.config.mask_range, mask_seed)?;
    evaluate_prepared(model, &data, config_digest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub kinds: Vec<PredictorKind>,
    pub modes: Vec<DomainMode>,
    pub seeds: Vec<u64>,
    /// Write measured runtimes. When false they are reported as 0 so that
    /// reruns produce identical bytes.
    pub record_runtimes: bool,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            kinds: PredictorKind::ALL.to_vec(),
            modes: DomainMode::BOTH.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            record_runtimes: true,
        }
    }
}

impl ComparisonConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.kinds.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err(EvalError::Invalid("comparison needs at least one kind, mode and seed".into()));
        }
        if has_repeats(&self.kinds) || has_repeats(&self.modes) || has_repeats(&self.seeds) {
            return Err(EvalError::Invalid("comparison kinds, modes and seeds must not repeat".into()));
        }
        Ok(())
    }
}

fn has_repeats<T: Ord + Clone>(items: &[T]) -> bool {
    let mut sorted = items.to_vec();
    sorted.sort();
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// Spread of `mean_r2` over seeds for one (kind, mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub kind: PredictorKind,
    pub domain_mode: DomainMode,
    pub n_seeds: usize,
    pub mean_r2_mean: f64,
    pub mean_r2_min: f64,
    pub mean_r2_max: f64,
    pub train_runtime_s_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Ordered by kind, then mode, then seed, in configuration order.
    pub cells: Vec<MetricsReport>,
    pub summary: Vec<CellSummary>,
}

impl ComparisonTable {
    pub fn cell(&self, kind: PredictorKind, mode: DomainMode, seed: u64) -> Option<&MetricsReport> {
        self.cells.iter().find(|c| {
            c.descriptor.kind == kind && c.descriptor.domain_mode == mode && c.descriptor.seed == seed
        })
    }

    /// Seeds where `kind` scored at least as well with the function as
    /// without.
    pub fn with_at_least_without(&self, kind: PredictorKind) -> (usize, usize) {
        let mut seeds: Vec<u64> = self
            .cells
            .iter()
            .filter(|c| c.descriptor.kind == kind)
            .map(|c| c.descriptor.seed)
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut wins = 0;
        let mut total = 0;
        for s in seeds {
            if let (Some(w), Some(wo)) = (
                self.cell(kind, DomainMode::WithFunction, s),
                self.cell(kind, DomainMode::WithoutFunction, s),
            ) {
                total += 1;
                wins += usize::from(w.mean_r2 >= wo.mean_r2);
            }
        }
        (wins, total)
    }
}

fn summarize(cells: &[MetricsReport], config: &ComparisonConfig) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for &kind in &config.kinds {
        for &mode in &config.modes {
            let sel: Vec<&MetricsReport> = cells
                .iter()
                .filter(|c| c.descriptor.kind == kind && c.descriptor.domain_mode == mode)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let n = sel.len() as f64;
            out.push(CellSummary {
                kind,
                domain_mode: mode,
                n_seeds: sel.len(),
                mean_r2_mean: sel.iter().map(|c| c.mean_r2).sum::<f64>() / n,
                mean_r2_min: sel.iter().map(|c| c.mean_r2).fold(f64::INFINITY, f64::min),
                mean_r2_max: sel.iter().map(|c| c.mean_r2).fold(f64::NEG_INFINITY, f64::max),
                train_runtime_s_mean: sel.iter().map(|c| c.train_runtime_s).sum::<f64>() / n,
            });
        }
    }
    out
}

/// Trains and scores every (kind, mode, seed) cell. Each seed gets one set
/// of masked and reconstructed curves and one shuffle shared by all its
/// cells. Cells run on up to `jobs` threads; the result does not depend on
/// `jobs`.
pub fn run_comparison(
    dataset: &Dataset,
    reconstructor: &ReconstructorModel,
    predictors: &PredictorConfig,
    config: &ComparisonConfig,
    jobs: usize,
    config_digest: &str,
) -> Result<ComparisonTable, EvalError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mask_range = reconstructor.config.mask_range;
        let data: Vec<Stage2Data> = config
            .seeds
            .par_iter()
            .map(|&seed| Stage2Data::prepare(dataset, reconstructor, predictors, mask_range, seed))
            .collect::<Result<_, _>>()?;
        let mut grid = Vec::new();
        for &kind in &config.kinds {
            for &mode in &config.modes {
                for (si, &seed) in config.seeds.iter().enumerate() {
                    grid.push((kind, mode, si, seed));
                }
            }
        }
        let cells = grid
            .par_iter()
            .map(|&(kind, mode, si, seed)| {
                let cell_err = |source: EvalError| EvalError::Cell {
                    kind,
                    mode,
                    seed,
                    source: Box::new(source),
                };
                let d = &data[si];
                let part = predictors.partition(kind, d.len(), seed).map_err(|e| cell_err(e.into()))?;
                let model = fit_predictor(kind, mode, d, &part, predictors, seed).map_err(|e| cell_err(e.into()))?;
                let mut report = evaluate_prepared(&model, &d.subset(&part.test), config_digest).map_err(cell_err)?;
                if !config.record_runtimes {
                    report.train_runtime_s = 0.0;
                    report.predict_runtime_s = 0.0;
                }
                log::info!("{kind} {mode} seed {seed}: mean R² {:.4}", report.mean_r2);
                Ok(report)
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let summary = summarize(&cells, config);
        Ok(ComparisonTable { cells, summary })
    })
}
