//! Command-line front end: one JSON run configuration, six subcommands and
//! a run directory of provenance-stamped artifacts.
//!
//! Layout under `paths.run_dir`: `data/raw`, `data/clean`, `checkpoints/`,
//! `reports/`, `plots/` and `manifest.json`.

pub mod commands;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::SyntheticConfig;
use crate::eval::{ComparisonConfig, ReportFormat};
use crate::predictors::{PredictorConfig, PredictorKind};
use crate::reconstructor::ReconstructorConfig;
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "llh", version, about = "Stress-strain reconstruction and Minkowski-functional inversion")]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the synthetic-data and reconstructor seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for tree building and comparison cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset to data/raw.
    Generate,
    /// Drop IQR outliers and write data/clean.
    Preprocess,
    /// Fit the strength law on the cleaned dataset.
    FitLaw,
    /// Train the stage-1 reconstructor.
    TrainReconstruct,
    /// Run the with/without-function comparison grid.
    Compare,
    /// Verify run-directory provenance and print the comparison summary.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Preprocess => "preprocess",
            Self::FitLaw => "fit-law",
            Self::TrainReconstruct => "train-reconstruct",
            Self::Compare => "compare",
            Self::Report => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub run_dir: PathBuf,
    /// Directory with `samples.csv` and `curves.csv` (and `grid.json` when
    /// needed) used instead of generated data.
    pub data_in: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("run"),
            data_in: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub reconstructor: ReconstructorConfig,
    pub predictors: PredictorConfig,
    pub comparison: ComparisonConfig,
    pub report_formats: Vec<ReportFormat>,
    /// Reconstructed test curves written to plots/.
    pub plot_examples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            synthetic: SyntheticConfig::default(),
            reconstructor: ReconstructorConfig::default(),
            predictors: PredictorConfig::default(),
            comparison: ComparisonConfig::default(),
            report_formats: vec![ReportFormat::Json, ReportFormat::Csv],
            plot_examples: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `--seed`.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.synthetic.seed = s;
            self.reconstructor.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.synthetic.validate()?;
        self.reconstructor.validate()?;
        let p = &self.predictors;
        p.dnn.validate()?;
        self.comparison.validate()?;
        let (tr, va, te) = p.baseline_split;
        if [tr, va, te].iter().any(|f| !(0.0..=1.0).contains(f)) || (tr + va + te - 1.0).abs() > 1e-9 {
            return Err(Error::Config("predictors.baseline_split fractions must lie in [0, 1] and sum to 1".into()));
        }
        let (tr, te) = p.dnn_split;
        if !(tr > 0.0 && te > 0.0) || (tr + te - 1.0).abs() > 1e-9 {
            return Err(Error::Config("predictors.dnn_split must be two positive fractions summing to 1".into()));
        }
        if p.knn.k == 0 {
            return Err(Error::Config("predictors.knn.k must be at least 1".into()));
        }
        if p.random_forest.n_trees == 0 || p.random_forest.min_leaf == 0 {
            return Err(Error::Config("predictors.random_forest counts must be at least 1".into()));
        }
        if !(p.gbt.learning_rate > 0.0) || !(p.gbt.l2_lambda >= 0.0) || p.gbt.min_leaf == 0 {
            return Err(Error::Config("predictors.gbt needs learning_rate > 0, l2_lambda >= 0, min_leaf >= 1".into()));
        }
        for (kind, t) in [
            (PredictorKind::Cnn1d, &p.cnn1d.training),
            (PredictorKind::Lstm, &p.lstm.training),
        ] {
            if !(t.learning_rate > 0.0) || t.epochs == 0 || t.batch_size == 0 || t.patience == 0 {
                return Err(Error::Config(format!("predictors.{kind}.training counts and learning rate must be positive")));
            }
        }
        if self.report_formats.is_empty() {
            return Err(Error::Config("report_formats must name at least one format".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON (object keys sorted, no
    /// whitespace) of the effective configuration. `paths.run_dir` is left
    /// out: it places a run but does not change any result.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(paths) = value.get_mut("paths").and_then(|p| p.as_object_mut()) {
            paths.remove("run_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Parses, validates and dispatches. The caller maps errors to exit codes.
pub fn run(cli: &Cli) -> Result<(), Error> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .with_seed(cli.seed);
    config.validate()?;
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let ctx = commands::Context {
        digest: config.digest(),
        config,
        jobs: cli.jobs,
        force: cli.force,
    };
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Preprocess => commands::preprocess(&ctx),
        Command::FitLaw => commands::fit_law(&ctx),
        Command::TrainReconstruct => commands::train_reconstruct(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Report => commands::report(&ctx),
    }
}
