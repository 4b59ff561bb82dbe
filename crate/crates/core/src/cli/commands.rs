//! Subcommand implementations. Each command checks its inputs and outputs
//! before doing any work, then writes its artifacts and records them in the
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::manifest::{Manifest, Provenance, Stamped};
use super::RunConfig;
use crate::dataio::{generate_synthetic, iqr_filter, load_dataset, write_dataset, Dataset};
use crate::dataio::filter::Fence;
use crate::eval::{self, ReportFormat};
use crate::predictors::PredictorKind;
use crate::reconstructor::{train_reconstructor, ReconstructorCheckpoint, ReconstructorModel};
use crate::seeds;
use crate::strength::StrengthLaw;
use crate::Error;

pub struct Context {
    pub config: RunConfig,
    pub digest: String,
    pub jobs: usize,
    pub force: bool,
}

const DATASET_FILES: [&str; 3] = ["samples.csv", "curves.csv", "grid.json"];

impl Context {
    fn run_dir(&self) -> &Path {
        &self.config.paths.run_dir
    }

    fn raw_dir(&self) -> PathBuf {
        self.run_dir().join("data").join("raw")
    }

    fn clean_dir(&self) -> PathBuf {
        self.run_dir().join("data").join("clean")
    }

    fn checkpoints(&self) -> PathBuf {
        self.run_dir().join("checkpoints")
    }

    fn reports(&self) -> PathBuf {
        self.run_dir().join("reports")
    }

    fn plots(&self) -> PathBuf {
        self.run_dir().join("plots")
    }

    fn stamp(&self, command: &str, seed: u64) -> Provenance {
        Provenance {
            command: command.into(),
            config_digest: self.digest.clone(),
            seed,
        }
    }

    /// Refuses to proceed when any output exists and `--force` is absent.
    fn check_outputs(&self, paths: &[PathBuf]) -> Result<(), Error> {
        if self.force {
            return Ok(());
        }
        match paths.iter().find(|p| p.exists()) {
            Some(p) => Err(Error::Exists(p.clone())),
            None => Ok(()),
        }
    }

    fn load_dataset_dir(&self, dir: &Path, hint: &str) -> Result<Dataset, Error> {
        let (samples, curves) = (dir.join("samples.csv"), dir.join("curves.csv"));
        for p in [&samples, &curves] {
            if !p.exists() {
                return Err(Error::Config(format!("{} is missing; {hint}", p.display())));
            }
        }
        Ok(load_dataset(&samples, &curves, &self.config.synthetic.grid()?)?)
    }

    /// External data when configured, otherwise the generated dataset.
    fn load_input(&self) -> Result<Dataset, Error> {
        match &self.config.paths.data_in {
            Some(dir) => self.load_dataset_dir(dir, "check paths.data_in"),
            None => self.load_dataset_dir(&self.raw_dir(), "run `llh generate` first"),
        }
    }

    fn load_clean(&self) -> Result<Dataset, Error> {
        self.load_dataset_dir(&self.clean_dir(), "run `llh preprocess` first")
    }
}

fn mkdir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_stamped<T: Serialize>(path: &Path, provenance: &Provenance, body: T) -> Result<(), Error> {
    let stamped = Stamped {
        provenance: provenance.clone(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&stamped).map_err(|e| Error::Config(format!("serialize: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

fn record_all(ctx: &Context, paths: &[PathBuf], stamp: &Provenance) -> Result<(), Error> {
    let mut manifest = Manifest::load(ctx.run_dir())?;
    for p in paths {
        manifest.record(ctx.run_dir(), p, stamp)?;
    }
    manifest.save(ctx.run_dir())
}

#[derive(Serialize)]
struct GenerationInfo<'a> {
    n_samples: usize,
    grid_points: usize,
    planted_alpha: [f64; 4],
    noise_std: f64,
    config: &'a crate::dataio::SyntheticConfig,
}

pub fn generate(ctx: &Context) -> Result<(), Error> {
    let dir = ctx.raw_dir();
    let info_path = dir.join("generation.json");
    let mut outputs: Vec<PathBuf> = DATASET_FILES.iter().map(|f| dir.join(f)).collect();
    outputs.push(info_path.clone());
    ctx.check_outputs(&outputs)?;
    let syn = &ctx.config.synthetic;
    let ds = generate_synthetic(syn)?;
    mkdir(&dir)?;
    write_dataset(&ds, &dir)?;
    let stamp = ctx.stamp("generate", syn.seed);
    let info = GenerationInfo {
        n_samples: ds.len(),
        grid_points: ds.grid.len(),
        planted_alpha: syn.planted_alpha,
        noise_std: syn.noise_std,
        config: syn,
    };
    write_stamped(&info_path, &stamp, info)?;
    record_all(ctx, &outputs, &stamp)?;
    println!("generated {} samples on a {}-point grid in {}", ds.len(), ds.grid.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct FilterReport {
    n_input: usize,
    n_kept: usize,
    kept_ids: Vec<String>,
    dropped_ids: Vec<String>,
    fences: [Fence; 4],
}

pub fn preprocess(ctx: &Context) -> Result<(), Error> {
    let dir = ctx.clean_dir();
    let report_path = ctx.reports().join("filter_report.json");
    let mut outputs: Vec<PathBuf> = DATASET_FILES.iter().map(|f| dir.join(f)).collect();
    outputs.push(report_path.clone());
    ctx.check_outputs(&outputs)?;
    let ds = ctx.load_input()?;
    let n_input = ds.len();
    let outcome = iqr_filter(&ds.samples)?;
    let clean = Dataset::new(ds.grid.clone(), outcome.kept)?;
    mkdir(&dir)?;
    write_dataset(&clean, &dir)?;
    let stamp = ctx.stamp("preprocess", ctx.config.synthetic.seed);
    let report = FilterReport {
        n_input,
        n_kept: clean.len(),
        kept_ids: clean.samples.iter().map(|s| s.id.clone()).collect(),
        dropped_ids: outcome.dropped_ids.clone(),
        fences: outcome.fences,
    };
    write_stamped(&report_path, &stamp, report)?;
    record_all(ctx, &outputs, &stamp)?;
    println!(
        "kept {} of {} samples; dropped {:?}",
        clean.len(),
        n_input,
        outcome.dropped_ids
    );
    Ok(())
}

pub fn fit_law(ctx: &Context) -> Result<(), Error> {
    let path = ctx.checkpoints().join("strength_law.json");
    ctx.check_outputs(std::slice::from_ref(&path))?;
    let ds = ctx.load_clean()?;
    let law = StrengthLaw::fit_samples(&ds.samples)?;
    let stamp = ctx.stamp("fit-law", ctx.config.synthetic.seed);
    write_stamped(&path, &stamp, &law)?;
    record_all(ctx, std::slice::from_ref(&path), &stamp)?;
    println!(
        "alpha = {:?}, sigma_ref = {}, sse = {} over {} samples",
        law.alpha, law.sigma_ref, law.fit_diagnostics.sse, law.fit_diagnostics.n
    );
    Ok(())
}

#[derive(Serialize)]
struct ReconstructionReport {
    test_r2: f64,
    best_epoch: Option<usize>,
    epochs: usize,
    mask_seed: u64,
    test_ids: Vec<String>,
}

pub fn reconstructor_path(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints").join("reconstructor.json")
}

/// Loads a stamped reconstructor checkpoint.
pub fn load_reconstructor(path: &Path) -> Result<(ReconstructorModel, Provenance), Error> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} is missing; run `llh train-reconstruct` first",
            path.display()
        )));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stamped: Stamped<ReconstructorCheckpoint> =
        serde_json::from_str(&text).map_err(|e| Error::Provenance(format!("{}: {e}", path.display())))?;
    Ok((stamped.body.into_model()?, stamped.provenance))
}

pub fn train_reconstruct(ctx: &Context) -> Result<(), Error> {
    let ck_path = reconstructor_path(ctx.run_dir());
    let history_path = ctx.reports().join("history.csv");
    let report_path = ctx.reports().join("reconstruction.json");
    let n_examples = ctx.config.plot_examples;
    let example_paths: Vec<PathBuf> = (0..n_examples)
        .map(|k| ctx.plots().join(format!("curve_example_{k}.csv")))
        .collect();
    let mut outputs = vec![ck_path.clone(), history_path.clone(), report_path.clone()];
    outputs.extend(example_paths.iter().cloned());
    ctx.check_outputs(&outputs)?;

    let ds = ctx.load_clean()?;
    let cfg = &ctx.config.reconstructor;
    let trained = train_reconstructor(&ds, cfg)?;
    let test = ds.subset(&trained.split.test);
    let mask_seed = seeds::derive(cfg.seed, "recon-eval", 0);
    let test_r2 = trained.model.evaluate(&test.samples, mask_seed)?;

    let stamp = ctx.stamp("train-reconstruct", cfg.seed);
    write_stamped(&ck_path, &stamp, trained.model.to_checkpoint())?;
    let mut history = String::from("epoch,train_mse,val_mse,lr\n");
    for r in &trained.history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(history, "{},{},{val},{}", r.epoch, r.train_loss, r.lr);
    }
    write_text(&history_path, &history)?;
    let report = ReconstructionReport {
        test_r2,
        best_epoch: trained.best_epoch,
        epochs: trained.history.len(),
        mask_seed,
        test_ids: test.samples.iter().map(|s| s.id.clone()).collect(),
    };
    write_stamped(&report_path, &stamp, report)?;
    let k = n_examples.min(test.len());
    let examples = eval::reconstruction_examples(&trained.model, &test.samples[..k], mask_seed)?;
    mkdir(&ctx.plots())?;
    let written = eval::emit_curve_examples(&examples, &ctx.plots())?;
    outputs.truncate(3);
    outputs.extend(written);
    record_all(ctx, &outputs, &stamp)?;
    println!("reconstruction test R² = {test_r2}");
    Ok(())
}

fn cell_stem(r: &eval::MetricsReport) -> String {
    let d = &r.descriptor;
    format!("{}_{}_seed{}", d.kind, d.domain_mode, d.seed)
}

pub fn compare(ctx: &Context) -> Result<(), Error> {
    let cmp = &ctx.config.comparison;
    let reports = ctx.reports();
    let csv_path = reports.join("comparison.csv");
    let summary_path = reports.join("comparison_summary.csv");
    let json_path = reports.join("comparison.json");
    ctx.check_outputs(&[csv_path.clone(), summary_path.clone(), json_path.clone()])?;
    let (recon, _) = load_reconstructor(&reconstructor_path(ctx.run_dir()))?;
    let ds = ctx.load_clean()?;

    let table = eval::run_comparison(&ds, &recon, &ctx.config.predictors, cmp, ctx.jobs, &ctx.digest)?;

    let stamp = ctx.stamp("compare", ctx.config.reconstructor.seed);
    let cells_dir = reports.join("cells");
    mkdir(&cells_dir)?;
    mkdir(&ctx.plots())?;
    let mut outputs = Vec::new();
    write_text(&csv_path, &eval::comparison_csv(&table))?;
    write_text(&summary_path, &eval::summary_csv(&table))?;
    outputs.extend([csv_path.clone(), summary_path]);
    if ctx.config.report_formats.contains(&ReportFormat::Json) {
        write_stamped(&json_path, &stamp, &table)?;
        outputs.push(json_path);
    }
    for cell in &table.cells {
        let cell_stamp = ctx.stamp("compare", cell.descriptor.seed);
        for &format in &ctx.config.report_formats {
            let path = cells_dir.join(format!(
                "{}.{}",
                cell_stem(cell),
                if format == ReportFormat::Json { "json" } else { "csv" }
            ));
            match format {
                ReportFormat::Json => write_stamped(&path, &cell_stamp, cell)?,
                ReportFormat::Csv => eval::emit_report(cell, &path, format)?,
            }
            outputs.push(path);
        }
        let scatter = eval::emit_scatter(cell, &ctx.plots())?;
        let mut manifest = Manifest::load(ctx.run_dir())?;
        for p in &scatter {
            manifest.record(ctx.run_dir(), p, &cell_stamp)?;
        }
        for p in outputs.iter().filter(|p| p.starts_with(&cells_dir) && p.to_string_lossy().contains(&cell_stem(cell))) {
            manifest.record(ctx.run_dir(), p, &cell_stamp)?;
        }
        manifest.save(ctx.run_dir())?;
    }
    let top: Vec<PathBuf> = outputs.into_iter().filter(|p| !p.starts_with(&cells_dir)).collect();
    record_all(ctx, &top, &stamp)?;
    print!("{}", summary_table(&table));
    Ok(())
}

fn summary_table(table: &eval::ComparisonTable) -> String {
    let mut out = format!("{:<14} {:<17} {:>6} {:>9} {:>9} {:>9}\n", "kind", "mode", "seeds", "mean R²", "min", "max");
    for s in &table.summary {
        let _ = writeln!(
            out,
            "{:<14} {:<17} {:>6} {:>9.4} {:>9.4} {:>9.4}",
            s.kind.as_str(),
            s.domain_mode.as_str(),
            s.n_seeds,
            s.mean_r2_mean,
            s.mean_r2_min,
            s.mean_r2_max
        );
    }
    let mut kinds: Vec<PredictorKind> = table.summary.iter().map(|s| s.kind).collect();
    kinds.dedup();
    for k in kinds {
        let (wins, total) = table.with_at_least_without(k);
        if total > 0 {
            let _ = writeln!(out, "{k}: with >= without in {wins} of {total} seeds");
        }
    }
    out
}

pub fn report(ctx: &Context) -> Result<(), Error> {
    let run_dir = ctx.run_dir();
    if !run_dir.join(super::manifest::MANIFEST_FILE).exists() {
        return Err(Error::Config(format!("{} has no manifest", run_dir.display())));
    }
    let n = Manifest::load(run_dir)?.verify(run_dir)?;
    println!("provenance verified for {n} artifacts");
    let summary = ctx.reports().join("comparison_summary.csv");
    if summary.exists() {
        let text = fs::read_to_string(&summary).map_err(|e| Error::io(&summary, e))?;
        print!("{text}");
    }
    Ok(())
}
