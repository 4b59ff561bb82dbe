//! Deterministic JSON/CSV emission of reports, comparison tables and plot
//! data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::compare::{ComparisonTable, MetricsReport};
use super::EvalError;
use crate::dataio::Sample;
use crate::reconstructor::{mask_all, ReconstructorModel};

pub const COMPARISON_COLUMNS: [&str; 10] = [
    "kind",
    "domain_mode",
    "seed",
    "r2_m0",
    "r2_m1",
    "r2_m2",
    "r2_m3",
    "mean_r2",
    "train_runtime_s",
    "predict_runtime_s",
];

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "kind",
    "domain_mode",
    "n_seeds",
    "mean_r2_mean",
    "mean_r2_min",
    "mean_r2_max",
    "train_runtime_s_mean",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn report_row(r: &MetricsReport) -> String {
    let d = &r.descriptor;
    let [a, b, c, e] = r.per_target_r2;
    format!(
        "{},{},{},{a},{b},{c},{e},{},{},{}\n",
        d.kind, d.domain_mode, d.seed, r.mean_r2, r.train_runtime_s, r.predict_runtime_s
    )
}

pub fn comparison_csv(table: &ComparisonTable) -> String {
    let mut out = COMPARISON_COLUMNS.join(",") + "\n";
    for c in &table.cells {
        out.push_str(&report_row(c));
    }
    out
}

pub fn summary_csv(table: &ComparisonTable) -> String {
    let mut out = SUMMARY_COLUMNS.join(",") + "\n";
    for s in &table.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.kind, s.domain_mode, s.n_seeds, s.mean_r2_mean, s.mean_r2_min, s.mean_r2_max, s.train_runtime_s_mean
        );
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, EvalError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| EvalError::Invalid(format!("serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// One report as pretty JSON or as a single comparison-schema CSV row.
pub fn emit_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let text = match format {
        ReportFormat::Json => to_json(report)?,
        ReportFormat::Csv => COMPARISON_COLUMNS.join(",") + "\n" + &report_row(report),
    };
    write_file(path, &text)
}

pub fn emit_table(table: &ComparisonTable, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let text = match format {
        ReportFormat::Json => to_json(table)?,
        ReportFormat::Csv => comparison_csv(table),
    };
    write_file(path, &text)
}

/// Writes `scatter_<kind>_<mode>_seed<seed>_m<j>.csv` (columns
/// `actual,predicted`) for each target into `dir`.
pub fn emit_scatter(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let d = &report.descriptor;
    let mut paths = Vec::new();
    for (j, pairs) in report.scatter.iter().enumerate() {
        let path = dir.join(format!("scatter_{}_{}_seed{}_m{j}.csv", d.kind, d.domain_mode, d.seed));
        let mut text = String::from("actual,predicted\n");
        for (a, p) in pairs {
            let _ = writeln!(text, "{a},{p}");
        }
        write_file(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// One masked and reconstructed curve; `masked_input` is `None` at masked
/// positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveExample {
    pub id: String,
    pub strain: Vec<f64>,
    pub truth: Vec<f64>,
    pub masked_input: Vec<Option<f64>>,
    pub reconstruction: Vec<f64>,
}

/// Masks `samples` with a generator seeded by `mask_seed` and reconstructs
/// them (observed points copied through).
pub fn reconstruction_examples(
    model: &ReconstructorModel,
    samples: &[Sample],
    mask_seed: u64,
) -> Result<Vec<CurveExample>, EvalError> {
    let masked = mask_all(samples, model.config.mask_range, mask_seed)?;
    let recon = model.reconstruct_batch(&masked, true)?;
    Ok(samples
        .iter()
        .zip(masked)
        .zip(recon)
        .map(|((s, m), r)| CurveExample {
            id: s.id.clone(),
            strain: model.grid.points().to_vec(),
            truth: s.stress.clone(),
            masked_input: m.values.iter().zip(&m.mask).map(|(v, seen)| seen.then_some(*v)).collect(),
            reconstruction: r,
        })
        .collect())
}

/// Writes `curve_example_<k>.csv` (columns
/// `strain,truth,masked_input,reconstruction`) per example into `dir`.
pub fn emit_curve_examples(examples: &[CurveExample], dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let mut paths = Vec::new();
    for (k, ex) in examples.iter().enumerate() {
        let path = dir.join(format!("curve_example_{k}.csv"));
        let mut text = String::from("strain,truth,masked_input,reconstruction\n");
        for i in 0..ex.strain.len() {
            let masked = ex.masked_input[i].map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(text, "{},{},{masked},{}", ex.strain[i], ex.truth[i], ex.reconstruction[i]);
        }
        write_file(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}
