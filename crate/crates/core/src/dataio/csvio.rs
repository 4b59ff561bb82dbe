//! CSV ingestion and emission.
//!
//! `samples.csv`: `id,m0,m1,m2,m3[,f01..f35]`.
//! `curves.csv`, wide: `id,s001..sNNN`, one row per sample. When `NNN`
//! differs from the canonical grid, the native grid is read from a
//! `grid.json` beside the curves file. Long: `id,strain,stress`, rows of one
//! id contiguous with strictly increasing strain.
//! `grid.json`: `{"points": [...]}`.
//!
//! Emitted floats use Rust's shortest round-trip formatting, so output is
//! byte-deterministic and reloads bit-exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, Sample, StrainGrid, N_AUX, N_MINKOWSKI};

const MINKOWSKI_COLUMNS: [&str; N_MINKOWSKI] = ["m0", "m1", "m2", "m3"];

fn aux_column(k: usize) -> String {
    format!("f{:02}", k + 1)
}

fn stress_column(k: usize) -> String {
    format!("s{:03}", k + 1)
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::io(path, io),
        other => DataError::Parse {
            file: file_label(path),
            line,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn parse_cell(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64, DataError> {
    let raw = rec.get(col).unwrap_or("");
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::Parse {
            file: file_label(path),
            line: record_line(rec),
            column: name.to_string(),
            message: format!("`{raw}` is not a finite number"),
        }),
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

struct SampleRow {
    id: String,
    minkowski: [f64; N_MINKOWSKI],
    aux: Option<Vec<f64>>,
}

fn read_samples(path: &Path) -> Result<Vec<SampleRow>, DataError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let schema = |message: String| DataError::Schema {
        file: file_label(path),
        message,
    };
    let id_col = column_index(&headers, "id").ok_or_else(|| schema("missing column `id`".into()))?;
    let mut m_cols = [0; N_MINKOWSKI];
    for (slot, name) in m_cols.iter_mut().zip(MINKOWSKI_COLUMNS) {
        *slot = column_index(&headers, name).ok_or_else(|| schema(format!("missing column `{name}`")))?;
    }
    let aux_cols: Vec<Option<usize>> = (0..N_AUX).map(|k| column_index(&headers, &aux_column(k))).collect();
    let n_aux = aux_cols.iter().flatten().count();
    if n_aux != 0 && n_aux != N_AUX {
        return Err(schema(format!(
            "auxiliary features must be all of f01..f{N_AUX} or none; found {n_aux}"
        )));
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(DataError::Parse {
                file: file_label(path),
                line: record_line(&rec),
                column: "id".into(),
                message: "empty id".into(),
            });
        }
        let mut minkowski = [0.0; N_MINKOWSKI];
        for (k, (&c, name)) in m_cols.iter().zip(MINKOWSKI_COLUMNS).enumerate() {
            minkowski[k] = parse_cell(path, &rec, c, name)?;
        }
        let aux = if n_aux == N_AUX {
            let mut v = Vec::with_capacity(N_AUX);
            for (k, c) in aux_cols.iter().enumerate() {
                v.push(parse_cell(path, &rec, c.expect("all present"), &aux_column(k))?);
            }
            Some(v)
        } else {
            None
        };
        rows.push(SampleRow { id, minkowski, aux });
    }
    Ok(rows)
}

fn read_grid(path: &Path) -> Result<StrainGrid, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DataError::Schema {
        file: file_label(path),
        message: e.to_string(),
    })
}

/// Curves keyed by id, each already on `canonical`, plus the file order.
fn read_curves(path: &Path, canonical: &StrainGrid) -> Result<HashMap<String, (u64, Vec<f64>)>, DataError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let schema = |message: String| DataError::Schema {
        file: file_label(path),
        message,
    };
    if headers.get(0) != Some("id") {
        return Err(schema("first column must be `id`".into()));
    }
    let long = headers.len() == 3 && headers.get(1) == Some("strain") && headers.get(2) == Some("stress");
    let mut out: HashMap<String, (u64, Vec<f64>)> = HashMap::new();
    let duplicate = |id: &str, line: u64| DataError::Parse {
        file: file_label(path),
        line,
        column: "id".into(),
        message: format!("duplicate curve id `{id}`"),
    };

    if long {
        // Contiguous runs of one id form one curve.
        let mut current: Option<(String, u64, Vec<f64>, Vec<f64>)> = None;
        let finish = |cur: (String, u64, Vec<f64>, Vec<f64>),
                          out: &mut HashMap<String, (u64, Vec<f64>)>|
         -> Result<(), DataError> {
            let (id, line, strains, stress) = cur;
            let native = StrainGrid::new(strains).map_err(|e| DataError::Parse {
                file: file_label(path),
                line,
                column: "strain".into(),
                message: format!("curve `{id}`: {e}"),
            })?;
            let values = native.resample(&stress, canonical).map_err(|e| DataError::Parse {
                file: file_label(path),
                line,
                column: "strain".into(),
                message: format!("curve `{id}`: {e}"),
            })?;
            if out.insert(id.clone(), (line, values)).is_some() {
                return Err(duplicate(&id, line));
            }
            Ok(())
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let id = rec.get(0).unwrap_or("").to_string();
            let strain = parse_cell(path, &rec, 1, "strain")?;
            let stress = parse_cell(path, &rec, 2, "stress")?;
            match current.as_mut() {
                Some(cur) if cur.0 == id => {
                    cur.2.push(strain);
                    cur.3.push(stress);
                }
                _ => {
                    if let Some(done) = current.take() {
                        finish(done, &mut out)?;
                    }
                    current = Some((id, record_line(&rec), vec![strain], vec![stress]));
                }
            }
        }
        if let Some(done) = current.take() {
            finish(done, &mut out)?;
        }
        return Ok(out);
    }

    let width = headers.len() - 1;
    for k in 0..width {
        if headers.get(k + 1) != Some(stress_column(k).as_str()) {
            return Err(schema(format!("expected column `{}` at position {}", stress_column(k), k + 2)));
        }
    }
    let native = if width == canonical.len() {
        None
    } else {
        let grid_path = path.with_file_name("grid.json");
        if !grid_path.exists() {
            return Err(schema(format!(
                "{width} stress columns but the canonical grid has {} points and no grid.json describes the native grid",
                canonical.len()
            )));
        }
        let g = read_grid(&grid_path)?;
        if g.len() != width {
            return Err(schema(format!("grid.json has {} points for {width} stress columns", g.len())));
        }
        Some(g)
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id = rec.get(0).unwrap_or("").to_string();
        let line = record_line(&rec);
        let mut values = Vec::with_capacity(width);
        for k in 0..width {
            values.push(parse_cell(path, &rec, k + 1, &stress_column(k))?);
        }
        if let Some(g) = &native {
            values = g.resample(&values, canonical)?;
        }
        if out.insert(id.clone(), (line, values)).is_some() {
            return Err(duplicate(&id, line));
        }
    }
    Ok(out)
}

/// Loads samples and curves, resampling curves onto `canonical`. Samples keep
/// the order of `samples.csv`.
pub fn load_dataset(samples_path: &Path, curves_path: &Path, canonical: &StrainGrid) -> Result<Dataset, DataError> {
    let rows = read_samples(samples_path)?;
    let mut curves = read_curves(curves_path, canonical)?;
    let mut samples = Vec::with_capacity(rows.len());
    let mut seen = std::collections::HashSet::new();
    for row in rows {
        if !seen.insert(row.id.clone()) {
            return Err(DataError::Schema {
                file: file_label(samples_path),
                message: format!("duplicate sample id `{}`", row.id),
            });
        }
        let (_, stress) = curves.remove(&row.id).ok_or_else(|| DataError::Schema {
            file: file_label(curves_path),
            message: format!("no curve for sample id `{}`", row.id),
        })?;
        samples.push(Sample {
            id: row.id,
            minkowski: row.minkowski,
            aux: row.aux,
            stress,
        });
    }
    if let Some((id, (line, _))) = curves.iter().min_by_key(|(_, (line, _))| *line) {
        return Err(DataError::Parse {
            file: file_label(curves_path),
            line: *line,
            column: "id".into(),
            message: format!("curve id `{id}` has no matching sample"),
        });
    }
    log::info!("loaded {} samples from {}", samples.len(), samples_path.display());
    Dataset::new(canonical.clone(), samples)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let mut f = File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(path, e))
}

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).map_err(|e| DataError::Invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| DataError::Invalid(e.to_string()))
}

pub fn samples_csv(ds: &Dataset) -> Result<Vec<u8>, DataError> {
    let with_aux = !ds.is_empty() && ds.samples.iter().all(|s| s.aux.is_some());
    let mut header: Vec<String> = std::iter::once("id".to_string())
        .chain(MINKOWSKI_COLUMNS.iter().map(|s| s.to_string()))
        .collect();
    if with_aux {
        header.extend((0..N_AUX).map(aux_column));
    }
    let rows = ds.samples.iter().map(|s| {
        let mut r = vec![s.id.clone()];
        r.extend(s.minkowski.iter().map(|v| v.to_string()));
        if with_aux {
            r.extend(s.aux.as_ref().expect("checked").iter().map(|v| v.to_string()));
        }
        r
    });
    csv_bytes(std::iter::once(header).chain(rows))
}

pub fn curves_csv(ds: &Dataset) -> Result<Vec<u8>, DataError> {
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..ds.grid.len()).map(stress_column))
        .collect();
    let rows = ds.samples.iter().map(|s| {
        std::iter::once(s.id.clone())
            .chain(s.stress.iter().map(|v| v.to_string()))
            .collect()
    });
    csv_bytes(std::iter::once(header).chain(rows))
}

/// Writes `samples.csv`, `curves.csv` and `grid.json` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    write_file(&dir.join("samples.csv"), &samples_csv(ds)?)?;
    write_file(&dir.join("curves.csv"), &curves_csv(ds)?)?;
    let grid = serde_json::to_vec_pretty(&ds.grid).map_err(|e| DataError::Invalid(e.to_string()))?;
    write_file(&dir.join("grid.json"), &grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn small_grid() -> StrainGrid {
        StrainGrid::new(vec![0.0, 0.1, 0.2]).unwrap()
    }

    #[test]
    fn two_sample_wide_fixture_loads_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "samples.csv", "id,m0,m1,m2,m3\nb,0.1,2,0.5,-1\na,0.2,3,0.1,1\n");
        let c = write(dir.path(), "curves.csv", "id,s001,s002,s003\na,0,1,2\nb,0,0.5,0.7\n");
        let ds = load_dataset(&s, &c, &small_grid()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].id, "b");
        assert_eq!(ds.samples[0].stress, vec![0.0, 0.5, 0.7]);
        assert_eq!(ds.samples[1].minkowski, [0.2, 3.0, 0.1, 1.0]);
        assert!(ds.samples[0].aux.is_none());
    }

    #[test]
    fn long_format_is_resampled_by_linear_interpolation() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "samples.csv", "id,m0,m1,m2,m3\nx,0.1,2,0.5,-1\n");
        let c = write(
            dir.path(),
            "curves.csv",
            "id,strain,stress\nx,0,0\nx,0.08,4\nx,0.2,1\n",
        );
        let target = StrainGrid::new(vec![0.0, 0.02, 0.1, 0.2]).unwrap();
        let ds = load_dataset(&s, &c, &target).unwrap();
        let v = &ds.samples[0].stress;
        assert!((v[1] - 1.0).abs() < 1e-12);
        // between (0.08, 4) and (0.2, 1): 4 - 3 * 0.02 / 0.12
        assert!((v[2] - 3.5).abs() < 1e-12);
        assert_eq!(v[3], 1.0);
    }

    #[test]
    fn non_numeric_cell_names_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "samples.csv", "id,m0,m1,m2,m3\na,0.1,2,0.5,-1\n");
        let c = write(dir.path(), "curves.csv", "id,s001,s002,s003\na,0,oops,2\n");
        match load_dataset(&s, &c, &small_grid()) {
            Err(DataError::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "s002");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violations_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = write(dir.path(), "curves.csv", "id,s001,s002,s003\na,0,1,2\n");
        let missing = write(dir.path(), "s1.csv", "id,m0,m1,m3\na,0.1,2,-1\n");
        assert!(matches!(load_dataset(&missing, &c, &small_grid()), Err(DataError::Schema { .. })));
        let dup = write(dir.path(), "s2.csv", "id,m0,m1,m2,m3\na,0.1,2,0.5,-1\na,0.1,2,0.5,-1\n");
        assert!(load_dataset(&dup, &c, &small_grid()).is_err());
        let orphan = write(dir.path(), "s3.csv", "id,m0,m1,m2,m3\nz,0.1,2,0.5,-1\n");
        assert!(load_dataset(&orphan, &c, &small_grid()).is_err());
        let partial_aux = write(dir.path(), "s4.csv", "id,m0,m1,m2,m3,f01\na,0.1,2,0.5,-1,3\n");
        assert!(load_dataset(&partial_aux, &c, &small_grid()).is_err());
    }

    #[test]
    fn write_then_load_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let grid = StrainGrid::uniform(4, 0.0, 0.2).unwrap();
        let ds = Dataset::new(
            grid.clone(),
            vec![Sample {
                id: "s1".into(),
                minkowski: [0.1 + 0.2, 1.0 / 3.0, -2.5e-7, 7.0],
                aux: Some((0..N_AUX).map(|k| (k as f64).sin()).collect()),
                stress: vec![0.0, 0.1, 1.0 / 7.0, 2.0],
            }],
        )
        .unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&dir.path().join("samples.csv"), &dir.path().join("curves.csv"), &grid).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn wide_file_on_native_grid_uses_grid_json() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "samples.csv", "id,m0,m1,m2,m3\na,0.1,2,0.5,-1\n");
        let c = write(dir.path(), "curves.csv", "id,s001,s002\na,0,2\n");
        assert!(load_dataset(&s, &c, &small_grid()).is_err());
        write(dir.path(), "grid.json", r#"{"points": [0.0, 0.2]}"#);
        let ds = load_dataset(&s, &c, &small_grid()).unwrap();
        assert!((ds.samples[0].stress[1] - 1.0).abs() < 1e-12);
    }
}
