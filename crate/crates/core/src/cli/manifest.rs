//! Run manifest: every artifact with its content hash and the digest of
//! the configuration that produced it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sha256_hex;
use crate::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "llh-run";
const VERSION: u32 = 1;

/// Stamp embedded in every JSON artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
}

/// A JSON artifact body with its provenance stamp as an extra top-level
/// key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Sorted by path.
    pub artifacts: Vec<ArtifactEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            artifacts: Vec::new(),
        }
    }
}

fn relative(run_dir: &Path, path: &Path) -> Result<String, Error> {
    let rel = path
        .strip_prefix(run_dir)
        .map_err(|_| Error::Config(format!("{} is outside the run directory", path.display())))?;
    Ok(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"))
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self, Error> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Provenance(format!("{}: {e}", path.display())))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::Provenance(format!("{}: not a {FORMAT} v{VERSION} manifest", path.display())));
        }
        Ok(m)
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), Error> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Hashes `path` and inserts or replaces its entry.
    pub fn record(&mut self, run_dir: &Path, path: &Path, stamp: &Provenance) -> Result<(), Error> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let entry = ArtifactEntry {
            path: relative(run_dir, path)?,
            sha256: sha256_hex(&bytes),
            command: stamp.command.clone(),
            config_digest: stamp.config_digest.clone(),
            seed: stamp.seed,
        };
        self.artifacts.retain(|a| a.path != entry.path);
        self.artifacts.push(entry);
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    /// Checks that every artifact exists with its recorded hash and that
    /// JSON artifacts outside `data/` carry a matching provenance stamp.
    /// Dataset files keep their interchange schema. Returns the number
    /// of artifacts checked.
    pub fn verify(&self, run_dir: &Path) -> Result<usize, Error> {
        let mut problems = Vec::new();
        for a in &self.artifacts {
            let path = run_dir.join(&a.path);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) => {
                    problems.push(format!("{}: {e}", a.path));
                    continue;
                }
            };
            if sha256_hex(&bytes) != a.sha256 {
                problems.push(format!("{}: content hash differs from the manifest", a.path));
                continue;
            }
            if a.path.ends_with(".json") && !a.path.starts_with("data/") {
                let stamp = serde_json::from_slice::<serde_json::Value>(&bytes)
                    .ok()
                    .and_then(|v| v.get("provenance").cloned())
                    .and_then(|p| serde_json::from_value::<Provenance>(p).ok());
                match stamp {
                    Some(p) if p.config_digest == a.config_digest && p.seed == a.seed => {}
                    Some(_) => problems.push(format!("{}: embedded provenance disagrees with the manifest", a.path)),
                    None => problems.push(format!("{}: no provenance stamp", a.path)),
                }
            }
        }
        if problems.is_empty() {
            Ok(self.artifacts.len())
        } else {
            Err(Error::Provenance(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path();
        let stamp = Provenance {
            command: "t".into(),
            config_digest: "d".into(),
            seed: 1,
        };
        let json = run.join("a.json");
        let body = serde_json::json!({"x": 1});
        fs::write(&json, serde_json::to_string(&Stamped { provenance: stamp.clone(), body }).unwrap()).unwrap();
        let csv = run.join("b.csv");
        fs::write(&csv, "a\n1\n").unwrap();
        let mut m = Manifest::default();
        m.record(run, &json, &stamp).unwrap();
        m.record(run, &csv, &stamp).unwrap();
        m.save(run).unwrap();
        assert_eq!(Manifest::load(run).unwrap().verify(run).unwrap(), 2);

        fs::write(&csv, "a\n2\n").unwrap();
        assert!(matches!(m.verify(run), Err(Error::Provenance(_))));
        m.record(run, &csv, &stamp).unwrap();
        m.artifacts[0].config_digest = "other".into();
        assert!(m.verify(run).is_err());
    }
}
