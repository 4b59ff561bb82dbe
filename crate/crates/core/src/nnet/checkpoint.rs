//! JSON checkpoint envelope for [`Network`]s.
//!
//! ```text
//! {
//!   "format": "llh-network",
//!   "version": 1,
//!   "input_width": 100,
//!   "layers": [{"kind": "linear", "width": 1024}, ...],
//!   "params": [{"rows": 100, "cols": 1024, "data": [...]}, ...],
//!   "running_stats": [{"mean": [...], "var": [...]}, ...],
//!   "optimizer": {"config": {...}, "step_count": 7500} | null,
//!   "schedule": {...} | null,
//!   "seed": 0
//! }
//! ```
//!
//! Parameters are written as decimal floats with round-trip precision, so
//! loading a checkpoint reproduces the network bit for bit.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::network::{LayerSpec, Model, Network, RunningStats};
use super::optim::{Optimizer, OptimizerConfig};
use super::params::ParamStore;
use super::schedule::ScheduleState;
use super::NnError;

pub const FORMAT: &str = "llh-network";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub config: OptimizerConfig,
    pub step_count: u64,
}

impl From<&Optimizer> for OptimizerSnapshot {
    fn from(o: &Optimizer) -> Self {
        Self {
            config: o.config.clone(),
            step_count: o.step_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Matrix>,
    pub running_stats: Vec<RunningStats>,
    pub optimizer: Option<OptimizerSnapshot>,
    pub schedule: Option<ScheduleState>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        net: &Network,
        optimizer: Option<&Optimizer>,
        schedule: Option<&ScheduleState>,
        seed: u64,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            input_width: net.input_width(),
            layers: net.layers().to_vec(),
            params: net.params().iter().cloned().collect(),
            running_stats: net.running_stats().to_vec(),
            optimizer: optimizer.map(OptimizerSnapshot::from),
            schedule: schedule.cloned(),
            seed,
        }
    }

    pub fn to_network(&self) -> Result<Network, NnError> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(NnError::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut store = ParamStore::new();
        for p in &self.params {
            if !p.is_finite() || p.len() != p.rows() * p.cols() {
                return Err(NnError::Config("checkpoint holds a malformed parameter tensor".into()));
            }
            store.push(p.clone());
        }
        Network::from_parts(
            self.input_width,
            self.layers.clone(),
            store,
            self.running_stats.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string(self).map_err(|e| NnError::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        serde_json::from_str(s).map_err(|e| NnError::Config(format!("checkpoint: {e}")))
    }
}
