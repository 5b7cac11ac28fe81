use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trimer::classical::ChaosSettings;
use trimer::meanfield::LockSettings;
use trimer::ode::Tolerances;
use trimer::{ModelParams, Thresholds, TorusGrid};

use crate::CliError;

/// Everything a run depends on. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: TorusGrid,
    pub tolerances: Tolerances,
    pub thresholds: Thresholds,
    pub lock: LockSettings,
    pub chaos: ChaosSettings,
    pub out_dir: PathBuf,
    /// Seed for multi-start searches.
    pub seed: u64,
    /// Number of starts in the classical energy range search.
    pub starts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            grid: TorusGrid::default(),
            tolerances: Tolerances::default(),
            thresholds: Thresholds::default(),
            lock: LockSettings::default(),
            chaos: ChaosSettings::default(),
            out_dir: PathBuf::from("out"),
            seed: 1,
            starts: 40,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        if m.n_particles == 0 {
            return Err(CliError::Config(
                "model.n_particles must be positive".into(),
            ));
        }
        if m.omega
            .iter()
            .chain(&m.x)
            .chain([&m.k12, &m.k23])
            .any(|v| !v.is_finite())
        {
            return Err(CliError::Config("model parameters must be finite".into()));
        }
        if self.grid.m1 < 4 || self.grid.m2 < 4 {
            return Err(CliError::Config(
                "grid must have at least 4 points per axis".into(),
            ));
        }
        if !(self.tolerances.rtol > 0.0 && self.tolerances.atol > 0.0) {
            return Err(CliError::Config("tolerances must be positive".into()));
        }
        if !(self.lock.window > 0.0 && self.lock.sample_dt > 0.0 && self.lock.t_end > 0.0) {
            return Err(CliError::Config(
                "lock window, sample_dt and t_end must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
