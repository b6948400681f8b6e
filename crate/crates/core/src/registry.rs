//! Flat directory of experiment reports, one JSON file per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::ExperimentReport;
use crate::formulation::Strategy;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid run id {0:?}")]
    InvalidRunId(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub run_id: String,
    pub seed: u64,
    pub report: ExperimentReport,
    /// One checkpoint directory per repeat; empty for the random-rate baseline.
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
}

impl RegistryEntry {
    pub fn strategy(&self) -> Strategy {
        self.report.strategy
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    dir: PathBuf,
}

impl Registry {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Registry { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, run_id: &str) -> Result<PathBuf, RegistryError> {
        let ok = !run_id.is_empty()
            && run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !run_id.starts_with('.');
        if !ok {
            return Err(RegistryError::InvalidRunId(run_id.to_string()));
        }
        Ok(self.dir.join(format!("{run_id}.json")))
    }

    /// Writes `entry`, replacing any previous entry with the same run id.
    pub fn put(&self, entry: &RegistryEntry) -> Result<PathBuf, RegistryError> {
        let path = self.path_for(&entry.run_id)?;
        let json = serde_json::to_string_pretty(entry).map_err(std::io::Error::from)?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn get(&self, run_id: &str) -> Result<Option<RegistryEntry>, RegistryError> {
        let path = self.path_for(run_id)?;
        if !path.exists() {
            return Ok(None);
        }
        read_entry(&path).map(Some)
    }

    /// All entries ordered by run id.
    pub fn entries(&self) -> Result<Vec<RegistryEntry>, RegistryError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| read_entry(p)).collect()
    }

    /// Trained entry with the highest macro F1; ties go to the smaller run id.
    pub fn best_by_macro_f1(&self) -> Result<Option<RegistryEntry>, RegistryError> {
        let mut best: Option<RegistryEntry> = None;
        for e in self.entries()? {
            if e.strategy() == Strategy::RandomRate {
                continue;
            }
            if best
                .as_ref()
                .is_none_or(|b| e.report.mean.macro_f1 > b.report.mean.macro_f1)
            {
                best = Some(e);
            }
        }
        Ok(best)
    }

    /// Most recent entry for `strategy` by run id order.
    pub fn latest(&self, strategy: Strategy) -> Result<Option<RegistryEntry>, RegistryError> {
        Ok(self
            .entries()?
            .into_iter()
            .filter(|e| e.strategy() == strategy)
            .last())
    }

    /// The row deviations are reported against.
    pub fn reference(&self) -> Result<Option<RegistryEntry>, RegistryError> {
        self.latest(Strategy::StandardFinetune)
    }
}

fn read_entry(path: &Path) -> Result<RegistryEntry, RegistryError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| RegistryError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
