//! Where every artifact lives under the data directory, and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lingmark::markers::MarkerKind;
use lingmark::stats::Behaviour;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn sessions(&self) -> PathBuf {
        self.root.join("sessions.jsonl")
    }

    pub fn records(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn class_counts(&self) -> PathBuf {
        self.root.join("class_counts.json")
    }

    pub fn class_counts_md(&self) -> PathBuf {
        self.root.join("class_counts.md")
    }

    pub fn manifest(&self, command: &str, run_id: &str) -> PathBuf {
        self.root
            .join("manifests")
            .join(format!("{command}-{run_id}.json"))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn train_record(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id).join("train.json")
    }

    pub fn registry(&self) -> PathBuf {
        self.root.join("registry")
    }

    pub fn report_md(&self, run_id: &str) -> PathBuf {
        self.root.join("reports").join(format!("{run_id}.md"))
    }

    pub fn predictions(&self, run_id: &str) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{run_id}.predictions.jsonl"))
    }

    pub fn marker_records(&self, kind: MarkerKind) -> PathBuf {
        self.root.join("markers").join(format!("{kind}.jsonl"))
    }

    pub fn marker_summary(&self, kind: MarkerKind) -> PathBuf {
        self.root
            .join("markers")
            .join(format!("{kind}.summary.json"))
    }

    pub fn marker_summary_md(&self, kind: MarkerKind) -> PathBuf {
        self.root.join("markers").join(format!("{kind}.summary.md"))
    }

    pub fn longitudinal(&self, kind: MarkerKind, behaviour: Behaviour, ext: &str) -> PathBuf {
        self.root
            .join("longitudinal")
            .join(format!("{kind}-{behaviour}.{ext}"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }

    /// `path` if it exists, otherwise an error naming the command that makes it.
    pub fn require(&self, path: PathBuf, producer: impl Into<String>) -> Result<PathBuf, CliError> {
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Missing {
                path,
                producer: producer.into(),
            })
        }
    }

    /// `path` relative to the data root, for portable records.
    pub fn relative(&self, path: &Path) -> PathBuf {
        path.strip_prefix(&self.root).unwrap_or(path).to_path_buf()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

/// What a command read and wrote, with content digests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start(command: &str, run_id: &str, seed: Option<u64>, config: impl Serialize) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                run_id: run_id.to_string(),
                command: command.to_string(),
                seed,
                config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: now(),
                finished_unix: 0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.outputs.push(digest(path)?);
        Ok(())
    }

    pub fn finish(mut self, layout: &Layout) -> Result<RunManifest, CliError> {
        self.manifest.finished_unix = now();
        let path = layout.manifest(&self.manifest.command, &self.manifest.run_id);
        write_json(&path, &self.manifest)?;
        log::info!("manifest written to {}", path.display());
        Ok(self.manifest)
    }
}
