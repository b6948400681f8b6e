//! Line-delimited interchange records, split manifests and class-count tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::chat::SessionRecord;
use crate::eval::LabeledUtterance;
use crate::label::{Cohort, DisorderLabel, NUM_LABELS};
use crate::split::{stratified_split, DatasetSplit, SplitError, SplitRatios};

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("record id {0:?} appears twice")]
    DuplicateId(String),
    #[error("manifest lists unknown record {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One included participant utterance with its session metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub subject_id: String,
    pub cohort: Cohort,
    pub visit: u32,
    pub utterance_text: String,
    pub label: DisorderLabel,
    pub mmse: Option<u8>,
    pub cdr: Option<f64>,
}

impl UtteranceRecord {
    pub fn labeled(&self) -> LabeledUtterance {
        LabeledUtterance {
            id: self.id.clone(),
            text: self.utterance_text.clone(),
            label: self.label,
        }
    }
}

pub fn record_id(subject_id: &str, visit: u32, k: usize) -> String {
    format!("{subject_id}-v{visit}-u{k}")
}

/// Flattens sessions into records, numbering included utterances per session.
pub fn records_from_sessions(sessions: &[SessionRecord]) -> Vec<UtteranceRecord> {
    let mut out = Vec::new();
    for s in sessions {
        for (k, (u, label)) in s.included().enumerate() {
            out.push(UtteranceRecord {
                id: record_id(&s.subject_id, s.visit_index, k),
                subject_id: s.subject_id.clone(),
                cohort: s.cohort,
                visit: s.visit_index,
                utterance_text: u.text.clone(),
                label,
                mmse: s.mmse,
                cdr: s.cdr,
            });
        }
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RecordError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RecordError::Format {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Record ids per split plus everything needed to reproduce the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub small_classes: Vec<DisorderLabel>,
}

impl SplitManifest {
    pub fn from_split(split: &DatasetSplit<String>) -> Self {
        let ids = |v: &[(String, DisorderLabel)]| v.iter().map(|(id, _)| id.clone()).collect();
        SplitManifest {
            seed: split.seed,
            ratios: split.ratios,
            train: ids(&split.train),
            validation: ids(&split.validation),
            test: ids(&split.test),
            small_classes: split.small_classes.clone(),
        }
    }

    /// Looks the listed ids up in `records`, preserving manifest order.
    pub fn resolve<'a>(
        &self,
        records: &'a [UtteranceRecord],
    ) -> Result<ResolvedSplit<'a>, RecordError> {
        let mut by_id = BTreeMap::new();
        for r in records {
            if by_id.insert(r.id.as_str(), r).is_some() {
                return Err(RecordError::DuplicateId(r.id.clone()));
            }
        }
        let pick = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| RecordError::UnknownId(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(ResolvedSplit {
            train: pick(&self.train)?,
            validation: pick(&self.validation)?,
            test: pick(&self.test)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedSplit<'a> {
    pub train: Vec<&'a UtteranceRecord>,
    pub validation: Vec<&'a UtteranceRecord>,
    pub test: Vec<&'a UtteranceRecord>,
}

/// Stratified split of the records by id.
pub fn split_records(
    records: &[UtteranceRecord],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitManifest, RecordError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(RecordError::DuplicateId(r.id.clone()));
        }
    }
    let items: Vec<(String, DisorderLabel)> =
        records.iter().map(|r| (r.id.clone(), r.label)).collect();
    Ok(SplitManifest::from_split(&stratified_split(
        &items, ratios, seed,
    )?))
}

/// One row of the per-cohort overview: subjects, sessions and class counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortCounts {
    pub cohort: Cohort,
    pub subjects: usize,
    pub sessions: usize,
    /// Indexed by [`DisorderLabel::index`].
    pub classes: [usize; NUM_LABELS],
}

/// Counts per cohort, over sessions that contribute at least one record.
pub fn class_counts(records: &[UtteranceRecord]) -> Vec<CohortCounts> {
    let mut acc: BTreeMap<Cohort, (BTreeSet<&str>, BTreeSet<(&str, u32)>, [usize; NUM_LABELS])> =
        BTreeMap::new();
    for r in records {
        let e = acc.entry(r.cohort).or_default();
        e.0.insert(&r.subject_id);
        e.1.insert((&r.subject_id, r.visit));
        e.2[r.label.index()] += 1;
    }
    acc.into_iter()
        .map(|(cohort, (subj, sess, classes))| CohortCounts {
            cohort,
            subjects: subj.len(),
            sessions: sess.len(),
            classes,
        })
        .collect()
}

pub fn render_class_counts(rows: &[CohortCounts]) -> String {
    let mut out =
        String::from("| Cohort | # Sub. | # Ses. | # Flt. | # Ano. | # Dis. | # Agr. |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.cohort,
            r.subjects,
            r.sessions,
            r.classes[0],
            r.classes[1],
            r.classes[2],
            r.classes[3]
        ));
    }
    out
}
