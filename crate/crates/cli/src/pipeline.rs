//! Loading prepared data and rebuilding trained classifiers.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use lingmark::backend::{MaskedLanguageModel, TinyConfig, TinyEncoder};
use lingmark::chat::SessionRecord;
use lingmark::eval::{Classifier, LabeledUtterance, SearchOutcome};
use lingmark::formulation::{DemonstrationPool, FormulationConfig, Formulator, Strategy};
use lingmark::records::{read_jsonl, SplitManifest, UtteranceRecord};
use lingmark::train::TrainingConfig;
use lingmark::vocab::Vocab;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::layout::{read_json, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// A saved encoder checkpoint given by `--encoder`.
    Pretrained,
    /// A small randomly initialised encoder.
    Tiny,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Pretrained => "pretrained",
            Backend::Tiny => "tiny",
        })
    }
}

pub struct Prepared {
    pub records: Vec<UtteranceRecord>,
    pub split: SplitManifest,
}

pub struct Splits {
    pub train: Vec<LabeledUtterance>,
    pub validation: Vec<LabeledUtterance>,
    pub test: Vec<LabeledUtterance>,
}

impl Prepared {
    pub fn load(layout: &Layout) -> Result<Self, CliError> {
        let records = read_jsonl(&layout.require(layout.records(), "lingmark prepare")?)?;
        let split = read_json(&layout.require(layout.split(), "lingmark prepare")?)?;
        Ok(Prepared { records, split })
    }

    pub fn splits(&self) -> Result<Splits, CliError> {
        let r = self.split.resolve(&self.records)?;
        let conv = |v: Vec<&UtteranceRecord>| {
            v.into_iter()
                .map(UtteranceRecord::labeled)
                .collect::<Vec<_>>()
        };
        let s = Splits {
            train: conv(r.train),
            validation: conv(r.validation),
            test: conv(r.test),
        };
        if s.train.is_empty() || s.validation.is_empty() || s.test.is_empty() {
            return Err(CliError::Validation(
                "prepared split has an empty train, validation or test part; the corpus is too small".into(),
            ));
        }
        Ok(s)
    }
}

pub fn load_sessions(layout: &Layout) -> Result<Vec<SessionRecord>, CliError> {
    Ok(read_jsonl(
        &layout.require(layout.sessions(), "lingmark prepare")?,
    )?)
}

/// Vocabulary for a fresh encoder: every prepared utterance plus template words.
pub fn corpus_vocab(records: &[UtteranceRecord], fc: &FormulationConfig) -> Vocab {
    let mut texts = fc.template_texts();
    texts.extend(records.iter().map(|r| r.utterance_text.clone()));
    Vocab::build(texts.iter().map(String::as_str))
}

pub fn formulator_for(model: &TinyEncoder) -> Result<Formulator, CliError> {
    Ok(Formulator::new(
        model.vocab().clone(),
        &FormulationConfig::default(),
        model.max_sequence_length(),
    )?)
}

/// Initial encoder for a backend. Every repeat of a pretrained run starts from
/// the same weights; tiny runs draw new weights per seed.
pub fn base_model(
    backend: Backend,
    encoder: Option<&Path>,
    records: &[UtteranceRecord],
) -> Result<TinyEncoder, CliError> {
    match (backend, encoder) {
        (Backend::Tiny, _) => Ok(TinyEncoder::new(
            corpus_vocab(records, &FormulationConfig::default()),
            TinyConfig::default(),
            0,
        )),
        (Backend::Pretrained, Some(path)) => {
            if !path.exists() {
                return Err(CliError::Validation(format!(
                    "encoder checkpoint {} does not exist",
                    path.display()
                )));
            }
            Ok(TinyEncoder::load(path)?)
        }
        (Backend::Pretrained, None) => Err(CliError::Validation(
            "--backend pretrained needs --encoder PATH".into(),
        )),
    }
}

pub fn fresh(backend: Backend, base: &TinyEncoder, seed: u64) -> TinyEncoder {
    match backend {
        Backend::Tiny => TinyEncoder::new(base.vocab().clone(), base.config(), seed),
        Backend::Pretrained => base.clone(),
    }
}

/// Everything `evaluate` and `markers` need to rebuild a trained run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub run_id: String,
    pub strategy: Strategy,
    pub backend: Backend,
    pub config: TrainingConfig,
    pub search: Option<SearchOutcome>,
    /// Model files relative to the data root, one per repeat.
    pub checkpoints: Vec<PathBuf>,
    pub frequencies: Option<[f64; 4]>,
}

impl TrainRecord {
    /// `producer` is the command to suggest when the run was never trained.
    pub fn load(layout: &Layout, run_id: &str, producer: &str) -> Result<Self, CliError> {
        let path = layout.require(layout.train_record(run_id), producer)?;
        read_json(&path)
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        self.config.seed.wrapping_add(repeat as u64)
    }

    /// Classifier of one repeat and the formulator matching its vocabulary.
    pub fn classifier(
        &self,
        layout: &Layout,
        repeat: usize,
        prepared: &Prepared,
        train: &[LabeledUtterance],
    ) -> Result<(Classifier<TinyEncoder>, Formulator), CliError> {
        if let Some(frequencies) = self.frequencies {
            let fc = FormulationConfig::default();
            let f = Formulator::new(
                corpus_vocab(&prepared.records, &fc),
                &fc,
                TinyConfig::default().max_len,
            )?;
            return Ok((Classifier::RandomRate { frequencies }, f));
        }
        let rel = self.checkpoints.get(repeat).ok_or_else(|| {
            CliError::Failed(format!("run {} has no repeat {repeat}", self.run_id))
        })?;
        let path = layout.require(
            layout.root.join(rel),
            format!("lingmark train --strategy {}", self.strategy),
        )?;
        let model = TinyEncoder::load(&path)?;
        let formulator = formulator_for(&model)?;
        let demonstrations =
            DemonstrationPool::new(train.iter().map(|u| (u.text.as_str(), u.label)));
        Ok((
            Classifier::Model {
                strategy: self.strategy,
                model,
                demonstrations,
            },
            formulator,
        ))
    }

    pub fn repeats(&self) -> usize {
        self.config.repeats
    }
}

pub fn run_id(strategy: Strategy, backend: Backend, seed: u64) -> String {
    format!("{strategy}-{backend}-s{seed}")
}
