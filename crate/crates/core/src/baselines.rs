//! Comparison markers: adjacent-utterance semantic similarity and word-level
//! fluency, each behind a pluggable scorer.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chat::SessionRecord;
use crate::eval::fnv1a;
use crate::vocab::split_words;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("need at least 2 utterances, got {0}")]
    TooFewUtterances(usize),
    #[error("no scorable words in the session")]
    NoWords,
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("embedding dimensions differ ({0} and {1})")]
    DimensionMismatch(usize, usize),
    #[error("no precomputed score for utterance {0:?}")]
    Missing(String),
    #[error("scorer returned {got} scores for {expected} words")]
    WordCount { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait EmbeddingScorer {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BaselineError>;
}

pub trait WordFluencyScorer {
    /// One fluency probability in `[0, 1]` per word of [`scorable_words`].
    fn score(&self, text: &str) -> Result<Vec<f64>, BaselineError>;
}

/// Word tokens of an utterance, punctuation dropped.
pub fn scorable_words(text: &str) -> Vec<String> {
    split_words(text)
        .into_iter()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, BaselineError> {
    if a.len() != b.len() {
        return Err(BaselineError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(BaselineError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity of adjacent utterance embeddings; higher means more
/// thematically consistent speech.
pub fn incoherence_marker<S: EmbeddingScorer + ?Sized>(
    texts: &[&str],
    scorer: &S,
) -> Result<f64, BaselineError> {
    if texts.len() < 2 {
        return Err(BaselineError::TooFewUtterances(texts.len()));
    }
    let embeddings = texts
        .iter()
        .map(|t| scorer.embed(t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    for w in embeddings.windows(2) {
        total += cosine(&w[0], &w[1])?;
    }
    Ok(total / (texts.len() - 1) as f64)
}

/// Mean word fluency within each utterance, then the mean over utterances;
/// higher means fewer disfluent patterns. Utterances without words are skipped.
pub fn word_fluency_marker<S: WordFluencyScorer + ?Sized>(
    texts: &[&str],
    scorer: &S,
) -> Result<f64, BaselineError> {
    let mut per_utterance = Vec::new();
    for t in texts {
        let n_words = scorable_words(t).len();
        if n_words == 0 {
            continue;
        }
        let scores = scorer.score(t)?;
        if scores.len() != n_words {
            return Err(BaselineError::WordCount {
                expected: n_words,
                got: scores.len(),
            });
        }
        per_utterance.push(scores.iter().sum::<f64>() / n_words as f64);
    }
    if per_utterance.is_empty() {
        return Err(BaselineError::NoWords);
    }
    Ok(per_utterance.iter().sum::<f64>() / per_utterance.len() as f64)
}

/// Included participant utterance texts of a session, in order.
pub fn session_texts(session: &SessionRecord) -> Vec<&str> {
    session.included().map(|(u, _)| u.text.as_str()).collect()
}

/// Bag of words hashed into a fixed number of buckets.
#[derive(Debug, Clone, Copy)]
pub struct HashedBagOfWords {
    pub dim: usize,
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        HashedBagOfWords { dim: 256 }
    }
}

impl EmbeddingScorer for HashedBagOfWords {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BaselineError> {
        let mut v = vec![0.0; self.dim];
        for w in scorable_words(text) {
            let h = fnv1a(w.to_lowercase().as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        Ok(v)
    }
}

/// Flags a word that immediately repeats the previous word as disfluent.
#[derive(Debug, Clone, Copy, Default)]
pub struct RepetitionFluency;

impl WordFluencyScorer for RepetitionFluency {
    fn score(&self, text: &str) -> Result<Vec<f64>, BaselineError> {
        let words = scorable_words(text);
        Ok(words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                if i > 0 && words[i - 1].eq_ignore_ascii_case(w) {
                    0.0
                } else {
                    1.0
                }
            })
            .collect())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct EmbeddingLine {
    text: String,
    embedding: Vec<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct WordScoreLine {
    text: String,
    scores: Vec<f64>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BaselineError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| BaselineError::Format {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Embeddings produced offline by an external model, one JSON object
/// `{"text": ..., "embedding": [...]}` per line.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let rows: Vec<EmbeddingLine> = read_jsonl(path)?;
        Ok(PrecomputedEmbeddings {
            table: rows.into_iter().map(|r| (r.text, r.embedding)).collect(),
        })
    }
}

impl EmbeddingScorer for PrecomputedEmbeddings {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BaselineError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| BaselineError::Missing(text.to_string()))
    }
}

/// Word fluency probabilities produced offline, one JSON object
/// `{"text": ..., "scores": [...]}` per line.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedWordScores {
    table: HashMap<String, Vec<f64>>,
}

impl PrecomputedWordScores {
    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let rows: Vec<WordScoreLine> = read_jsonl(path)?;
        for (i, r) in rows.iter().enumerate() {
            if r.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(BaselineError::Format {
                    line: i + 1,
                    message: "word scores must lie in [0, 1]".into(),
                });
            }
        }
        Ok(PrecomputedWordScores {
            table: rows.into_iter().map(|r| (r.text, r.scores)).collect(),
        })
    }
}

impl WordFluencyScorer for PrecomputedWordScores {
    fn score(&self, text: &str) -> Result<Vec<f64>, BaselineError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| BaselineError::Missing(text.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    /// Looks the embedding up by text.
    struct Fixed(Vec<(&'static str, Vec<f64>)>);

    impl EmbeddingScorer for Fixed {
        fn embed(&self, text: &str) -> Result<Vec<f64>, BaselineError> {
            Ok(self.0.iter().find(|(t, _)| *t == text).unwrap().1.clone())
        }
    }

    struct Words(Vec<(&'static str, Vec<f64>)>);

    impl WordFluencyScorer for Words {
        fn score(&self, text: &str) -> Result<Vec<f64>, BaselineError> {
            Ok(self.0.iter().find(|(t, _)| *t == text).unwrap().1.clone())
        }
    }

    #[test]
    fn incoherence_values() {
        let same = Fixed(vec![("a", vec![1.0, 2.0]), ("b", vec![2.0, 4.0])]);
        assert!((incoherence_marker(&["a", "b", "a"], &same).unwrap() - 1.0).abs() < 1e-12);
        let orth = Fixed(vec![("a", vec![1.0, 0.0]), ("b", vec![0.0, 3.0])]);
        assert_eq!(incoherence_marker(&["a", "b"], &orth).unwrap(), 0.0);
        // cos(a,b) = 0.4 and cos(b,c) = 0.2 by construction on unit vectors
        let s = |t: f64| vec![t.cos(), t.sin()];
        let ab = 0.4f64.acos();
        let bc = 0.2f64.acos();
        let three = Fixed(vec![("a", s(0.0)), ("b", s(ab)), ("c", s(ab + bc))]);
        assert!((incoherence_marker(&["a", "b", "c"], &three).unwrap() - 0.3).abs() < 1e-12);
        assert!(matches!(
            incoherence_marker(&["a"], &three),
            Err(BaselineError::TooFewUtterances(1))
        ));
        let zero = Fixed(vec![("a", vec![0.0, 0.0]), ("b", vec![1.0, 0.0])]);
        assert!(matches!(
            incoherence_marker(&["a", "b"], &zero),
            Err(BaselineError::ZeroNorm)
        ));
    }

    #[test]
    fn word_fluency_values() {
        let all_one = Words(vec![("x y z", vec![1.0; 3])]);
        assert_eq!(word_fluency_marker(&["x y z"], &all_one).unwrap(), 1.0);
        let nested = Words(vec![("x y z", vec![1.0, 0.5, 0.5])]);
        assert!((word_fluency_marker(&["x y z"], &nested).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let two = Words(vec![("x", vec![0.9]), ("y", vec![0.7])]);
        assert!((word_fluency_marker(&["x", "y"], &two).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(
            word_fluency_marker(&[], &two),
            Err(BaselineError::NoWords)
        ));
    }

    #[test]
    fn order_sensitivity() {
        let texts = [
            "the boy takes a cookie",
            "the boy falls",
            "water on the floor",
        ];
        let permuted = [texts[0], texts[2], texts[1]];
        let emb = HashedBagOfWords::default();
        let a = incoherence_marker(&texts, &emb).unwrap();
        let b = incoherence_marker(&permuted, &emb).unwrap();
        assert!((a - b).abs() > 1e-6);
        let wf = RepetitionFluency;
        assert_eq!(
            word_fluency_marker(&texts, &wf).unwrap(),
            word_fluency_marker(&permuted, &wf).unwrap()
        );
    }

    #[test]
    fn toy_scorers() {
        let emb = HashedBagOfWords::default();
        assert_eq!(emb.embed("the jar").unwrap(), emb.embed("the jar").unwrap());
        assert_eq!(
            RepetitionFluency
                .score("his his sister's asking .")
                .unwrap(),
            vec![1.0, 0.0, 1.0, 1.0]
        );
        let m = word_fluency_marker(&["the the boy"], &RepetitionFluency).unwrap();
        assert!((m - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn precomputed_scorers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.jsonl");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, r#"{{"text": "a", "embedding": [1.0, 0.0]}}"#).unwrap();
        writeln!(f, r#"{{"text": "b", "embedding": [1.0, 1.0]}}"#).unwrap();
        let e = PrecomputedEmbeddings::load(&p).unwrap();
        assert!((incoherence_marker(&["a", "b"], &e).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(e.embed("c"), Err(BaselineError::Missing(_))));

        let q = dir.path().join("words.jsonl");
        std::fs::write(&q, "{\"text\": \"a b\", \"scores\": [1.0, 1.5]}\n").unwrap();
        assert!(matches!(
            PrecomputedWordScores::load(&q),
            Err(BaselineError::Format { line: 1, .. })
        ));
    }
}
