use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Utterance-level language-disorder class.
///
/// The discriminant order (`Fluent`, `Anomia`, `Disfluency`, `Agrammatism`) is the
/// canonical class index used by every probability vector in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderLabel {
    Fluent,
    Anomia,
    Disfluency,
    Agrammatism,
}

pub const NUM_LABELS: usize = 4;

impl DisorderLabel {
    pub const ALL: [DisorderLabel; NUM_LABELS] = [
        DisorderLabel::Fluent,
        DisorderLabel::Anomia,
        DisorderLabel::Disfluency,
        DisorderLabel::Agrammatism,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DisorderLabel::Fluent => "fluent",
            DisorderLabel::Anomia => "anomia",
            DisorderLabel::Disfluency => "disfluency",
            DisorderLabel::Agrammatism => "agrammatism",
        }
    }

    /// The three disorder classes, i.e. everything except `Fluent`.
    pub fn disorders() -> [DisorderLabel; 3] {
        [
            DisorderLabel::Anomia,
            DisorderLabel::Disfluency,
            DisorderLabel::Agrammatism,
        ]
    }
}

impl fmt::Display for DisorderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown {kind} `{value}`")]
pub struct ParseEnumError {
    kind: &'static str,
    value: String,
}

impl ParseEnumError {
    pub(crate) fn new(kind: &'static str, value: &str) -> Self {
        ParseEnumError {
            kind,
            value: value.to_string(),
        }
    }
}

impl FromStr for DisorderLabel {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseEnumError::new("disorder label", s))
    }
}

/// Outcome of labelling a single utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceLabel {
    Included(DisorderLabel),
    Excluded,
}

impl UtteranceLabel {
    pub fn included(self) -> Option<DisorderLabel> {
        match self {
            UtteranceLabel::Included(l) => Some(l),
            UtteranceLabel::Excluded => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Participant,
    Interviewer,
}

/// Clinical cohort of a study subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cohort {
    #[serde(rename = "healthy")]
    Healthy,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "AD")]
    Ad,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Healthy, Cohort::Mci, Cohort::Ad];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Healthy => "healthy",
            Cohort::Mci => "MCI",
            Cohort::Ad => "AD",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = ParseEnumError;

    /// Accepts the cohort names used in this crate plus the group names that
    /// appear in DementiaBank `@ID` headers.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" | "control" | "controls" | "hc" => Ok(Cohort::Healthy),
            "mci" => Ok(Cohort::Mci),
            "ad" | "probablead" | "possiblead" | "dementia" => Ok(Cohort::Ad),
            _ => Err(ParseEnumError::new("cohort", s)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_space_has_four_classes_in_canonical_order() {
        assert_eq!(DisorderLabel::ALL.len(), 4);
        for (i, l) in DisorderLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(DisorderLabel::from_index(i), Some(*l));
            assert_eq!(l.as_str().parse::<DisorderLabel>().unwrap(), *l);
        }
        assert_eq!(DisorderLabel::from_index(4), None);
    }

    #[test]
    fn cohort_accepts_dementiabank_groups() {
        assert_eq!("Control".parse::<Cohort>().unwrap(), Cohort::Healthy);
        assert_eq!("ProbableAD".parse::<Cohort>().unwrap(), Cohort::Ad);
        assert_eq!("MCI".parse::<Cohort>().unwrap(), Cohort::Mci);
        assert!("Vascular".parse::<Cohort>().is_err());
    }

    #[test]
    fn serde_names() {
        assert_eq!(serde_json::to_string(&Cohort::Mci).unwrap(), "\"MCI\"");
        assert_eq!(
            serde_json::to_string(&DisorderLabel::Agrammatism).unwrap(),
            "\"agrammatism\""
        );
    }
}
