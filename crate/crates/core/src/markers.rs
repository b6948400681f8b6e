//! Session-level digital markers and their longitudinal changes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::MaskedLanguageModel;
use crate::chat::SessionRecord;
use crate::eval::{class_probabilities, Classifier, EvalError};
use crate::formulation::Formulator;
use crate::label::{Cohort, DisorderLabel, ParseEnumError, NUM_LABELS};

#[derive(Debug, thiserror::Error)]
pub enum MarkerError {
    #[error("session has no included utterances")]
    NoUtterances,
    #[error("series has {0} sessions; at least 2 are needed")]
    TooFewSessions(usize),
    #[error("{0} is not computed from classifier probabilities")]
    NotAModelMarker(MarkerKind),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Scorer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkerKind {
    Communication,
    Anomia,
    Disfluency,
    Agrammatism,
    Incoherence,
    WordFluency,
}

impl MarkerKind {
    pub const ALL: [MarkerKind; 6] = [
        MarkerKind::Communication,
        MarkerKind::Anomia,
        MarkerKind::Disfluency,
        MarkerKind::Agrammatism,
        MarkerKind::Incoherence,
        MarkerKind::WordFluency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MarkerKind::Communication => "communication",
            MarkerKind::Anomia => "anomia",
            MarkerKind::Disfluency => "disfluency",
            MarkerKind::Agrammatism => "agrammatism",
            MarkerKind::Incoherence => "incoherence",
            MarkerKind::WordFluency => "word-fluency",
        }
    }

    /// Class whose probability the marker averages, for model-based kinds.
    pub fn label(self) -> Option<DisorderLabel> {
        match self {
            MarkerKind::Communication => Some(DisorderLabel::Fluent),
            MarkerKind::Anomia => Some(DisorderLabel::Anomia),
            MarkerKind::Disfluency => Some(DisorderLabel::Disfluency),
            MarkerKind::Agrammatism => Some(DisorderLabel::Agrammatism),
            MarkerKind::Incoherence | MarkerKind::WordFluency => None,
        }
    }

    /// Disorder markers are reported in percent.
    pub fn scale(self) -> f64 {
        match self {
            MarkerKind::Anomia | MarkerKind::Disfluency | MarkerKind::Agrammatism => 100.0,
            _ => 1.0,
        }
    }

    pub fn bounds(self) -> (f64, f64) {
        match self {
            MarkerKind::Incoherence => (-1.0, 1.0),
            k => (0.0, k.scale()),
        }
    }
}

impl fmt::Display for MarkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarkerKind {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        MarkerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ParseEnumError::new("marker", s))
    }
}

/// Unweighted mean of one class probability over utterances, scaled.
pub fn marker_from_probabilities(
    probs: &[[f64; NUM_LABELS]],
    kind: MarkerKind,
) -> Result<f64, MarkerError> {
    let label = kind.label().ok_or(MarkerError::NotAModelMarker(kind))?;
    if probs.is_empty() {
        return Err(MarkerError::NoUtterances);
    }
    let mean = probs.iter().map(|p| p[label.index()]).sum::<f64>() / probs.len() as f64;
    Ok(kind.scale() * mean)
}

/// Class distributions of every included utterance of a session.
pub fn session_probabilities<M: MaskedLanguageModel>(
    classifier: &Classifier<M>,
    formulator: &Formulator,
    session: &SessionRecord,
    seed: u64,
) -> Result<Vec<[f64; NUM_LABELS]>, MarkerError> {
    session
        .included()
        .map(|(u, _)| {
            class_probabilities(classifier, formulator, &u.text, seed).map_err(MarkerError::from)
        })
        .collect()
}

pub fn session_marker<M: MaskedLanguageModel>(
    classifier: &Classifier<M>,
    formulator: &Formulator,
    session: &SessionRecord,
    kind: MarkerKind,
    seed: u64,
) -> Result<f64, MarkerError> {
    if kind.label().is_none() {
        return Err(MarkerError::NotAModelMarker(kind));
    }
    marker_from_probabilities(
        &session_probabilities(classifier, formulator, session, seed)?,
        kind,
    )
}

/// One subject's marker values ordered by visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSeries {
    pub subject_id: String,
    pub cohort: Cohort,
    pub kind: MarkerKind,
    pub values: Vec<(u32, f64)>,
}

impl MarkerSeries {
    pub fn new(
        subject_id: impl Into<String>,
        cohort: Cohort,
        kind: MarkerKind,
        mut values: Vec<(u32, f64)>,
    ) -> Self {
        values.sort_by_key(|(v, _)| *v);
        MarkerSeries {
            subject_id: subject_id.into(),
            cohort,
            kind,
            values,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        mean(&self.values.iter().map(|(_, v)| *v).collect::<Vec<_>>())
    }
}

/// Flat marker record `{subject, cohort, visit, kind, value}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub subject: String,
    pub cohort: Cohort,
    pub visit: u32,
    pub kind: MarkerKind,
    pub value: f64,
}

impl MarkerSeries {
    pub fn records(&self) -> impl Iterator<Item = MarkerRecord> + '_ {
        self.values.iter().map(|&(visit, value)| MarkerRecord {
            subject: self.subject_id.clone(),
            cohort: self.cohort,
            visit,
            kind: self.kind,
            value,
        })
    }
}

/// Groups sessions by subject and evaluates `marker` on each. Sessions whose
/// marker is undefined are skipped with a warning.
pub fn series_from_sessions<F>(
    sessions: &[SessionRecord],
    kind: MarkerKind,
    mut marker: F,
) -> Result<Vec<MarkerSeries>, MarkerError>
where
    F: FnMut(&SessionRecord) -> Result<f64, MarkerError>,
{
    let mut by_subject: BTreeMap<&str, Vec<&SessionRecord>> = BTreeMap::new();
    for s in sessions {
        by_subject.entry(s.subject_id.as_str()).or_default().push(s);
    }
    let mut out = Vec::new();
    for (subject, mut list) in by_subject {
        list.sort_by_key(|s| s.visit_index);
        let cohort = list.last().unwrap().cohort;
        let mut values = Vec::new();
        for s in list {
            match marker(s) {
                Ok(v) => values.push((s.visit_index, v)),
                Err(MarkerError::NoUtterances) => {
                    log::warn!(
                        "subject {subject} visit {}: no included utterances, marker skipped",
                        s.visit_index
                    )
                }
                Err(e) => return Err(e),
            }
        }
        if !values.is_empty() {
            out.push(MarkerSeries::new(subject, cohort, kind, values));
        }
    }
    Ok(out)
}

/// `value(last visit) - value(first visit)`.
pub fn delta_end_start(series: &MarkerSeries) -> Result<f64, MarkerError> {
    match series.values.as_slice() {
        [first, .., last] => Ok(last.1 - first.1),
        v => Err(MarkerError::TooFewSessions(v.len())),
    }
}

/// Mean change between adjacent sessions. The adjacent differences telescope,
/// so this is evaluated as `(last - first) / (n - 1)`, which avoids summing
/// rounding error over the differences.
pub fn delta_long(series: &MarkerSeries) -> Result<f64, MarkerError> {
    let n = series.values.len();
    Ok(delta_end_start(series)? / (n - 1) as f64)
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; 0 for a single value.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<MeanStd> {
        Some(MeanStd {
            mean: mean(xs)?,
            std: sample_std(xs)?,
            n: xs.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cohort: Cohort,
    pub kind: MarkerKind,
    pub subjects: usize,
    pub marker: MeanStd,
    /// Over subjects with at least two sessions.
    pub delta_end_start: Option<MeanStd>,
    pub delta_long: Option<MeanStd>,
}

/// Per-cohort mean and spread of the subject-level marker and its changes.
/// Each subject contributes one value (its own mean or delta) before pooling.
pub fn cohort_summary(series: &[MarkerSeries], kind: MarkerKind) -> Vec<CohortSummary> {
    let mut out = Vec::new();
    for cohort in Cohort::ALL {
        let members: Vec<&MarkerSeries> = series
            .iter()
            .filter(|s| s.cohort == cohort && s.kind == kind)
            .collect();
        if members.is_empty() {
            log::warn!("no {kind} series for the {cohort} cohort; omitted from the summary");
            continue;
        }
        let means: Vec<f64> = members.iter().filter_map(|s| s.mean()).collect();
        let des: Vec<f64> = members
            .iter()
            .filter_map(|s| delta_end_start(s).ok())
            .collect();
        let dls: Vec<f64> = members.iter().filter_map(|s| delta_long(s).ok()).collect();
        out.push(CohortSummary {
            cohort,
            kind,
            subjects: members.len(),
            marker: MeanStd::of(&means).expect("non-empty series have a mean"),
            delta_end_start: MeanStd::of(&des),
            delta_long: MeanStd::of(&dls),
        });
    }
    out
}

fn fmt_ms(ms: Option<MeanStd>, signed: bool, digits: usize) -> String {
    match ms {
        Some(m) if signed => format!("{:+.*} ({:.*})", digits, m.mean, digits, m.std),
        Some(m) => format!("{:.*} ({:.*})", digits, m.mean, digits, m.std),
        None => "-".into(),
    }
}

/// Markdown table with `Marker | Δ(end-start) | Δ(long)` column groups per kind.
pub fn render_summary_table(summaries: &[Vec<CohortSummary>]) -> String {
    let kinds: Vec<MarkerKind> = summaries
        .iter()
        .filter_map(|s| s.first().map(|c| c.kind))
        .collect();
    let mut out = String::from("| Cohort |");
    for k in &kinds {
        out.push_str(&format!(" {k} | {k} Δ(end-start) | {k} Δ(long) |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(3 * kinds.len()));
    out.push('\n');
    for cohort in Cohort::ALL {
        let mut row = format!("| {cohort} |");
        let mut any = false;
        for group in summaries {
            let digits = if group.first().is_some_and(|c| c.kind.scale() > 1.0) {
                1
            } else {
                3
            };
            match group.iter().find(|c| c.cohort == cohort) {
                Some(c) => {
                    any = true;
                    row.push_str(&format!(
                        " {} | {} | {} |",
                        fmt_ms(Some(c.marker), false, digits),
                        fmt_ms(c.delta_end_start, true, digits),
                        fmt_ms(c.delta_long, true, digits)
                    ));
                }
                None => row.push_str(" - | - | - |"),
            }
        }
        if any {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> MarkerSeries {
        MarkerSeries::new(
            "s",
            Cohort::Ad,
            MarkerKind::Communication,
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (i as u32 + 1, *v))
                .collect(),
        )
    }

    #[test]
    fn session_means() {
        let fluent = [[1.0, 0.0, 0.0, 0.0]; 3];
        assert_eq!(
            marker_from_probabilities(&fluent, MarkerKind::Communication).unwrap(),
            1.0
        );
        let probs = [[0.9, 0.1, 0.0, 0.0], [0.7, 0.3, 0.0, 0.0]];
        assert!(
            (marker_from_probabilities(&probs, MarkerKind::Anomia).unwrap() - 20.0).abs() < 1e-12
        );
        assert!(matches!(
            marker_from_probabilities(&[], MarkerKind::Anomia),
            Err(MarkerError::NoUtterances)
        ));
        assert!(marker_from_probabilities(&probs, MarkerKind::Incoherence).is_err());
    }

    #[test]
    fn deltas() {
        let s = series(&[0.8, 0.7, 0.55]);
        assert!((delta_end_start(&s).unwrap() + 0.25).abs() < 1e-12);
        assert!((delta_long(&s).unwrap() + 0.125).abs() < 1e-12);
        let flat = series(&[0.4, 0.4, 0.4, 0.4]);
        assert_eq!(delta_end_start(&flat).unwrap(), 0.0);
        assert_eq!(delta_long(&flat).unwrap(), 0.0);
        assert!(matches!(
            delta_long(&series(&[0.3])),
            Err(MarkerError::TooFewSessions(1))
        ));
    }

    #[test]
    fn series_are_ordered_by_visit() {
        let s = MarkerSeries::new(
            "x",
            Cohort::Healthy,
            MarkerKind::Anomia,
            vec![(3, 1.0), (1, 3.0), (2, 2.0)],
        );
        assert_eq!(s.values, vec![(1, 3.0), (2, 2.0), (3, 1.0)]);
    }

    #[test]
    fn summaries() {
        let mut a = series(&[0.8, 0.7, 0.55]);
        a.cohort = Cohort::Healthy;
        let summary = cohort_summary(&[a.clone()], MarkerKind::Communication);
        assert_eq!(summary.len(), 1);
        let c = &summary[0];
        assert!((c.marker.mean - a.mean().unwrap()).abs() < 1e-15);
        assert_eq!(c.marker.std, 0.0);
        assert!((c.delta_end_start.unwrap().mean + 0.25).abs() < 1e-12);

        let b = MarkerSeries::new(
            "b",
            Cohort::Healthy,
            MarkerKind::Communication,
            vec![(1, 0.5), (2, 0.7)],
        );
        let s = &cohort_summary(&[a, b], MarkerKind::Communication)[0];
        // subject means 0.6833.. and 0.6; sample std of the two
        let m: [f64; 2] = [(0.8 + 0.7 + 0.55) / 3.0, 0.6];
        let sd = ((m[0] - m[1]).powi(2) / 2.0).sqrt();
        assert!((s.marker.std - sd).abs() < 1e-12);
        assert!((s.delta_long.unwrap().mean - (-0.125 + 0.2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn table_shape() {
        let mk = |cohort, kind| MarkerSeries::new("s", cohort, kind, vec![(1, 10.0), (2, 20.0)]);
        let groups: Vec<Vec<CohortSummary>> = [
            MarkerKind::Anomia,
            MarkerKind::Disfluency,
            MarkerKind::Agrammatism,
        ]
        .iter()
        .map(|&k| cohort_summary(&Cohort::ALL.map(|c| mk(c, k)), k))
        .collect();
        let table = render_summary_table(&groups);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2 + 3);
        assert_eq!(lines[0].matches('|').count(), 1 + 1 + 9);
        assert!(lines[2].contains("15.0 (0.0) | +10.0 (0.0) | +10.0 (0.0)"));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!(
            "word-fluency".parse::<MarkerKind>().unwrap(),
            MarkerKind::WordFluency
        );
        assert_eq!(
            "word_fluency".parse::<MarkerKind>().unwrap(),
            MarkerKind::WordFluency
        );
        assert!("coherence".parse::<MarkerKind>().is_err());
    }

    proptest! {
        #[test]
        fn telescoping(values in prop::collection::vec(0.0..1.0f64, 2..12)) {
            let s = series(&values);
            let expect = (values[values.len() - 1] - values[0]) / (values.len() - 1) as f64;
            prop_assert_eq!(delta_long(&s).unwrap(), expect);
            let naive = values.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (values.len() - 1) as f64;
            prop_assert!((delta_long(&s).unwrap() - naive).abs() < 1e-12);
        }

        #[test]
        fn closure_and_bounds(raw in prop::collection::vec(prop::array::uniform4(0.01..1.0f64), 1..20)) {
            let probs: Vec<[f64; 4]> = raw.iter().map(|p| {
                let t: f64 = p.iter().sum();
                p.map(|x| x / t)
            }).collect();
            let c = marker_from_probabilities(&probs, MarkerKind::Communication).unwrap();
            let d: f64 = [MarkerKind::Anomia, MarkerKind::Disfluency, MarkerKind::Agrammatism]
                .iter()
                .map(|&k| marker_from_probabilities(&probs, k).unwrap())
                .sum();
            prop_assert!((c + d / 100.0 - 1.0).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
