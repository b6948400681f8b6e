//! Stratified train/validation/test splits and longitudinal views over sessions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chat::SessionRecord;
use crate::label::{Cohort, DisorderLabel, NUM_LABELS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("min_sessions must be at least 2, got {0}")]
    MinSessions(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), SplitError> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|x| !x.is_finite() || *x < 0.0)
            || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(SplitError::InvalidRatios(r));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<(T, DisorderLabel)>,
    pub validation: Vec<(T, DisorderLabel)>,
    pub test: Vec<(T, DisorderLabel)>,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Classes with fewer than three instances, placed wholly in `train`.
    pub small_classes: Vec<DisorderLabel>,
}

/// Largest-remainder apportionment of `total` over `ideal` shares, each capped.
fn apportion(ideal: &[f64], caps: &[usize], total: usize) -> Vec<usize> {
    let mut alloc: Vec<usize> = ideal
        .iter()
        .zip(caps)
        .map(|(x, cap)| (x.floor() as usize).min(*cap))
        .collect();
    let mut order: Vec<usize> = (0..ideal.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut assigned: usize = alloc.iter().sum();
    while assigned < total {
        let before = assigned;
        for &c in &order {
            if assigned == total {
                break;
            }
            if alloc[c] < caps[c] {
                alloc[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    alloc
}

/// Splits labelled items keeping per-class proportions in every split.
///
/// Deterministic for a fixed `seed`. Classes with fewer than three members cannot
/// be spread over three splits and go to `train` with a warning.
pub fn stratified_split<T: Clone>(
    corpus: &[(T, DisorderLabel)],
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit<T>, SplitError> {
    if corpus.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: [Vec<usize>; NUM_LABELS] = Default::default();
    for (i, (_, l)) in corpus.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for group in by_class.iter_mut() {
        group.shuffle(&mut rng);
    }

    let mut small_classes = Vec::new();
    let mut train_idx = Vec::new();
    let mut eligible = Vec::new();
    for label in DisorderLabel::ALL {
        let group = &by_class[label.index()];
        if group.is_empty() {
            continue;
        }
        if group.len() < 3 {
            log::warn!(
                "class `{label}` has only {} instance(s); placing it wholly in train",
                group.len()
            );
            small_classes.push(label);
            train_idx.extend_from_slice(group);
        } else {
            eligible.push(label);
        }
    }

    let counts: Vec<usize> = eligible.iter().map(|l| by_class[l.index()].len()).collect();
    let n: usize = counts.iter().sum();
    let n_train = (ratios.train * n as f64).round() as usize;
    let n_val = ((ratios.validation * n as f64).round() as usize).min(n - n_train.min(n));

    let train_q = apportion(
        &counts
            .iter()
            .map(|&c| c as f64 * ratios.train)
            .collect::<Vec<_>>(),
        &counts,
        n_train,
    );
    let remaining: Vec<usize> = counts.iter().zip(&train_q).map(|(c, t)| c - t).collect();
    let val_q = apportion(
        &counts
            .iter()
            .map(|&c| c as f64 * ratios.validation)
            .collect::<Vec<_>>(),
        &remaining,
        n_val,
    );

    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (k, label) in eligible.iter().enumerate() {
        let group = &by_class[label.index()];
        let (tr, rest) = group.split_at(train_q[k]);
        let (va, te) = rest.split_at(val_q[k]);
        train_idx.extend_from_slice(tr);
        val_idx.extend_from_slice(va);
        test_idx.extend_from_slice(te);
    }
    for idx in [&mut train_idx, &mut val_idx, &mut test_idx] {
        idx.shuffle(&mut rng);
    }
    let take = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: take(&train_idx),
        validation: take(&val_idx),
        test: take(&test_idx),
        ratios,
        seed,
        small_classes,
    })
}

/// All sessions of one subject, ordered by visit.
#[derive(Debug, Clone)]
pub struct SubjectSessions<'a> {
    pub subject_id: String,
    pub cohort: Cohort,
    pub sessions: Vec<&'a SessionRecord>,
}

/// Groups sessions by subject and visit order.
///
/// A subject's cohort is taken from its latest visit.
pub fn group_subjects(corpus: &[SessionRecord]) -> Vec<SubjectSessions<'_>> {
    let mut by_subject: BTreeMap<&str, Vec<&SessionRecord>> = BTreeMap::new();
    for s in corpus {
        by_subject.entry(s.subject_id.as_str()).or_default().push(s);
    }
    by_subject
        .into_iter()
        .map(|(id, mut sessions)| {
            sessions.sort_by_key(|s| s.visit_index);
            SubjectSessions {
                subject_id: id.to_string(),
                cohort: sessions.last().unwrap().cohort,
                sessions,
            }
        })
        .collect()
}

/// Subjects with at least `min_sessions` sessions, grouped by cohort.
pub fn longitudinal_subset(
    corpus: &[SessionRecord],
    min_sessions: usize,
) -> Result<BTreeMap<Cohort, Vec<SubjectSessions<'_>>>, SplitError> {
    if min_sessions < 2 {
        return Err(SplitError::MinSessions(min_sessions));
    }
    let mut out: BTreeMap<Cohort, Vec<SubjectSessions<'_>>> = BTreeMap::new();
    for subject in group_subjects(corpus) {
        if subject.sessions.len() >= min_sessions {
            out.entry(subject.cohort).or_default().push(subject);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitIssue {
    pub subject_id: String,
    pub visits: Vec<u32>,
}

/// Subjects whose visit indices are not exactly `1..=n`.
pub fn visit_issues(corpus: &[SessionRecord]) -> Vec<VisitIssue> {
    group_subjects(corpus)
        .into_iter()
        .filter_map(|s| {
            let visits: Vec<u32> = s.sessions.iter().map(|r| r.visit_index).collect();
            let ok = visits.iter().enumerate().all(|(i, v)| *v as usize == i + 1);
            (!ok).then_some(VisitIssue {
                subject_id: s.subject_id,
                visits,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Speaker;
    use proptest::prelude::*;

    fn corpus_with(counts: [usize; 4]) -> Vec<(usize, DisorderLabel)> {
        let mut out = Vec::new();
        for (label, n) in DisorderLabel::ALL.iter().zip(counts) {
            for _ in 0..n {
                out.push((out.len(), *label));
            }
        }
        out
    }

    fn freq(items: &[(usize, DisorderLabel)], l: DisorderLabel) -> f64 {
        items.iter().filter(|(_, x)| *x == l).count() as f64 / items.len() as f64
    }

    #[test]
    fn exact_sizes_for_hundred() {
        let s = stratified_split(&corpus_with([100, 0, 0, 0]), SplitRatios::default(), 7).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (80, 10, 10)
        );
        for part in [&s.train, &s.validation, &s.test] {
            assert_eq!(freq(part, DisorderLabel::Fluent), 1.0);
        }
        let s =
            stratified_split(&corpus_with([40, 20, 30, 10]), SplitRatios::default(), 7).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (80, 10, 10)
        );
    }

    #[test]
    fn table_marginals_stay_within_two_points() {
        // class totals of the reference corpus, both cohorts
        let corpus = corpus_with([908 + 1337, 9 + 203, 246 + 734, 195 + 405]);
        let s = stratified_split(&corpus, SplitRatios::default(), 11).unwrap();
        for l in DisorderLabel::ALL {
            let f = freq(&corpus, l);
            for part in [&s.train, &s.validation, &s.test] {
                assert!(
                    (freq(part, l) - f).abs() <= 0.02,
                    "{l}: {} vs {f}",
                    freq(part, l)
                );
            }
        }
    }

    #[test]
    fn tiny_classes_go_to_train() {
        let s = stratified_split(&corpus_with([50, 2, 30, 20]), SplitRatios::default(), 3).unwrap();
        assert_eq!(s.small_classes, vec![DisorderLabel::Anomia]);
        assert_eq!(
            s.train
                .iter()
                .filter(|(_, l)| *l == DisorderLabel::Anomia)
                .count(),
            2
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            stratified_split::<usize>(&[], SplitRatios::default(), 0).unwrap_err(),
            SplitError::EmptyCorpus
        );
        let bad = SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.2,
        };
        assert!(matches!(
            stratified_split(&corpus_with([5, 5, 5, 5]), bad, 0),
            Err(SplitError::InvalidRatios(_))
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_deterministic_partition(
            counts in prop::array::uniform4(0usize..200),
            seed in any::<u64>(),
        ) {
            prop_assume!(counts.iter().sum::<usize>() > 0);
            let corpus = corpus_with(counts);
            let a = stratified_split(&corpus, SplitRatios::default(), seed).unwrap();
            let b = stratified_split(&corpus, SplitRatios::default(), seed).unwrap();
            prop_assert_eq!(&a, &b);
            let mut ids: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).map(|(i, _)| *i).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..corpus.len()).collect::<Vec<_>>());
        }

        #[test]
        fn stratification_holds_for_large_classes(
            counts in prop::array::uniform4(30usize..800),
            seed in any::<u64>(),
        ) {
            // each split must hold enough items for 2pp resolution
            prop_assume!(counts.iter().sum::<usize>() >= 600);
            let corpus = corpus_with(counts);
            let s = stratified_split(&corpus, SplitRatios::default(), seed).unwrap();
            for l in DisorderLabel::ALL {
                let f = freq(&corpus, l);
                for part in [&s.train, &s.validation, &s.test] {
                    prop_assert!((freq(part, l) - f).abs() <= 0.02);
                }
            }
        }
    }

    fn session(subject: &str, visit: u32, cohort: Cohort) -> SessionRecord {
        SessionRecord {
            subject_id: subject.into(),
            cohort,
            visit_index: visit,
            utterances: vec![crate::chat::AnnotatedUtterance::new(
                "the boy is on the stool .",
                Speaker::Participant,
                1,
                &Default::default(),
            )],
            mmse: None,
            cdr: None,
            warnings: vec![],
        }
    }

    #[test]
    fn longitudinal_threshold_and_order() {
        let mut corpus = vec![
            session("a", 2, Cohort::Healthy),
            session("a", 1, Cohort::Healthy),
        ];
        for v in [5, 3, 1, 4, 2] {
            corpus.push(session("b", v, Cohort::Ad));
        }
        let sub = longitudinal_subset(&corpus, 3).unwrap();
        assert!(!sub.contains_key(&Cohort::Healthy));
        let b = &sub[&Cohort::Ad][0];
        let visits: Vec<u32> = b.sessions.iter().map(|s| s.visit_index).collect();
        assert_eq!(visits, vec![1, 2, 3, 4, 5]);
        assert!(longitudinal_subset(&corpus, 1).is_err());
    }

    #[test]
    fn paper_longitudinal_counts() {
        // controls 28/10/8 and dementia 12/8/3 with 3/4/5 sessions, plus short histories
        let mut corpus = Vec::new();
        let mut next = 0;
        let mut add = |corpus: &mut Vec<SessionRecord>, cohort, n_subjects, n_sessions| {
            for _ in 0..n_subjects {
                next += 1;
                for v in 1..=n_sessions {
                    corpus.push(session(&format!("s{next}"), v, cohort));
                }
            }
        };
        add(&mut corpus, Cohort::Healthy, 28, 3);
        add(&mut corpus, Cohort::Healthy, 10, 4);
        add(&mut corpus, Cohort::Healthy, 8, 5);
        add(&mut corpus, Cohort::Ad, 12, 3);
        add(&mut corpus, Cohort::Ad, 8, 4);
        add(&mut corpus, Cohort::Ad, 3, 5);
        add(&mut corpus, Cohort::Healthy, 30, 2);
        add(&mut corpus, Cohort::Ad, 40, 1);
        let sub = longitudinal_subset(&corpus, 3).unwrap();
        assert_eq!(sub[&Cohort::Healthy].len(), 46);
        assert_eq!(sub[&Cohort::Ad].len(), 23);
    }

    #[test]
    fn visit_gaps_reported() {
        let corpus = vec![
            session("a", 1, Cohort::Mci),
            session("a", 3, Cohort::Mci),
            session("b", 1, Cohort::Mci),
        ];
        let issues = visit_issues(&corpus);
        assert_eq!(
            issues,
            vec![VisitIssue {
                subject_id: "a".into(),
                visits: vec![1, 3]
            }]
        );
    }
}
