//! Deterministic generator of CHAT transcripts with planted structure.
//!
//! Each disorder class has its own surface cues: empty words and trailing off
//! for anomia, fragments and repetitions for disfluency, telegraphic speech
//! for agrammatism. Cohorts differ in the share of disordered utterances
//! (healthy < MCI < AD), and that share grows across visits in proportion to
//! `30 - MMSE`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chat::{AnnotatedUtterance, LabelPrecedence};
use crate::label::{Cohort, DisorderLabel, Speaker, NUM_LABELS};

const AGENTS: [&str; 6] = ["boy", "girl", "mother", "lady", "woman", "kid"];
const ACTIONS: [&str; 7] = [
    "taking", "washing", "drying", "holding", "grabbing", "wiping", "dropping",
];
const OBJECTS: [&str; 8] = [
    "cookie", "dish", "plate", "jar", "cup", "curtain", "towel", "bowl",
];
const PLACES: [&str; 5] = ["stool", "sink", "floor", "counter", "window"];
const FRAGMENTS: [&str; 5] = ["b", "w", "s", "k", "d"];
const INTERVIEWER: [&str; 3] = [
    "tell me everything you see going on in that picture .",
    "anything else ?",
    "what else is happening ?",
];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

/// One CHAT main-tier utterance (codes included) exhibiting `label`.
pub fn utterance<R: Rng>(label: DisorderLabel, rng: &mut R) -> String {
    let a = pick(rng, &AGENTS);
    let v = pick(rng, &ACTIONS);
    let o = pick(rng, &OBJECTS);
    let p = pick(rng, &PLACES);
    match label {
        DisorderLabel::Fluent => match rng.gen_range(0..3) {
            0 => format!("the {a} is {v} the {o} ."),
            1 => format!("the {a} is standing by the {p} ."),
            _ => format!("and the {a} is {v} the {o} near the {p} ."),
        },
        DisorderLabel::Anomia => match rng.gen_range(0..4) {
            0 => format!("the {a} is getting that thing there [+ es] ."),
            1 => "and she's doing something with the stuff +...".to_string(),
            2 => format!("the {a} wants the thing that you use for it [+ cir] ."),
            _ => "that one is over there with the thing +...".to_string(),
        },
        DisorderLabel::Disfluency => {
            let f = pick(rng, &FRAGMENTS);
            let o2 = pick(rng, &OBJECTS);
            match rng.gen_range(0..3) {
                0 => format!("&+{f} the {a} [/] the {a} is {v} the {o} ."),
                1 => format!("the {a} is &-uh &+{f} {v} the {o} [//] {o2} ."),
                _ => format!("&-uh the &+{f} {a} [/] {a} is {v} it ."),
            }
        }
        DisorderLabel::Agrammatism => match rng.gen_range(0..3) {
            0 => format!("{a} {v} {o} [+ gram] ."),
            1 => format!("her {v} {o} [+ gram] ."),
            _ => format!("{o} falling down {p} [+ gram] ."),
        },
    }
}

/// `n` labelled utterances in rotating class order, as cleaned text.
pub fn labeled_utterances(n: usize, seed: u64) -> Vec<(String, DisorderLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prec = LabelPrecedence::default();
    (0..n)
        .map(|i| {
            let label = DisorderLabel::ALL[i % NUM_LABELS];
            let raw = utterance(label, &mut rng);
            let utt = AnnotatedUtterance::new(&raw, Speaker::Participant, 0, &prec);
            debug_assert_eq!(utt.label.included(), Some(label));
            (utt.text, label)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortProfile {
    pub cohort: Cohort,
    /// (number of subjects, sessions per subject)
    pub groups: &'static [(usize, u32)],
    /// Single-visit subjects that only add training data.
    pub cross_sectional: usize,
    pub mmse_range: (u8, u8),
    pub mmse_decline_per_visit: f64,
    pub base_disorder_rate: f64,
    /// Relative weights of anomia, disfluency and agrammatism.
    pub disorder_mix: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub cohorts: Vec<CohortProfile>,
    pub utterances_per_session: (usize, usize),
    /// Increase of the disorder rate per visit per MMSE point below 30.
    pub decline_per_mmse_point: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 2024,
            cohorts: vec![
                CohortProfile {
                    cohort: Cohort::Healthy,
                    groups: &[(28, 3), (10, 4), (8, 5)],
                    cross_sectional: 10,
                    mmse_range: (27, 30),
                    mmse_decline_per_visit: 0.0,
                    base_disorder_rate: 0.2,
                    disorder_mix: [0.1, 0.5, 0.4],
                },
                CohortProfile {
                    cohort: Cohort::Mci,
                    groups: &[(6, 3), (4, 4), (1, 5)],
                    cross_sectional: 0,
                    mmse_range: (23, 28),
                    mmse_decline_per_visit: 0.5,
                    base_disorder_rate: 0.32,
                    disorder_mix: [0.2, 0.45, 0.35],
                },
                CohortProfile {
                    cohort: Cohort::Ad,
                    groups: &[(6, 3), (4, 4), (2, 5)],
                    cross_sectional: 14,
                    mmse_range: (12, 24),
                    mmse_decline_per_visit: 1.5,
                    base_disorder_rate: 0.45,
                    disorder_mix: [0.3, 0.4, 0.3],
                },
            ],
            utterances_per_session: (10, 14),
            decline_per_mmse_point: 0.008,
        }
    }
}

/// A generated transcript and its DementiaBank-style file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticFile {
    pub name: String,
    pub contents: String,
}

fn id_group(cohort: Cohort) -> &'static str {
    match cohort {
        Cohort::Healthy => "Control",
        Cohort::Mci => "MCI",
        Cohort::Ad => "ProbableAD",
    }
}

fn cdr_for(cohort: Cohort, mmse: u8) -> f64 {
    match cohort {
        Cohort::Healthy => 0.0,
        Cohort::Mci => 0.5,
        Cohort::Ad if mmse >= 20 => 1.0,
        Cohort::Ad if mmse >= 12 => 2.0,
        Cohort::Ad => 3.0,
    }
}

struct Session<'a> {
    subject: usize,
    visit: u32,
    cohort: Cohort,
    mmse: Option<u8>,
    cdr: f64,
    rate: f64,
    mix: &'a [f64; 3],
}

fn render_session<R: Rng>(s: &Session<'_>, cfg: &SyntheticConfig, rng: &mut R) -> SyntheticFile {
    let (lo, hi) = cfg.utterances_per_session;
    let n = rng.gen_range(lo..=hi);
    let n_disordered = (s.rate * n as f64).round() as usize;
    let mut labels = vec![DisorderLabel::Fluent; n];
    let disorders = DisorderLabel::disorders();
    for l in labels.iter_mut().take(n_disordered) {
        let r: f64 = rng.gen::<f64>() * s.mix.iter().sum::<f64>();
        let mut acc = 0.0;
        *l = disorders[2];
        for (d, w) in disorders.iter().zip(s.mix.iter()) {
            acc += w;
            if r < acc {
                *l = *d;
                break;
            }
        }
    }
    labels.shuffle(rng);
    let mut doc = String::new();
    doc.push_str(
        "@UTF8\n@Begin\n@Languages:\teng\n@Participants:\tPAR Participant, INV Investigator\n",
    );
    doc.push_str(&format!(
        "@ID:\teng|Synthetic|PAR|{};|female|{}||Participant|||\n",
        rng.gen_range(55..85),
        id_group(s.cohort)
    ));
    doc.push_str(&format!(
        "@Subject:\t{:03}\n@Visit:\t{}\n",
        s.subject, s.visit
    ));
    if let Some(m) = s.mmse {
        doc.push_str(&format!("@MMSE:\t{m}\n@CDR:\t{}\n", s.cdr));
    }
    doc.push_str(&format!("*INV:\t{}\n", INTERVIEWER[0]));
    for (i, label) in labels.iter().enumerate() {
        doc.push_str(&format!("*PAR:\t{}\n", utterance(*label, rng)));
        if i == n / 2 {
            doc.push_str(&format!("*INV:\t{}\n", pick(rng, &INTERVIEWER[1..])));
            doc.push_str("*PAR:\tI don't know what else [+ exc] .\n");
        }
    }
    doc.push_str("@End\n");
    SyntheticFile {
        name: format!("{:03}-{}.cha", s.subject, s.visit - 1),
        contents: doc,
    }
}

/// Every transcript of the configured corpus, ordered by subject then visit.
pub fn generate_corpus(cfg: &SyntheticConfig) -> Vec<SyntheticFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut files = Vec::new();
    let mut subject = 0;
    for profile in &cfg.cohorts {
        let mut plan: Vec<u32> = profile
            .groups
            .iter()
            .flat_map(|&(n, sessions)| std::iter::repeat(sessions).take(n))
            .collect();
        plan.extend(std::iter::repeat(1).take(profile.cross_sectional));
        for sessions in plan {
            subject += 1;
            let (lo, hi) = profile.mmse_range;
            let mmse0 = rng.gen_range(lo..=hi) as f64;
            let jitter = rng.gen_range(-0.05..0.05);
            // an occasional subject never has a behavioural score recorded
            let unscored = rng.gen_bool(0.03);
            for visit in 1..=sessions {
                let t = (visit - 1) as f64;
                let mmse = (mmse0 - profile.mmse_decline_per_visit * t)
                    .round()
                    .clamp(0.0, 30.0) as u8;
                let missing = unscored || (visit > 1 && rng.gen_bool(0.1));
                let rate = (profile.base_disorder_rate
                    + jitter
                    + cfg.decline_per_mmse_point * (30.0 - mmse0) * t)
                    .clamp(0.05, 0.9);
                let session = Session {
                    subject,
                    visit,
                    cohort: profile.cohort,
                    mmse: (!missing).then_some(mmse),
                    cdr: cdr_for(profile.cohort, mmse),
                    rate,
                    mix: &profile.disorder_mix,
                };
                files.push(render_session(&session, cfg, &mut rng));
            }
        }
    }
    files
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::parse_chat;

    #[test]
    fn utterances_carry_their_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prec = LabelPrecedence::default();
        for _ in 0..200 {
            for label in DisorderLabel::ALL {
                let raw = utterance(label, &mut rng);
                let u = AnnotatedUtterance::new(&raw, Speaker::Participant, 1, &prec);
                assert_eq!(u.label.included(), Some(label), "{raw}");
            }
        }
        let set = labeled_utterances(50, 3);
        assert_eq!(set.len(), 50);
        assert_eq!(
            set.iter()
                .filter(|(_, l)| *l == DisorderLabel::Anomia)
                .count(),
            13
        );
    }

    #[test]
    fn corpus_parses_with_planted_shape() {
        let files = generate_corpus(&SyntheticConfig::default());
        assert_eq!(files, generate_corpus(&SyntheticConfig::default()));
        let sessions: Vec<_> = files
            .iter()
            .map(|f| parse_chat(&f.contents, Some(&f.name)).unwrap())
            .collect();
        let longitudinal = crate::split::longitudinal_subset(&sessions, 3).unwrap();
        assert_eq!(longitudinal[&Cohort::Healthy].len(), 46);
        assert_eq!(longitudinal[&Cohort::Mci].len(), 11);
        assert_eq!(longitudinal[&Cohort::Ad].len(), 12);
        let rate = |c: Cohort| {
            let (mut d, mut n) = (0, 0);
            for s in sessions.iter().filter(|s| s.cohort == c) {
                for (_, l) in s.included() {
                    n += 1;
                    d += (l != DisorderLabel::Fluent) as usize;
                }
            }
            d as f64 / n as f64
        };
        assert!(rate(Cohort::Healthy) < rate(Cohort::Mci));
        assert!(rate(Cohort::Mci) < rate(Cohort::Ad));
    }
}
