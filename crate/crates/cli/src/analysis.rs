use std::collections::BTreeMap;
use std::path::Path;

use lingmark::baselines::{
    incoherence_marker, session_texts, word_fluency_marker, BaselineError, EmbeddingScorer,
    HashedBagOfWords, PrecomputedEmbeddings, PrecomputedWordScores, RepetitionFluency,
    WordFluencyScorer,
};
use lingmark::label::Cohort;
use lingmark::markers::{
    cohort_summary, delta_long, render_summary_table, series_from_sessions, session_marker,
    MarkerError, MarkerKind, MarkerRecord, MarkerSeries, MeanStd,
};
use lingmark::records::{read_jsonl, write_jsonl};
use lingmark::registry::{Registry, RegistryEntry};
use lingmark::stats::{
    behaviour_association, mann_whitney, onset_table, scatter_svg, Association, Behaviour,
    OnsetRow, TestResult,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::layout::{write_json, write_text, Layout, ManifestBuilder};
use crate::pipeline::{load_sessions, Prepared, TrainRecord};

/// `best`, or a strategy name.
pub fn resolve_run(layout: &Layout, strategy: &str) -> Result<RegistryEntry, CliError> {
    let registry = Registry::open(layout.registry())?;
    let found = if strategy == "best" {
        registry.best_by_macro_f1()?
    } else {
        let s = strategy
            .parse()
            .map_err(|e| CliError::Validation(format!("--strategy: {e}")))?;
        registry.latest(s)?
    };
    found.ok_or_else(|| CliError::Missing {
        path: layout.registry(),
        producer: if strategy == "best" {
            "lingmark evaluate".to_string()
        } else {
            format!("lingmark evaluate --strategy {strategy}")
        },
    })
}

fn baseline_err(e: BaselineError) -> MarkerError {
    match e {
        BaselineError::TooFewUtterances(_) | BaselineError::NoWords => MarkerError::NoUtterances,
        e => MarkerError::Scorer(e.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MarkerSource {
    kind: MarkerKind,
    run_id: Option<String>,
    scorer: Option<String>,
}

pub fn markers(
    layout: &Layout,
    kind: MarkerKind,
    strategy: &str,
    scorer_file: Option<&Path>,
) -> Result<Vec<MarkerSeries>, CliError> {
    let sessions = load_sessions(layout)?;
    let mut source = MarkerSource {
        kind,
        run_id: None,
        scorer: None,
    };
    let mut manifest;
    let series = if kind.label().is_some() {
        let entry = resolve_run(layout, strategy)?;
        log::info!(
            "{kind} marker from run {} ({})",
            entry.run_id,
            entry.strategy()
        );
        let record = TrainRecord::load(
            layout,
            &entry.run_id,
            &format!("lingmark train --strategy {}", entry.strategy()),
        )?;
        let prepared = Prepared::load(layout)?;
        let splits = prepared.splits()?;
        // the first repeat stands in for the run
        let (classifier, formulator) = record.classifier(layout, 0, &prepared, &splits.train)?;
        manifest = ManifestBuilder::start(
            "markers",
            kind.as_str(),
            Some(record.config.seed),
            &record.run_id,
        );
        manifest.input(&layout.train_record(&entry.run_id))?;
        source.run_id = Some(entry.run_id.clone());
        let seed = record.repeat_seed(0);
        series_from_sessions(&sessions, kind, |s| {
            session_marker(&classifier, &formulator, s, kind, seed)
        })?
    } else {
        manifest = ManifestBuilder::start("markers", kind.as_str(), None, scorer_file);
        if let Some(p) = scorer_file {
            manifest.input(p)?;
        }
        match kind {
            MarkerKind::Incoherence => {
                let scorer: Box<dyn EmbeddingScorer> = match scorer_file {
                    Some(p) => Box::new(PrecomputedEmbeddings::load(p)?),
                    None => Box::new(HashedBagOfWords::default()),
                };
                source.scorer = Some(
                    scorer_file.map_or("hashed-bag-of-words".into(), |p| p.display().to_string()),
                );
                series_from_sessions(&sessions, kind, |s| {
                    incoherence_marker(&session_texts(s), scorer.as_ref()).map_err(baseline_err)
                })?
            }
            _ => {
                let scorer: Box<dyn WordFluencyScorer> = match scorer_file {
                    Some(p) => Box::new(PrecomputedWordScores::load(p)?),
                    None => Box::new(RepetitionFluency),
                };
                source.scorer =
                    Some(scorer_file.map_or("repetition".into(), |p| p.display().to_string()));
                series_from_sessions(&sessions, kind, |s| {
                    word_fluency_marker(&session_texts(s), scorer.as_ref()).map_err(baseline_err)
                })?
            }
        }
    };
    manifest.input(&layout.sessions())?;

    let records: Vec<MarkerRecord> = series.iter().flat_map(|s| s.records()).collect();
    let path = layout.marker_records(kind);
    std::fs::create_dir_all(path.parent().unwrap())?;
    write_jsonl(&path, &records)?;
    let summary = cohort_summary(&series, kind);
    write_json(&layout.marker_summary(kind), &summary)?;
    let table = render_summary_table(std::slice::from_ref(&summary));
    let header = match (&source.run_id, &source.scorer) {
        (Some(r), _) => format!("{kind} marker from run `{r}`\n\n"),
        (_, Some(s)) => format!("{kind} marker with scorer `{s}`\n\n"),
        _ => String::new(),
    };
    write_text(&layout.marker_summary_md(kind), &(header + &table))?;
    for p in [
        path,
        layout.marker_summary(kind),
        layout.marker_summary_md(kind),
    ] {
        manifest.output(&p)?;
    }
    manifest.finish(layout)?;
    println!("{table}");
    Ok(series)
}

/// Rebuilds per-subject series from stored marker records.
pub fn load_series(layout: &Layout, kind: MarkerKind) -> Result<Vec<MarkerSeries>, CliError> {
    let path = layout.require(
        layout.marker_records(kind),
        format!("lingmark markers --marker {kind}"),
    )?;
    let records: Vec<MarkerRecord> = read_jsonl(&path)?;
    let mut by_subject: BTreeMap<String, (Cohort, Vec<(u32, f64)>)> = BTreeMap::new();
    for r in records {
        by_subject
            .entry(r.subject)
            .or_insert((r.cohort, Vec::new()))
            .1
            .push((r.visit, r.value));
    }
    Ok(by_subject
        .into_iter()
        .map(|(id, (cohort, values))| MarkerSeries::new(id, cohort, kind, values))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortTest {
    pub a: Cohort,
    pub b: Cohort,
    pub quantity: String,
    pub a_summary: MeanStd,
    pub b_summary: MeanStd,
    pub test: TestResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Longitudinal {
    pub marker: MarkerKind,
    pub behaviour: Behaviour,
    pub cohort_tests: Vec<CohortTest>,
    pub association: Association,
    pub onset: Vec<OnsetRow>,
}

/// Mann-Whitney tests between every cohort pair on the per-subject mean marker
/// and on the per-subject mean adjacent change.
pub fn cohort_tests(series: &[MarkerSeries]) -> Vec<CohortTest> {
    let quantities: [(&str, fn(&MarkerSeries) -> Option<f64>); 2] = [
        ("marker", |s| s.mean()),
        ("delta_long", |s| delta_long(s).ok()),
    ];
    let mut out = Vec::new();
    for (name, f) in quantities {
        let values = |c: Cohort| -> Vec<f64> {
            series
                .iter()
                .filter(|s| s.cohort == c)
                .filter_map(f)
                .collect()
        };
        for (i, &a) in Cohort::ALL.iter().enumerate() {
            for &b in &Cohort::ALL[i + 1..] {
                let (va, vb) = (values(a), values(b));
                match (mann_whitney(&va, &vb), MeanStd::of(&va), MeanStd::of(&vb)) {
                    (Ok(test), Some(a_summary), Some(b_summary)) => out.push(CohortTest {
                        a,
                        b,
                        quantity: name.to_string(),
                        a_summary,
                        b_summary,
                        test,
                    }),
                    (Err(e), ..) => log::warn!("{name}: {a} vs {b} not tested: {e}"),
                    _ => {}
                }
            }
        }
    }
    out
}

fn render_longitudinal(l: &Longitudinal) -> String {
    let mut out = format!("## {} marker and {}\n\n", l.marker, l.behaviour);
    out.push_str("| Quantity | Cohorts | Mean (SD) | Mean (SD) | U | p | Method |\n|---|---|---|---|---|---|---|\n");
    for t in &l.cohort_tests {
        out.push_str(&format!(
            "| {} | {} vs {} | {:.3} ({:.3}) | {:.3} ({:.3}) | {} | {:.3e} | {:?} |\n",
            t.quantity,
            t.a,
            t.b,
            t.a_summary.mean,
            t.a_summary.std,
            t.b_summary.mean,
            t.b_summary.std,
            t.test.statistic,
            t.test.p_value,
            t.test.method
        ));
    }
    let a = &l.association;
    out.push_str(&format!(
        "\nAssociation of mean {} with mean marker change: r = {:.3} (sign-adjusted {:.3}), p = {:.3e}, n = {}, {} excluded.\n",
        l.behaviour,
        a.test.statistic,
        a.sign_adjusted_r,
        a.test.p_value,
        a.points.len(),
        a.excluded.len()
    ));
    out.push_str("\n| Cohort | Subjects | Onset marker | Onset behaviour | Δ(long) |\n|---|---|---|---|---|\n");
    let ms = |m: &Option<MeanStd>| {
        m.map_or("-".to_string(), |m| format!("{:.3} ({:.3})", m.mean, m.std))
    };
    for r in &l.onset {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.cohort,
            r.subjects,
            ms(&r.onset_marker),
            ms(&r.onset_behaviour),
            ms(&r.delta_long)
        ));
    }
    out
}

pub fn longitudinal(
    layout: &Layout,
    kind: MarkerKind,
    behaviour: Behaviour,
) -> Result<Longitudinal, CliError> {
    let series = load_series(layout, kind)?;
    let sessions = load_sessions(layout)?;
    let mut manifest = ManifestBuilder::start(
        "longitudinal",
        &format!("{kind}-{behaviour}"),
        None,
        (kind, behaviour),
    );
    manifest.input(&layout.marker_records(kind))?;
    manifest.input(&layout.sessions())?;
    let association = behaviour_association(&series, &sessions, behaviour)?;
    for e in &association.excluded {
        log::debug!("excluded {}: {}", e.subject_id, e.reason);
    }
    let result = Longitudinal {
        marker: kind,
        behaviour,
        cohort_tests: cohort_tests(&series),
        onset: onset_table(&series, &sessions, behaviour),
        association,
    };
    let svg = scatter_svg(
        &result.association.points,
        &format!("mean {behaviour}"),
        &format!("mean change in {kind} marker"),
        &format!("{kind} marker change vs {behaviour}"),
    );
    let md = render_longitudinal(&result);
    write_json(&layout.longitudinal(kind, behaviour, "json"), &result)?;
    write_text(&layout.longitudinal(kind, behaviour, "svg"), &svg)?;
    write_text(&layout.longitudinal(kind, behaviour, "md"), &md)?;
    for ext in ["json", "svg", "md"] {
        manifest.output(&layout.longitudinal(kind, behaviour, ext))?;
    }
    manifest.finish(layout)?;
    println!("{md}");
    Ok(result)
}
