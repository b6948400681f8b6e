use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lingmark::chat::{parse_chat_file, ChatError, SessionRecord};
use lingmark::records::{
    class_counts, records_from_sessions, render_class_counts, split_records, write_jsonl,
    SplitManifest,
};
use lingmark::split::{visit_issues, SplitRatios};
use lingmark::synthetic::{generate_corpus, SyntheticConfig};
use serde::Serialize;
use walkdir::WalkDir;

use crate::error::CliError;
use crate::layout::{write_json, write_text, Layout, ManifestBuilder};

pub fn synth(out: &Path, seed: Option<u64>) -> Result<usize, CliError> {
    let mut cfg = SyntheticConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out)?;
    let files = generate_corpus(&cfg);
    for f in &files {
        std::fs::write(out.join(&f.name), &f.contents)?;
    }
    println!("wrote {} transcripts to {}", files.len(), out.display());
    Ok(files.len())
}

fn chat_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Validation(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .map(|e| e.into_path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "cha"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Serialize)]
struct PrepareConfig<'a> {
    corpus: &'a Path,
    ratios: SplitRatios,
}

pub fn prepare(corpus: &Path, layout: &Layout, seed: u64) -> Result<SplitManifest, CliError> {
    let files = chat_files(corpus)?;
    let ratios = SplitRatios::default();
    let mut manifest = ManifestBuilder::start(
        "prepare",
        &format!("s{seed}"),
        Some(seed),
        PrepareConfig { corpus, ratios },
    );
    let mut sessions: Vec<SessionRecord> = Vec::new();
    let mut parsed = 0;
    let mut unknown: BTreeMap<String, usize> = BTreeMap::new();
    for path in &files {
        manifest.input(path)?;
        match parse_chat_file(path) {
            Ok(s) => {
                parsed += 1;
                for w in &s.warnings {
                    log::debug!("{}:{}: unknown code {}", path.display(), w.line, w.code);
                    *unknown.entry(w.code.clone()).or_default() += 1;
                }
                sessions.push(s);
            }
            Err(ChatError::EmptySession) => {
                parsed += 1;
                log::warn!("{}: no participant utterances", path.display());
            }
            Err(e) => log::warn!("{}: skipped: {e}", path.display()),
        }
    }
    for (code, n) in &unknown {
        log::warn!("unknown code {code} seen {n} times; kept in the text, not used for labels");
    }
    if parsed == 0 {
        return Err(CliError::Validation(format!(
            "no parseable .cha files under {}",
            corpus.display()
        )));
    }
    for issue in visit_issues(&sessions) {
        log::warn!("subject {} has visits {:?}", issue.subject_id, issue.visits);
    }
    let records = records_from_sessions(&sessions);
    if records.is_empty() {
        log::warn!("corpus yields zero labelled participant utterances");
    }
    let split = if records.is_empty() {
        SplitManifest {
            seed,
            ratios,
            train: vec![],
            validation: vec![],
            test: vec![],
            small_classes: vec![],
        }
    } else {
        split_records(&records, ratios, seed)?
    };
    for c in &split.small_classes {
        log::warn!("class {c} has fewer than three instances; kept in train only");
    }

    std::fs::create_dir_all(&layout.root)?;
    write_jsonl(&layout.sessions(), &sessions)?;
    write_jsonl(&layout.records(), &records)?;
    write_json(&layout.split(), &split)?;
    let counts = class_counts(&records);
    write_json(&layout.class_counts(), &counts)?;
    let table = render_class_counts(&counts);
    write_text(&layout.class_counts_md(), &table)?;
    for p in [
        layout.sessions(),
        layout.records(),
        layout.split(),
        layout.class_counts(),
        layout.class_counts_md(),
    ] {
        manifest.output(&p)?;
    }
    manifest.finish(layout)?;
    println!(
        "{} sessions, {} utterances ({} train / {} validation / {} test)\n\n{table}",
        sessions.len(),
        records.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(split)
}
