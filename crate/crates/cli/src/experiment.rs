use std::path::Path;

use lingmark::eval::{
    average_reports, class_frequencies, evaluate_classifier, grid_search, predict_all,
    render_table, train_strategy, ExperimentReport,
};
use lingmark::formulation::Strategy;
use lingmark::records::write_jsonl;
use lingmark::registry::{Registry, RegistryEntry};
use lingmark::train::{checkpoint_dir, TrainingConfig};

use crate::error::CliError;
use crate::layout::{write_json, write_text, Layout, ManifestBuilder};
use crate::pipeline::{base_model, formulator_for, fresh, run_id, Backend, Prepared, TrainRecord};

pub struct TrainArgs<'a> {
    pub strategy: Strategy,
    pub backend: Backend,
    pub encoder: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub search: bool,
}

pub fn load_config(path: Option<&Path>, backend: Backend) -> Result<TrainingConfig, CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Validation(format!("cannot read config {}: {e}", p.display()))
            })?;
            Ok(toml::from_str(&text)?)
        }
        None if backend == Backend::Tiny => Ok(TrainingConfig::tiny()),
        None => Ok(TrainingConfig::default()),
    }
}

pub fn train(layout: &Layout, args: &TrainArgs<'_>) -> Result<TrainRecord, CliError> {
    let mut cfg = load_config(args.config, args.backend)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    let prepared = Prepared::load(layout)?;
    let splits = prepared.splits()?;
    let id = run_id(args.strategy, args.backend, cfg.seed);
    let mut manifest = ManifestBuilder::start("train", &id, Some(cfg.seed), &cfg);
    manifest.input(&layout.records())?;
    manifest.input(&layout.split())?;
    if let Some(e) = args.encoder {
        manifest.input(e)?;
    }

    let mut record = TrainRecord {
        run_id: id.clone(),
        strategy: args.strategy,
        backend: args.backend,
        config: cfg.clone(),
        search: None,
        checkpoints: Vec::new(),
        frequencies: None,
    };
    if args.strategy == Strategy::RandomRate {
        record.frequencies = Some(class_frequencies(splits.train.iter().map(|u| &u.label)));
    } else {
        let base = base_model(args.backend, args.encoder, &prepared.records)?;
        let formulator = formulator_for(&base)?;
        if args.search {
            let outcome = grid_search(
                args.strategy,
                |s| fresh(args.backend, &base, s),
                &formulator,
                &splits.train,
                &splits.validation,
                &cfg,
            )?;
            log::info!("grid search picked {:?}", outcome.best);
            cfg.hyper = outcome.best;
            record.config = cfg.clone();
            record.search = Some(outcome);
        }
        for repeat in 0..cfg.repeats {
            let seed = record.repeat_seed(repeat);
            let rcfg = TrainingConfig {
                seed,
                ..cfg.clone()
            };
            let (classifier, histories) = train_strategy(
                args.strategy,
                fresh(args.backend, &base, seed),
                &formulator,
                &splits.train,
                &splits.validation,
                &rcfg,
            )?;
            let dir = checkpoint_dir(&layout.checkpoints(), &id, repeat);
            let model_path = dir.join("model.json");
            if let lingmark::eval::Classifier::Model { model, .. } = &classifier {
                model.save(&model_path)?;
            }
            for (phase, h) in histories.iter().enumerate() {
                let p = dir.join(format!("history-{phase}.jsonl"));
                h.write_jsonl(&p)?;
                manifest.output(&p)?;
            }
            manifest.output(&model_path)?;
            record.checkpoints.push(layout.relative(&model_path));
            println!(
                "{id} repeat {repeat}: best epoch {} (val loss {:.4})",
                histories.last().map_or(0, |h| h.best_epoch),
                histories.last().map_or(f64::NAN, |h| h.best_val_loss)
            );
        }
    }
    let path = layout.train_record(&id);
    write_json(&path, &record)?;
    manifest.output(&path)?;
    manifest.finish(layout)?;
    println!("trained {id}");
    Ok(record)
}

pub fn evaluate_run(
    layout: &Layout,
    run_id: &str,
    producer: &str,
) -> Result<RegistryEntry, CliError> {
    let record = TrainRecord::load(layout, run_id, producer)?;
    let prepared = Prepared::load(layout)?;
    let splits = prepared.splits()?;
    let mut manifest =
        ManifestBuilder::start("evaluate", run_id, Some(record.config.seed), &record);
    manifest.input(&layout.train_record(run_id))?;
    manifest.input(&layout.records())?;
    manifest.input(&layout.split())?;

    let mut repeats = Vec::new();
    let mut all_predictions = Vec::new();
    for repeat in 0..record.repeats() {
        let (classifier, formulator) =
            record.classifier(layout, repeat, &prepared, &splits.train)?;
        let preds = predict_all(
            record.strategy,
            &classifier,
            &formulator,
            &splits.test,
            record.repeat_seed(repeat),
        )?;
        repeats.push(evaluate_classifier(&classifier, &preds)?);
        all_predictions.extend(preds);
    }
    let report = ExperimentReport {
        strategy: record.strategy,
        mean: average_reports(&repeats)?,
        repeats,
    };
    let entry = RegistryEntry {
        run_id: run_id.to_string(),
        seed: record.config.seed,
        report,
        checkpoints: record.checkpoints.clone(),
    };
    let registry = Registry::open(layout.registry())?;
    let entry_path = registry.put(&entry)?;
    let reference = registry.reference()?;
    if reference.is_none() {
        log::warn!("no standard_finetune run in the registry; deviations omitted");
    }
    let table = render_table(
        std::slice::from_ref(&entry.report),
        reference.as_ref().map(|e| &e.report),
    );
    write_text(&layout.report_md(run_id), &table)?;
    write_jsonl(&layout.predictions(run_id), &all_predictions)?;
    for p in [
        entry_path,
        layout.report_md(run_id),
        layout.predictions(run_id),
    ] {
        manifest.output(&p)?;
    }
    manifest.finish(layout)?;
    println!("{table}");
    Ok(entry)
}
