//! Per-strategy training data, inference rules, metrics and experiment runs.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Head, MaskedLanguageModel, ModelError, Trainable};
use crate::formulation::{
    DemonstrationPool, FormulationError, Formulator, Strategy, ENTAILS, MLM_MASK_RATE,
};
use crate::label::{DisorderLabel, NUM_LABELS};
use crate::train::{
    fine_tune, mean_loss, EpochSource, Example, History, HyperParams, LossSpec, TrainError,
    TrainingConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("classifier was trained for {found}, not {expected}")]
    StrategyMismatch { expected: Strategy, found: Strategy },
    #[error("{0} has no trainable model")]
    NotTrainable(Strategy),
    #[error("no predictions to evaluate")]
    EmptyPredictions,
    #[error("class frequencies must be non-negative and sum to 1, got {0:?}")]
    InvalidFrequencies([f64; NUM_LABELS]),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub id: String,
    pub text: String,
    pub label: DisorderLabel,
}

/// 64-bit FNV-1a, used to derive stable per-utterance seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn utterance_seed(text: &str, seed: u64) -> u64 {
    fnv1a(text.as_bytes()) ^ seed.rotate_left(17)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    MaskedTokens,
    Classification,
}

/// Training examples for one strategy, rebuilt each epoch so masks and
/// demonstrations are redrawn.
pub struct StrategyData<'a> {
    strategy: Strategy,
    formulator: &'a Formulator,
    items: &'a [LabeledUtterance],
    pool: &'a DemonstrationPool,
    seed: u64,
    phase: Phase,
}

impl<'a> StrategyData<'a> {
    pub fn new(
        strategy: Strategy,
        formulator: &'a Formulator,
        items: &'a [LabeledUtterance],
        pool: &'a DemonstrationPool,
        seed: u64,
    ) -> Self {
        StrategyData {
            strategy,
            formulator,
            items,
            pool,
            seed,
            phase: Phase::Classification,
        }
    }

    pub fn with_phase(mut self, phase: Phase) -> Self {
        self.phase = phase;
        self
    }

    pub fn build(&self, epoch: usize) -> Result<Vec<Example>, EvalError> {
        let f = self.formulator;
        let mut rng = epoch_rng(self.seed, epoch);
        let mut out = Vec::with_capacity(self.items.len());
        for item in self.items {
            let (u, gold) = (item.text.as_str(), Some(item.label));
            match self.strategy {
                Strategy::StandardFinetune => {
                    out.push(Example::single(
                        f.encode_standard(u, gold)?,
                        Head::Classification,
                    ));
                }
                Strategy::MultitaskMlmSeparate if self.phase == Phase::MaskedTokens => {
                    let masked =
                        f.mask_for_mlm(&f.encode_standard(u, None)?, MLM_MASK_RATE, &mut rng)?;
                    out.push(Example::single(masked, Head::MaskFill));
                }
                Strategy::MultitaskMlmSeparate => {
                    out.push(Example::single(
                        f.encode_standard(u, gold)?,
                        Head::Classification,
                    ));
                }
                Strategy::MultitaskMlmJoint => {
                    let clean = f.encode_standard(u, gold)?;
                    let masked =
                        f.mask_for_mlm(&f.encode_standard(u, None)?, MLM_MASK_RATE, &mut rng)?;
                    out.push(Example::joint(clean, masked, LossSpec::joint_default())?);
                }
                Strategy::Entailment => {
                    for pair in f.build_entailment_pairs(u, gold)? {
                        out.push(Example::single(pair, Head::Pair));
                    }
                }
                Strategy::StandardPrompt => {
                    out.push(Example::single(f.build_prompt(u, gold)?, Head::MaskFill));
                }
                Strategy::PromptDemonstrations => {
                    let demos = self.pool.sample(Some(u), &mut rng)?;
                    out.push(Example::single(
                        f.build_demonstration_input(u, &demos, gold)?,
                        Head::MaskFill,
                    ));
                }
                Strategy::PromptInverse => {
                    out.push(Example::single(
                        f.build_inverse_input(u, item.label, &mut rng)?,
                        Head::MaskFill,
                    ));
                }
                Strategy::RandomRate => return Err(EvalError::NotTrainable(Strategy::RandomRate)),
            }
        }
        Ok(out)
    }
}

impl EpochSource for StrategyData<'_> {
    fn examples(&mut self, epoch: usize) -> Result<Vec<Example>, TrainError> {
        self.build(epoch).map_err(|e| match e {
            EvalError::Train(t) => t,
            other => TrainError::Data(other.to_string()),
        })
    }
}

/// A model together with the strategy it was fitted under, or the
/// frequency-weighted guessing baseline.
#[derive(Debug, Clone)]
pub enum Classifier<M> {
    Model {
        strategy: Strategy,
        model: M,
        demonstrations: DemonstrationPool,
    },
    RandomRate {
        frequencies: [f64; NUM_LABELS],
    },
}

impl<M> Classifier<M> {
    pub fn strategy(&self) -> Strategy {
        match self {
            Classifier::Model { strategy, .. } => *strategy,
            Classifier::RandomRate { .. } => Strategy::RandomRate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub utterance_id: String,
    pub gold: DisorderLabel,
    pub predicted: DisorderLabel,
    pub class_probabilities: [f64; NUM_LABELS],
}

pub fn argmax(values: &[f64; NUM_LABELS]) -> DisorderLabel {
    let mut best = 0;
    for i in 1..NUM_LABELS {
        if values[i] > values[best] {
            best = i;
        }
    }
    DisorderLabel::ALL[best]
}

/// Scales non-negative masses to sum to one.
pub fn renormalize(masses: [f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        masses.map(|m| m / total)
    } else {
        [1.0 / NUM_LABELS as f64; NUM_LABELS]
    }
}

/// `exp(-loss)` renormalised, so the lowest loss gets the highest probability.
pub fn softmin(losses: [f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    renormalize(losses.map(|l| (min - l).exp()))
}

/// Mask draws whose losses are averaged per inverse candidate at inference.
/// Each draw masks the same positions for all four candidates; a single draw
/// is noisy when it happens to hide only class-neutral words.
pub const INVERSE_DRAWS: u64 = 8;

/// Class distribution for `text` under a fitted classifier.
pub fn class_probabilities<M: MaskedLanguageModel>(
    classifier: &Classifier<M>,
    formulator: &Formulator,
    text: &str,
    seed: u64,
) -> Result<[f64; NUM_LABELS], EvalError> {
    let (strategy, model, pool) = match classifier {
        Classifier::RandomRate { frequencies } => return Ok(*frequencies),
        Classifier::Model {
            strategy,
            model,
            demonstrations,
        } => (*strategy, model, demonstrations),
    };
    let useed = utterance_seed(text, seed);
    let f = formulator;
    let verbalizer_masses = |dist: &[f64]| f.verbalizer_tokens().map(|t| dist[t as usize]);
    Ok(match strategy {
        Strategy::StandardFinetune
        | Strategy::MultitaskMlmSeparate
        | Strategy::MultitaskMlmJoint => model.classify(&f.encode_standard(text, None)?)?,
        Strategy::Entailment => {
            let mut masses = [0.0; NUM_LABELS];
            for (i, pair) in f.build_entailment_pairs(text, None)?.iter().enumerate() {
                masses[i] = model.pair_classify(pair)?[ENTAILS];
            }
            renormalize(masses)
        }
        Strategy::StandardPrompt => {
            let x = f.build_prompt(text, None)?;
            renormalize(verbalizer_masses(
                &model.fill_mask(&x, &x.mask_positions)?[0],
            ))
        }
        Strategy::PromptDemonstrations => {
            let demos = pool.sample(Some(text), &mut ChaCha8Rng::seed_from_u64(useed))?;
            let x = f.build_demonstration_input(text, &demos, None)?;
            // the query mask is the first one; demonstrations carry filled slots
            renormalize(verbalizer_masses(
                &model.fill_mask(&x, &x.mask_positions[..1])?[0],
            ))
        }
        Strategy::PromptInverse => {
            let mut losses = [0.0; NUM_LABELS];
            for d in 0..INVERSE_DRAWS {
                let draw_seed = useed ^ d.wrapping_mul(0x9e37_79b9_7f4a_7c15);
                for (i, input) in f.inverse_candidates(text, draw_seed)?.iter().enumerate() {
                    losses[i] += model.loss(input, Head::MaskFill)? / INVERSE_DRAWS as f64;
                }
            }
            softmin(losses)
        }
        Strategy::RandomRate => return Err(EvalError::NotTrainable(strategy)),
    })
}

/// Predicts one utterance, checking that the classifier matches `strategy`.
pub fn predict<M: MaskedLanguageModel>(
    strategy: Strategy,
    classifier: &Classifier<M>,
    formulator: &Formulator,
    item: &LabeledUtterance,
    seed: u64,
) -> Result<Prediction, EvalError> {
    if classifier.strategy() != strategy {
        return Err(EvalError::StrategyMismatch {
            expected: strategy,
            found: classifier.strategy(),
        });
    }
    let probs = class_probabilities(classifier, formulator, &item.text, seed)?;
    let predicted = match classifier {
        Classifier::RandomRate { frequencies } => {
            let dist = WeightedIndex::new(frequencies)
                .map_err(|_| EvalError::InvalidFrequencies(*frequencies))?;
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(&item.id, seed));
            DisorderLabel::ALL[dist.sample(&mut rng)]
        }
        Classifier::Model { .. } => argmax(&probs),
    };
    Ok(Prediction {
        utterance_id: item.id.clone(),
        gold: item.label,
        predicted,
        class_probabilities: probs,
    })
}

pub fn predict_all<M: MaskedLanguageModel>(
    strategy: Strategy,
    classifier: &Classifier<M>,
    formulator: &Formulator,
    items: &[LabeledUtterance],
    seed: u64,
) -> Result<Vec<Prediction>, EvalError> {
    items
        .iter()
        .map(|it| predict(strategy, classifier, formulator, it, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: DisorderLabel,
    pub support: usize,
    /// Within-class recall in percent; `None` when the class is absent from gold.
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_accuracy: f64,
    pub macro_f1: f64,
    /// Rows are gold labels, columns predictions.
    pub confusion: [[usize; NUM_LABELS]; NUM_LABELS],
}

/// Unweighted mean of the defined values.
pub fn macro_average(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

pub fn confusion_matrix(predictions: &[Prediction]) -> [[usize; NUM_LABELS]; NUM_LABELS] {
    let mut m = [[0; NUM_LABELS]; NUM_LABELS];
    for p in predictions {
        m[p.gold.index()][p.predicted.index()] += 1;
    }
    m
}

pub fn evaluate(predictions: &[Prediction]) -> Result<MetricsReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let confusion = confusion_matrix(predictions);
    let per_class: Vec<ClassMetrics> = DisorderLabel::ALL
        .iter()
        .map(|&label| {
            let c = label.index();
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            if support == 0 {
                log::warn!(
                    "class {label} is absent from the gold labels; excluded from macro averages"
                );
                return ClassMetrics {
                    label,
                    support,
                    accuracy: None,
                    f1: None,
                };
            }
            let recall = tp / support as f64;
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label,
                support,
                accuracy: Some(100.0 * recall),
                f1: Some(100.0 * f1),
            }
        })
        .collect();
    let accs: Vec<Option<f64>> = per_class.iter().map(|m| m.accuracy).collect();
    let f1s: Vec<Option<f64>> = per_class.iter().map(|m| m.f1).collect();
    Ok(MetricsReport {
        macro_accuracy: macro_average(&accs).ok_or(EvalError::EmptyPredictions)?,
        macro_f1: macro_average(&f1s).ok_or(EvalError::EmptyPredictions)?,
        per_class,
        confusion,
    })
}

/// Mean of per-class and macro metrics over repeats; confusion counts are summed.
pub fn average_reports(reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyPredictions)?;
    let n = reports.len() as f64;
    let mean_of = |get: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(get).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let per_class = (0..NUM_LABELS)
        .map(|c| ClassMetrics {
            label: first.per_class[c].label,
            support: reports.iter().map(|r| r.per_class[c].support).sum(),
            accuracy: mean_of(&|r| r.per_class[c].accuracy),
            f1: mean_of(&|r| r.per_class[c].f1),
        })
        .collect();
    let mut confusion = [[0; NUM_LABELS]; NUM_LABELS];
    for r in reports {
        for i in 0..NUM_LABELS {
            for j in 0..NUM_LABELS {
                confusion[i][j] += r.confusion[i][j];
            }
        }
    }
    Ok(MetricsReport {
        per_class,
        macro_accuracy: reports.iter().map(|r| r.macro_accuracy).sum::<f64>() / n,
        macro_f1: reports.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        confusion,
    })
}

pub fn class_frequencies<'a, I>(labels: I) -> [f64; NUM_LABELS]
where
    I: IntoIterator<Item = &'a DisorderLabel>,
{
    let mut counts = [0usize; NUM_LABELS];
    for l in labels {
        counts[l.index()] += 1;
    }
    let total: usize = counts.iter().sum();
    counts.map(|c| {
        if total == 0 {
            0.0
        } else {
            c as f64 / total as f64
        }
    })
}

/// Expected per-class accuracy (percent) of guessing each class with its own
/// frequency: `100 * f^2`.
pub fn random_rate(frequencies: [f64; NUM_LABELS]) -> Result<[f64; NUM_LABELS], EvalError> {
    let sum: f64 = frequencies.iter().sum();
    if frequencies.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(EvalError::InvalidFrequencies(frequencies));
    }
    Ok(frequencies.map(|f| 100.0 * f * f))
}

/// Swaps the sampled per-class accuracies of a random-rate report for their
/// expected values `100 f^2`. F1 and the confusion counts stay as sampled.
pub fn expected_random_accuracy(
    mut report: MetricsReport,
    frequencies: [f64; NUM_LABELS],
) -> Result<MetricsReport, EvalError> {
    let rates = random_rate(frequencies)?;
    for m in &mut report.per_class {
        if m.accuracy.is_some() {
            m.accuracy = Some(rates[m.label.index()]);
        }
    }
    let accs: Vec<Option<f64>> = report.per_class.iter().map(|m| m.accuracy).collect();
    report.macro_accuracy = macro_average(&accs).ok_or(EvalError::EmptyPredictions)?;
    Ok(report)
}

/// Metrics of `predictions` made by `classifier`.
pub fn evaluate_classifier<M>(
    classifier: &Classifier<M>,
    predictions: &[Prediction],
) -> Result<MetricsReport, EvalError> {
    let report = evaluate(predictions)?;
    match classifier {
        Classifier::RandomRate { frequencies } => expected_random_accuracy(report, *frequencies),
        Classifier::Model { .. } => Ok(report),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub strategy: Strategy,
    pub mean: MetricsReport,
    pub repeats: Vec<MetricsReport>,
}

pub struct ExperimentOutcome<M> {
    pub report: ExperimentReport,
    pub classifiers: Vec<Classifier<M>>,
    pub histories: Vec<Vec<History>>,
    pub predictions: Vec<Vec<Prediction>>,
}

/// Train, validation and test utterances of one split.
#[derive(Debug, Clone, Copy)]
pub struct SplitView<'a> {
    pub train: &'a [LabeledUtterance],
    pub validation: &'a [LabeledUtterance],
    pub test: &'a [LabeledUtterance],
}

/// Fits one model under `strategy`. The separate multitask strategy runs a
/// masked-token phase followed by a classification phase on the same weights.
pub fn train_strategy<M: Trainable>(
    strategy: Strategy,
    model: M,
    formulator: &Formulator,
    train: &[LabeledUtterance],
    validation: &[LabeledUtterance],
    cfg: &TrainingConfig,
) -> Result<(Classifier<M>, Vec<History>), EvalError> {
    if !strategy.is_trainable() {
        return Err(EvalError::NotTrainable(strategy));
    }
    let pool = DemonstrationPool::new(train.iter().map(|u| (u.text.as_str(), u.label)));
    // validation inputs use a fixed draw so losses are comparable across epochs
    let val_seed = cfg.seed ^ 0x5eed;
    let phases: &[Phase] = if strategy == Strategy::MultitaskMlmSeparate {
        &[Phase::MaskedTokens, Phase::Classification]
    } else {
        &[Phase::Classification]
    };
    let mut model = model;
    let mut histories = Vec::new();
    for &phase in phases {
        let val = StrategyData::new(strategy, formulator, validation, &pool, val_seed)
            .with_phase(phase)
            .build(0)?;
        let mut data =
            StrategyData::new(strategy, formulator, train, &pool, cfg.seed).with_phase(phase);
        let fit = fine_tune(model, &mut data, &val, cfg)?;
        log::info!(
            "{strategy} {phase:?}: best epoch {} of {}, val loss {:.4}",
            fit.history.best_epoch,
            fit.history.epochs.len(),
            fit.history.best_val_loss
        );
        model = fit.model;
        histories.push(fit.history);
    }
    Ok((
        Classifier::Model {
            strategy,
            model,
            demonstrations: pool,
        },
        histories,
    ))
}

/// Validation loss of a fitted classifier under its own objective.
pub fn validation_loss<M: Trainable>(
    classifier: &Classifier<M>,
    formulator: &Formulator,
    validation: &[LabeledUtterance],
    seed: u64,
) -> Result<f64, EvalError> {
    let Classifier::Model {
        strategy,
        model,
        demonstrations,
    } = classifier
    else {
        return Err(EvalError::NotTrainable(Strategy::RandomRate));
    };
    let val = StrategyData::new(
        *strategy,
        formulator,
        validation,
        demonstrations,
        seed ^ 0x5eed,
    )
    .build(0)?;
    Ok(mean_loss(model, &val)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub hyper: HyperParams,
    pub val_loss: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: HyperParams,
    pub trials: Vec<Trial>,
}

/// Trains one model per sampled grid point and keeps the point with the lowest
/// validation loss. A diverged trial counts as infinite loss.
pub fn grid_search<M, F>(
    strategy: Strategy,
    make_model: F,
    formulator: &Formulator,
    train: &[LabeledUtterance],
    validation: &[LabeledUtterance],
    cfg: &TrainingConfig,
) -> Result<SearchOutcome, EvalError>
where
    M: Trainable,
    F: Fn(u64) -> M,
{
    cfg.validate()?;
    let mut trials = Vec::new();
    for hyper in cfg.search.sample(cfg.grid_budget, cfg.seed) {
        let tcfg = TrainingConfig {
            hyper,
            ..cfg.clone()
        };
        let trial = match train_strategy(
            strategy,
            make_model(cfg.seed),
            formulator,
            train,
            validation,
            &tcfg,
        ) {
            Ok((_, histories)) => {
                let last = histories.last().expect("at least one phase");
                Trial {
                    hyper,
                    val_loss: last.best_val_loss,
                    epochs: histories.iter().map(|h| h.epochs.len()).sum(),
                }
            }
            Err(EvalError::Train(TrainError::Diverged { epoch, .. })) => {
                log::warn!("{strategy} {hyper:?}: diverged at epoch {epoch}");
                Trial {
                    hyper,
                    val_loss: f64::INFINITY,
                    epochs: epoch,
                }
            }
            Err(e) => return Err(e),
        };
        log::info!("{strategy} {hyper:?}: val loss {:.4}", trial.val_loss);
        trials.push(trial);
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .map(|t| t.hyper)
        .ok_or(EvalError::Train(TrainError::InvalidConfig(
            "grid_budget must be positive".into(),
        )))?;
    Ok(SearchOutcome { best, trials })
}

/// Trains `cfg.repeats` models and reports the mean test metrics.
pub fn run_experiment<M, F>(
    strategy: Strategy,
    make_model: F,
    formulator: &Formulator,
    split: SplitView<'_>,
    cfg: &TrainingConfig,
) -> Result<ExperimentOutcome<M>, EvalError>
where
    M: Trainable,
    F: Fn(u64) -> M,
{
    cfg.validate()?;
    let mut outcome = ExperimentOutcome {
        report: ExperimentReport {
            strategy,
            mean: MetricsReport {
                per_class: Vec::new(),
                macro_accuracy: 0.0,
                macro_f1: 0.0,
                confusion: [[0; NUM_LABELS]; NUM_LABELS],
            },
            repeats: Vec::new(),
        },
        classifiers: Vec::new(),
        histories: Vec::new(),
        predictions: Vec::new(),
    };
    for repeat in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(repeat as u64);
        let (classifier, histories) = if strategy == Strategy::RandomRate {
            let frequencies = class_frequencies(split.train.iter().map(|u| &u.label));
            (Classifier::RandomRate { frequencies }, Vec::new())
        } else {
            let rcfg = TrainingConfig {
                seed,
                ..cfg.clone()
            };
            train_strategy(
                strategy,
                make_model(seed),
                formulator,
                split.train,
                split.validation,
                &rcfg,
            )?
        };
        let preds = predict_all(strategy, &classifier, formulator, split.test, seed)?;
        outcome
            .report
            .repeats
            .push(evaluate_classifier(&classifier, &preds)?);
        outcome.classifiers.push(classifier);
        outcome.histories.push(histories);
        outcome.predictions.push(preds);
    }
    outcome.report.mean = average_reports(&outcome.report.repeats)?;
    Ok(outcome)
}

/// `value (arrow delta)` relative to a reference, one decimal place.
pub fn format_deviation(value: f64, reference: f64) -> String {
    let delta = value - reference;
    let rounded = (delta * 10.0).round() / 10.0;
    let arrow = if rounded > 0.0 {
        "↑"
    } else if rounded < 0.0 {
        "↓"
    } else {
        "↔"
    };
    format!("{value:.1} ({arrow} {:.1})", rounded.abs())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into())
}

/// Markdown table with per-class accuracy and F1 columns and macro columns,
/// deviations relative to `reference` when given.
pub fn render_table(reports: &[ExperimentReport], reference: Option<&ExperimentReport>) -> String {
    let mut out = String::from("| Strategy |");
    for l in DisorderLabel::ALL {
        out.push_str(&format!(" {l} Acc. | {l} F1 |"));
    }
    out.push_str(" Macro Acc. | Macro F1 |\n|---|");
    out.push_str(&"---|".repeat(2 * NUM_LABELS + 2));
    out.push('\n');
    for r in reports {
        out.push_str(&format!("| {} |", r.strategy));
        for c in &r.mean.per_class {
            let f1 = if r.strategy == Strategy::RandomRate {
                None
            } else {
                c.f1
            };
            out.push_str(&format!(" {} | {} |", cell(c.accuracy), cell(f1)));
        }
        let is_ref = reference.is_some_and(|x| std::ptr::eq(x, r) || x.strategy == r.strategy);
        let (acc, f1) = match reference {
            Some(base) if !is_ref => (
                format_deviation(r.mean.macro_accuracy, base.mean.macro_accuracy),
                format_deviation(r.mean.macro_f1, base.mean.macro_f1),
            ),
            _ => (
                format!("{:.1}", r.mean.macro_accuracy),
                format!("{:.1}", r.mean.macro_f1),
            ),
        };
        let f1 = if r.strategy == Strategy::RandomRate {
            "-".to_string()
        } else {
            f1
        };
        out.push_str(&format!(" {acc} | {f1} |\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use DisorderLabel::*;

    fn pred(gold: DisorderLabel, predicted: DisorderLabel) -> Prediction {
        let mut p = [0.0; 4];
        p[predicted.index()] = 1.0;
        Prediction {
            utterance_id: String::new(),
            gold,
            predicted,
            class_probabilities: p,
        }
    }

    #[test]
    fn random_rate_rows_report_expected_accuracy() {
        let preds = vec![
            pred(Fluent, Fluent),
            pred(Fluent, Anomia),
            pred(Anomia, Anomia),
            pred(Anomia, Anomia),
        ];
        let clf: Classifier<()> = Classifier::RandomRate {
            frequencies: [0.5, 0.5, 0.0, 0.0],
        };
        let r = evaluate_classifier(&clf, &preds).unwrap();
        assert_eq!(r.per_class[0].accuracy, Some(25.0));
        assert_eq!(r.per_class[1].accuracy, Some(25.0));
        assert_eq!(r.per_class[2].accuracy, None);
        assert_eq!(r.macro_accuracy, 25.0);
        // sampled counts are kept
        assert_eq!(r.confusion[0], [1, 1, 0, 0]);
        assert_eq!(r.per_class[1].f1, evaluate(&preds).unwrap().per_class[1].f1);
    }

    #[test]
    fn inference_rules() {
        assert_eq!(argmax(&renormalize([0.9, 0.2, 0.1, 0.3])), Fluent);
        let inv = softmin([2.0, 1.1, 3.0, 2.5]);
        assert_eq!(argmax(&inv), Anomia);
        assert!((inv.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let r = renormalize([0.02, 0.01, 0.03, 0.04]);
        for (a, b) in r.iter().zip([0.2, 0.1, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(argmax(&r), Agrammatism);
    }

    #[test]
    fn perfect_classifier_scores_100() {
        let preds: Vec<_> = DisorderLabel::ALL.iter().map(|&l| pred(l, l)).collect();
        let m = evaluate(&preds).unwrap();
        assert_eq!(m.macro_accuracy, 100.0);
        assert_eq!(m.macro_f1, 100.0);
    }

    #[test]
    fn hand_computed_confusion() {
        // gold F F F F A A D D G G, predicted F F F D A F D D G F
        let gold = [
            Fluent,
            Fluent,
            Fluent,
            Fluent,
            Anomia,
            Anomia,
            Disfluency,
            Disfluency,
            Agrammatism,
            Agrammatism,
        ];
        let got = [
            Fluent,
            Fluent,
            Fluent,
            Disfluency,
            Anomia,
            Fluent,
            Disfluency,
            Disfluency,
            Agrammatism,
            Fluent,
        ];
        let preds: Vec<_> = gold.iter().zip(got).map(|(&g, p)| pred(g, p)).collect();
        let m = evaluate(&preds).unwrap();
        // recalls 3/4, 1/2, 2/2, 1/2
        let acc: Vec<f64> = m.per_class.iter().map(|c| c.accuracy.unwrap()).collect();
        assert_eq!(acc, vec![75.0, 50.0, 100.0, 50.0]);
        assert_eq!(m.macro_accuracy, 68.75);
        // precisions 3/5, 1/1, 2/3, 1/1
        let f1 = [
            2.0 * 0.6 * 0.75 / 1.35,
            2.0 * 0.5 / 1.5,
            2.0 * (2.0 / 3.0) / (5.0 / 3.0),
            2.0 * 0.5 / 1.5,
        ];
        for (c, e) in m.per_class.iter().zip(f1) {
            assert!((c.f1.unwrap() - 100.0 * e).abs() < 1e-9);
        }
        assert_eq!(m.confusion[0], [3, 0, 1, 0]);
        assert_eq!(m.confusion[1], [1, 1, 0, 0]);
    }

    #[test]
    fn absent_class_excluded_from_macro() {
        let preds = vec![pred(Fluent, Fluent), pred(Anomia, Fluent)];
        let m = evaluate(&preds).unwrap();
        assert_eq!(m.per_class[2].accuracy, None);
        assert_eq!(m.macro_accuracy, 50.0);
        assert!(evaluate(&[]).is_err());
    }

    #[test]
    fn random_rate_values() {
        assert_eq!(
            random_rate([1.0, 0.0, 0.0, 0.0]).unwrap(),
            [100.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            random_rate([0.5, 0.5, 0.0, 0.0]).unwrap(),
            [25.0, 25.0, 0.0, 0.0]
        );
        assert!(random_rate([0.5, 0.6, 0.0, 0.0]).is_err());
        let f = class_frequencies(&[Fluent, Fluent, Anomia, Disfluency]);
        assert_eq!(f, [0.5, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn averaging_repeats() {
        let mk = |macro_f1: f64| MetricsReport {
            per_class: DisorderLabel::ALL
                .iter()
                .map(|&label| ClassMetrics {
                    label,
                    support: 1,
                    accuracy: Some(macro_f1),
                    f1: Some(macro_f1),
                })
                .collect(),
            macro_accuracy: macro_f1,
            macro_f1,
            confusion: [[1, 0, 0, 0]; 4],
        };
        let avg = average_reports(&[mk(70.0), mk(72.0), mk(74.0)]).unwrap();
        assert_eq!(avg.macro_f1, 72.0);
        assert_eq!(avg.confusion[0][0], 3);
        assert_eq!(average_reports(&[mk(70.0)]).unwrap(), mk(70.0));
    }

    #[test]
    fn deviations() {
        assert_eq!(format_deviation(69.9, 65.1), "69.9 (↑ 4.8)");
        assert_eq!(format_deviation(1.2, 65.1), "1.2 (↓ 63.9)");
        assert_eq!(format_deviation(65.1, 65.1), "65.1 (↔ 0.0)");
    }

    proptest! {
        #[test]
        fn macro_is_mean_and_matches_brute_force(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let preds: Vec<_> = pairs.iter().map(|&(g, p)| pred(DisorderLabel::ALL[g], DisorderLabel::ALL[p])).collect();
            let m = evaluate(&preds).unwrap();
            let mut per = Vec::new();
            for c in 0..4 {
                let support = pairs.iter().filter(|(g, _)| *g == c).count();
                let hits = pairs.iter().filter(|(g, p)| *g == c && *p == c).count();
                if support > 0 {
                    per.push(100.0 * hits as f64 / support as f64);
                    prop_assert!((m.per_class[c].accuracy.unwrap() - per.last().unwrap()).abs() < 1e-9);
                }
            }
            let mean = per.iter().sum::<f64>() / per.len() as f64;
            prop_assert!((m.macro_accuracy - mean).abs() < 1e-9);
        }

        #[test]
        fn softmin_agrees_with_argmin(losses in prop::array::uniform4(0.0..20.0f64)) {
            let p = softmin(losses);
            let argmin = (0..4).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).unwrap();
            prop_assert_eq!(argmax(&p).index(), argmin);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
