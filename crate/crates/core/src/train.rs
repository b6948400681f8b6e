//! Fine-tuning loop, loss definitions and hyper-parameter search.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Head, ModelError, Trainable};
use crate::formulation::FormulationInput;
use crate::label::ParseEnumError;

/// Reference minimum losses used to normalise the joint objective.
pub const JOINT_CLS_REFERENCE: f64 = 0.5139;
pub const JOINT_MLM_REFERENCE: f64 = 2.4149;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("loss diverged at epoch {epoch}: train loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("negative loss weight {0}")]
    NegativeWeight(f64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    AdamW,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Adam => "adam",
            Optimizer::AdamW => "adamw",
        })
    }
}

impl FromStr for Optimizer {
    type Err = ParseEnumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(Optimizer::Adam),
            "adamw" => Ok(Optimizer::AdamW),
            _ => Err(ParseEnumError::new("optimizer", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

/// Candidate values for each hyper-parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub optimizers: Vec<Optimizer>,
}

impl Default for SearchSpace {
    /// Pools for fine-tuning a full pre-trained encoder.
    fn default() -> Self {
        SearchSpace {
            learning_rates: vec![1e-5, 2e-5, 5e-5, 1e-4, 2e-4],
            batch_sizes: vec![16, 32, 64, 128],
            optimizers: vec![Optimizer::AdamW, Optimizer::Adam],
        }
    }
}

impl SearchSpace {
    /// Pools for the randomly initialised tiny encoder, which needs far larger
    /// steps and smaller batches than a pre-trained model.
    pub fn tiny() -> Self {
        SearchSpace {
            learning_rates: vec![1e-3, 2e-3, 5e-3, 1e-2, 2e-2],
            batch_sizes: vec![4, 8, 16, 32],
            optimizers: vec![Optimizer::AdamW, Optimizer::Adam],
        }
    }

    /// Full cartesian grid in pool order.
    pub fn grid(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &batch_size in &self.batch_sizes {
                for &optimizer in &self.optimizers {
                    out.push(HyperParams {
                        learning_rate,
                        batch_size,
                        optimizer,
                    });
                }
            }
        }
        out
    }

    /// `budget` distinct grid points drawn uniformly without replacement.
    pub fn sample(&self, budget: usize, seed: u64) -> Vec<HyperParams> {
        let grid = self.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grid.choose_multiple(&mut rng, budget.min(grid.len()))
            .copied()
            .collect()
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.learning_rates.contains(&hp.learning_rate)
            && self.batch_sizes.contains(&hp.batch_size)
            && self.optimizers.contains(&hp.optimizer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub search: SearchSpace,
    pub hyper: HyperParams,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub repeats: usize,
    pub grid_budget: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub warmup_steps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            search: SearchSpace::default(),
            hyper: HyperParams {
                learning_rate: 2e-5,
                batch_size: 16,
                optimizer: Optimizer::AdamW,
            },
            max_epochs: 50,
            early_stop_patience: 4,
            repeats: 3,
            grid_budget: 20,
            seed: 42,
            weight_decay: 0.0,
            grad_clip: None,
            warmup_steps: 0,
        }
    }
}

impl TrainingConfig {
    /// Defaults adjusted to the tiny encoder's search space.
    pub fn tiny() -> Self {
        TrainingConfig {
            search: SearchSpace::tiny(),
            hyper: HyperParams {
                learning_rate: 1e-2,
                batch_size: 8,
                optimizer: Optimizer::Adam,
            },
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !self.search.contains(&self.hyper) {
            return bad("hyper-parameters are not drawn from the search space");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.hyper.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    CrossEntropyClass,
    CrossEntropyMlm,
    JointWeighted { w_cls: f64, w_mlm: f64 },
}

impl LossSpec {
    /// Each objective divided by its reference minimum.
    pub fn joint_default() -> LossSpec {
        LossSpec::JointWeighted {
            w_cls: 1.0 / JOINT_CLS_REFERENCE,
            w_mlm: 1.0 / JOINT_MLM_REFERENCE,
        }
    }
}

/// `w_cls * l_cls + w_mlm * l_mlm`.
pub fn joint_loss(l_cls: f64, l_mlm: f64, w_cls: f64, w_mlm: f64) -> Result<f64, TrainError> {
    for w in [w_cls, w_mlm] {
        if w < 0.0 {
            return Err(TrainError::NegativeWeight(w));
        }
    }
    Ok(w_cls * l_cls + w_mlm * l_mlm)
}

/// One weighted loss term of a training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub input: FormulationInput,
    pub head: Head,
    pub weight: f64,
}

/// A training example; its loss is the weighted sum of its terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub terms: Vec<LossTerm>,
}

impl Example {
    pub fn single(input: FormulationInput, head: Head) -> Example {
        Example {
            terms: vec![LossTerm {
                input,
                head,
                weight: 1.0,
            }],
        }
    }

    /// Classification on the clean input plus masked-token loss on its masked
    /// copy, combined under `spec`.
    pub fn joint(
        clean: FormulationInput,
        masked: FormulationInput,
        spec: LossSpec,
    ) -> Result<Example, TrainError> {
        let (w_cls, w_mlm) = match spec {
            LossSpec::JointWeighted { w_cls, w_mlm } => (w_cls, w_mlm),
            LossSpec::CrossEntropyClass => (1.0, 0.0),
            LossSpec::CrossEntropyMlm => (0.0, 1.0),
        };
        joint_loss(0.0, 0.0, w_cls, w_mlm)?;
        Ok(Example {
            terms: vec![
                LossTerm {
                    input: clean,
                    head: Head::Classification,
                    weight: w_cls,
                },
                LossTerm {
                    input: masked,
                    head: Head::MaskFill,
                    weight: w_mlm,
                },
            ],
        })
    }

    pub fn loss<M: Trainable>(&self, model: &M) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for t in &self.terms {
            if t.weight != 0.0 {
                total += t.weight * model.loss(&t.input, t.head)?;
            }
        }
        Ok(total)
    }

    fn accumulate<M: Trainable>(
        &self,
        model: &M,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for t in &self.terms {
            if t.weight != 0.0 {
                total += t.weight
                    * model.accumulate_gradient(&t.input, t.head, scale * t.weight, grad)?;
            }
        }
        Ok(total)
    }
}

/// Produces the training examples for each epoch, so strategies can redraw
/// masks or demonstrations between epochs.
pub trait EpochSource {
    fn examples(&mut self, epoch: usize) -> Result<Vec<Example>, TrainError>;
}

impl EpochSource for Vec<Example> {
    fn examples(&mut self, _epoch: usize) -> Result<Vec<Example>, TrainError> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn write_jsonl(&self, path: &Path) -> Result<(), TrainError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.epochs {
            let line = serde_json::to_string(e).map_err(|e| TrainError::Data(e.to_string()))?;
            writeln!(file, "{line}")?;
        }
        Ok(())
    }
}

pub struct FitResult<M> {
    pub model: M,
    pub history: History,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &mut [f64], lr: f64, cfg: &TrainingConfig) {
        if cfg.hyper.optimizer == Optimizer::Adam && cfg.weight_decay > 0.0 {
            for (g, p) in grad.iter_mut().zip(params.iter()) {
                *g += cfg.weight_decay * p;
            }
        }
        if let Some(clip) = cfg.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                grad.iter_mut().for_each(|g| *g *= clip / norm);
            }
        }
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let decoupled = if cfg.hyper.optimizer == Optimizer::AdamW {
            cfg.weight_decay
        } else {
            0.0
        };
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
            params[i] -= lr * (update + decoupled * params[i]);
        }
    }
}

/// Mean loss over `examples` without updating the model.
pub fn mean_loss<M: Trainable>(model: &M, examples: &[Example]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let mut total = 0.0;
    for e in examples {
        total += e.loss(model)?;
    }
    Ok(total / examples.len() as f64)
}

/// Fits `model` with mini-batch Adam(W), keeping the parameters of the epoch
/// with the lowest validation loss and stopping after `early_stop_patience`
/// epochs without improvement.
pub fn fine_tune<M: Trainable>(
    mut model: M,
    train: &mut dyn EpochSource,
    validation: &[Example],
    cfg: &TrainingConfig,
) -> Result<FitResult<M>, TrainError> {
    cfg.validate()?;
    if validation.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let n_params = model.parameters().len();
    let mut opt = Adam::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..History::default()
    };
    let mut best = model.clone();
    let mut stale = 0;
    let mut step = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let mut examples = train.examples(epoch)?;
        if examples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        examples.shuffle(&mut rng);
        let mut train_total = 0.0;
        for batch in examples.chunks(cfg.hyper.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for ex in batch {
                train_total += ex.accumulate(&model, scale, &mut grad)?;
            }
            step += 1;
            let lr = if cfg.warmup_steps > 0 && step <= cfg.warmup_steps {
                cfg.hyper.learning_rate * step as f64 / cfg.warmup_steps as f64
            } else {
                cfg.hyper.learning_rate
            };
            opt.step(model.parameters_mut(), &mut grad, lr, cfg);
        }
        let train_loss = train_total / examples.len() as f64;
        let val_loss = mean_loss(&model, validation)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(FitResult {
        model: best,
        history,
    })
}

/// `{root}/{run_id}/repeat_{k}/best`
pub fn checkpoint_dir(root: &Path, run_id: &str, repeat: usize) -> PathBuf {
    root.join(run_id)
        .join(format!("repeat_{repeat}"))
        .join("best")
}
