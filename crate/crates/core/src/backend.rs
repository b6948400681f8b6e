//! Masked-language-model backend contract and the bundled tiny encoder.
//!
//! A backend exposes three heads over one shared encoder: four-way sequence
//! classification read at `[CLS]`, two-way pair classification (entails / does
//! not entail) read at `[CLS]`, and mask filling over the whole vocabulary.
//!
//! [`TinyEncoder`] is a single-block attention encoder with hand-written
//! gradients. It is small enough to train from random initialisation in
//! seconds, and it can be saved after masked-token pre-training and reloaded as
//! a pre-trained starting point.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::formulation::{FormulationInput, Target};
use crate::label::NUM_LABELS;
use crate::vocab::{TokenId, Vocab, MASK};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(TokenId),
    #[error("position {0} is not a [MASK] token")]
    NotAMask(usize),
    #[error("input target does not match the {0:?} head")]
    TargetMismatch(Head),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Output head a loss is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Classification,
    Pair,
    MaskFill,
}

/// Inference surface of a pre-trained masked language model.
pub trait MaskedLanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocab;

    fn max_sequence_length(&self) -> usize;

    /// Softmax over the four disorder classes.
    fn classify(&self, input: &FormulationInput) -> Result<[f64; NUM_LABELS], ModelError>;

    /// Softmax over (entails, does not entail).
    fn pair_classify(&self, input: &FormulationInput) -> Result<[f64; 2], ModelError>;

    /// One vocabulary distribution per requested `[MASK]` position.
    fn fill_mask(
        &self,
        input: &FormulationInput,
        positions: &[usize],
    ) -> Result<Vec<Vec<f64>>, ModelError>;

    /// Cross-entropy of the input's target under `head`. For mask filling this is
    /// the mean over the target positions.
    fn loss(&self, input: &FormulationInput, head: Head) -> Result<f64, ModelError>;
}

/// A backend whose parameters can be fitted by gradient descent.
pub trait Trainable: MaskedLanguageModel + Clone {
    fn parameters(&self) -> &[f64];

    fn parameters_mut(&mut self) -> &mut [f64];

    /// Returns the loss and adds `weight * d(loss)/d(params)` into `grad`.
    fn accumulate_gradient(
        &self,
        input: &FormulationInput,
        head: Head,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64, ModelError>;
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: ArrayView1<f64>) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig {
            d_model: 24,
            d_ff: 48,
            max_len: 128,
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    v: usize,
    d: usize,
    f: usize,
    l: usize,
    emb: usize,
    pos: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wc: usize,
    bc: usize,
    wp: usize,
    bp: usize,
    wm: usize,
    bm: usize,
    total: usize,
}

impl Layout {
    fn new(v: usize, cfg: TinyConfig) -> Layout {
        let (d, f, l) = (cfg.d_model, cfg.d_ff, cfg.max_len);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let emb = take(v * d);
        let pos = take(l * d);
        let wq = take(d * d);
        let wk = take(d * d);
        let wv = take(d * d);
        let w1 = take(d * f);
        let b1 = take(f);
        let w2 = take(f * d);
        let b2 = take(d);
        let wc = take(d * NUM_LABELS);
        let bc = take(NUM_LABELS);
        let wp = take(d * 2);
        let bp = take(2);
        let wm = take(d * v);
        let bm = take(v);
        Layout {
            v,
            d,
            f,
            l,
            emb,
            pos,
            wq,
            wk,
            wv,
            w1,
            b1,
            w2,
            b2,
            wc,
            bc,
            wp,
            bp,
            wm,
            bm,
            total: at,
        }
    }
}

/// Single-block bidirectional attention encoder over word tokens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinyEncoder {
    config: TinyConfig,
    vocab: Vocab,
    params: Vec<f64>,
    #[serde(skip)]
    layout: Option<Layout>,
}

struct Activations {
    tokens: Vec<usize>,
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
    h: Array2<f64>,
}

impl TinyEncoder {
    /// Randomly initialised encoder.
    pub fn new(vocab: Vocab, config: TinyConfig, seed: u64) -> TinyEncoder {
        let layout = Layout::new(vocab.len(), config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |offset: usize, n: usize, scale: f64| {
            for p in &mut params[offset..offset + n] {
                *p = rng.gen_range(-scale..scale);
            }
        };
        let (v, d, f, l) = (layout.v, layout.d, layout.f, layout.l);
        let uniform = |fan_in: usize| (3.0 / fan_in as f64).sqrt();
        fill(layout.emb, v * d, 0.3);
        fill(layout.pos, l * d, 0.1);
        for w in [layout.wq, layout.wk, layout.wv] {
            fill(w, d * d, uniform(d));
        }
        fill(layout.w1, d * f, uniform(d));
        fill(layout.w2, f * d, uniform(f));
        fill(layout.wc, d * NUM_LABELS, uniform(d));
        fill(layout.wp, d * 2, uniform(d));
        fill(layout.wm, d * v, uniform(d));
        TinyEncoder {
            config,
            vocab,
            params,
            layout: Some(layout),
        }
    }

    pub fn config(&self) -> TinyConfig {
        self.config
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        self.layout
            .unwrap_or_else(|| Layout::new(self.vocab.len(), self.config))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let json =
            serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TinyEncoder, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let mut model: TinyEncoder =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let layout = Layout::new(model.vocab.len(), model.config);
        if layout.total != model.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                model.params.len()
            )));
        }
        model.layout = Some(layout);
        Ok(model)
    }

    fn mat(&self, offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[offset..offset + rows * cols]).unwrap()
    }

    fn vec(&self, offset: usize, n: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[offset..offset + n])
    }

    fn check(&self, input: &FormulationInput) -> Result<Vec<usize>, ModelError> {
        let n = input.tokens.len();
        if n == 0 {
            return Err(ModelError::EmptySequence);
        }
        if n > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: n,
                max: self.config.max_len,
            });
        }
        input
            .tokens
            .iter()
            .map(|&t| {
                if (t as usize) < self.vocab.len() {
                    Ok(t as usize)
                } else {
                    Err(ModelError::UnknownToken(t))
                }
            })
            .collect()
    }

    fn forward(&self, input: &FormulationInput) -> Result<Activations, ModelError> {
        let tokens = self.check(input)?;
        let ly = self.layout();
        let (d, n) = (ly.d, tokens.len());
        let emb = self.mat(ly.emb, ly.v, d);
        let pos = self.mat(ly.pos, ly.l, d);
        let mut x = Array2::<f64>::zeros((n, d));
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &emb.row(t);
            row += &pos.row(i);
        }
        let q = x.dot(&self.mat(ly.wq, d, d));
        let k = x.dot(&self.mat(ly.wk, d, d));
        let v = x.dot(&self.mat(ly.wv, d, d));
        let scale = 1.0 / (d as f64).sqrt();
        let mut a = q.dot(&k.t()) * scale;
        for mut row in a.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        let z = &x + &a.dot(&v);
        let u = z.dot(&self.mat(ly.w1, d, ly.f)) + &self.vec(ly.b1, ly.f);
        let g = u.mapv(f64::tanh);
        let h = &z + &g.dot(&self.mat(ly.w2, ly.f, d)) + &self.vec(ly.b2, d);
        Ok(Activations {
            tokens,
            x,
            q,
            k,
            v,
            a,
            z,
            g,
            h,
        })
    }

    fn head_logits(&self, h: ArrayView1<f64>, head: Head) -> Array1<f64> {
        let ly = self.layout();
        match head {
            Head::Classification => {
                h.dot(&self.mat(ly.wc, ly.d, NUM_LABELS)) + &self.vec(ly.bc, NUM_LABELS)
            }
            Head::Pair => h.dot(&self.mat(ly.wp, ly.d, 2)) + &self.vec(ly.bp, 2),
            Head::MaskFill => h.dot(&self.mat(ly.wm, ly.d, ly.v)) + &self.vec(ly.bm, ly.v),
        }
    }

    fn head_offsets(&self, head: Head) -> (usize, usize, usize) {
        let ly = self.layout();
        match head {
            Head::Classification => (ly.wc, ly.bc, NUM_LABELS),
            Head::Pair => (ly.wp, ly.bp, 2),
            Head::MaskFill => (ly.wm, ly.bm, ly.v),
        }
    }

    /// (position, class) pairs the loss is taken over.
    fn loss_targets(
        input: &FormulationInput,
        head: Head,
    ) -> Result<Vec<(usize, usize)>, ModelError> {
        match (head, &input.target) {
            (Head::Classification, Target::Class(c)) if *c < NUM_LABELS => Ok(vec![(0, *c)]),
            (Head::Pair, Target::Class(c)) if *c < 2 => Ok(vec![(0, *c)]),
            (Head::MaskFill, Target::Tokens(t)) if !t.is_empty() => {
                t.iter().map(|&(p, tok)| Ok((p, tok as usize))).collect()
            }
            _ => Err(ModelError::TargetMismatch(head)),
        }
    }

    fn backward(&self, acts: &Activations, dh: &Array2<f64>, weight: f64, grad: &mut [f64]) {
        let ly = self.layout();
        let (d, f) = (ly.d, ly.f);
        let add_mat = |grad: &mut [f64], offset: usize, m: &Array2<f64>| {
            for (g, v) in grad[offset..offset + m.len()].iter_mut().zip(m.iter()) {
                *g += weight * v;
            }
        };
        let add_vec = |grad: &mut [f64], offset: usize, m: &Array1<f64>| {
            for (g, v) in grad[offset..offset + m.len()].iter_mut().zip(m.iter()) {
                *g += weight * v;
            }
        };
        // feed-forward block: h = z + tanh(z w1 + b1) w2 + b2
        add_mat(grad, ly.w2, &acts.g.t().dot(dh));
        add_vec(grad, ly.b2, &dh.sum_axis(Axis(0)));
        let dg = dh.dot(&self.mat(ly.w2, f, d).t());
        let du = &dg * &acts.g.mapv(|g| 1.0 - g * g);
        add_mat(grad, ly.w1, &acts.z.t().dot(&du));
        add_vec(grad, ly.b1, &du.sum_axis(Axis(0)));
        let dz = dh + &du.dot(&self.mat(ly.w1, d, f).t());
        // attention block: z = x + softmax(q k^T / sqrt(d)) v
        let scale = 1.0 / (d as f64).sqrt();
        let da = dz.dot(&acts.v.t());
        let dv = acts.a.t().dot(&dz);
        let row_dot = (&da * &acts.a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = &acts.a * &(&da - &row_dot) * scale;
        let dq = ds.dot(&acts.k);
        let dk = ds.t().dot(&acts.q);
        add_mat(grad, ly.wq, &acts.x.t().dot(&dq));
        add_mat(grad, ly.wk, &acts.x.t().dot(&dk));
        add_mat(grad, ly.wv, &acts.x.t().dot(&dv));
        let dx = &dz
            + &dq.dot(&self.mat(ly.wq, d, d).t())
            + &dk.dot(&self.mat(ly.wk, d, d).t())
            + &dv.dot(&self.mat(ly.wv, d, d).t());
        for (i, &t) in acts.tokens.iter().enumerate() {
            let row = dx.row(i);
            for j in 0..d {
                grad[ly.emb + t * d + j] += weight * row[j];
                grad[ly.pos + i * d + j] += weight * row[j];
            }
        }
    }

    fn loss_impl(
        &self,
        input: &FormulationInput,
        head: Head,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64, ModelError> {
        let targets = Self::loss_targets(input, head)?;
        let acts = self.forward(input)?;
        let n_targets = targets.len() as f64;
        let mut loss = 0.0;
        let mut dh = Array2::<f64>::zeros(acts.h.dim());
        let (w_off, b_off, out) = self.head_offsets(head);
        let d = self.layout().d;
        let mut dw = Array2::<f64>::zeros((d, out));
        let mut db = Array1::<f64>::zeros(out);
        for &(pos, class) in &targets {
            if pos >= acts.tokens.len() || class >= out {
                return Err(ModelError::TargetMismatch(head));
            }
            let h = acts.h.row(pos);
            let logits = self.head_logits(h, head);
            loss += (log_sum_exp(logits.view()) - logits[class]) / n_targets;
            if grad.is_some() {
                let mut dl = Array1::from(softmax(logits.as_slice().unwrap()));
                dl[class] -= 1.0;
                dl /= n_targets;
                dw += &h.insert_axis(Axis(1)).dot(&dl.view().insert_axis(Axis(0)));
                db += &dl;
                let dhp = self.mat(w_off, d, out).dot(&dl);
                let mut row = dh.row_mut(pos);
                row += &dhp;
            }
        }
        if let Some((grad, weight)) = grad {
            for (g, v) in grad[w_off..w_off + d * out].iter_mut().zip(dw.iter()) {
                *g += weight * v;
            }
            for (g, v) in grad[b_off..b_off + out].iter_mut().zip(db.iter()) {
                *g += weight * v;
            }
            self.backward(&acts, &dh, weight, grad);
        }
        Ok(loss)
    }
}

impl MaskedLanguageModel for TinyEncoder {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_sequence_length(&self) -> usize {
        self.config.max_len
    }

    fn classify(&self, input: &FormulationInput) -> Result<[f64; NUM_LABELS], ModelError> {
        let acts = self.forward(input)?;
        let logits = self.head_logits(acts.h.row(0), Head::Classification);
        let p = softmax(logits.as_slice().unwrap());
        Ok([p[0], p[1], p[2], p[3]])
    }

    fn pair_classify(&self, input: &FormulationInput) -> Result<[f64; 2], ModelError> {
        let acts = self.forward(input)?;
        let logits = self.head_logits(acts.h.row(0), Head::Pair);
        let p = softmax(logits.as_slice().unwrap());
        Ok([p[0], p[1]])
    }

    fn fill_mask(
        &self,
        input: &FormulationInput,
        positions: &[usize],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        for &p in positions {
            if input.tokens.get(p) != Some(&MASK) {
                return Err(ModelError::NotAMask(p));
            }
        }
        let acts = self.forward(input)?;
        Ok(positions
            .iter()
            .map(|&p| {
                softmax(
                    self.head_logits(acts.h.row(p), Head::MaskFill)
                        .as_slice()
                        .unwrap(),
                )
            })
            .collect())
    }

    fn loss(&self, input: &FormulationInput, head: Head) -> Result<f64, ModelError> {
        self.loss_impl(input, head, None)
    }
}

impl Trainable for TinyEncoder {
    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn accumulate_gradient(
        &self,
        input: &FormulationInput,
        head: Head,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64, ModelError> {
        self.loss_impl(input, head, Some((grad, weight)))
    }
}

/// Slice of the first `n` rows; used by tests that inspect embeddings.
#[doc(hidden)]
pub fn embedding_rows(model: &TinyEncoder, n: usize) -> Array2<f64> {
    let ly = model.layout();
    model.mat(ly.emb, ly.v, ly.d).slice(s![..n, ..]).to_owned()
}
