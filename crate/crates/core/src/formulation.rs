//! Encoders that turn an utterance into the model input of each classification
//! formulation: plain sequence classification, masked-token prediction,
//! utterance/definition entailment pairs, and cloze prompts (plain, with one
//! demonstration per class, and the inverse label-conditioned variant).

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::label::{DisorderLabel, ParseEnumError, NUM_LABELS};
use crate::vocab::{is_special, split_words, TokenId, Vocab, CLS, MASK, SEP, UNK};

pub const MLM_MASK_RATE: f64 = 0.15;
pub const INVERSE_MASK_RATE: f64 = 0.5;
/// Template words of the cloze prompt `u . It is [MASK] .`
pub const PROMPT_WORDS: [&str; 3] = [".", "It", "is"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FormulationError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("input has no maskable tokens")]
    NoMaskableTokens,
    #[error("mask rate must lie in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("no demonstration for class `{0}`")]
    MissingDemonstration(DisorderLabel),
    #[error("verbalizer word `{word}` for `{label}` is {count} tokens, expected exactly one")]
    MultiTokenVerbalizer {
        label: DisorderLabel,
        word: String,
        count: usize,
    },
    #[error("verbalizer word `{word}` for `{label}` is not in the vocabulary")]
    UnknownVerbalizer { label: DisorderLabel, word: String },
    #[error("verbalizer maps two classes to `{0}`")]
    NonInjectiveVerbalizer(String),
    #[error("template does not fit in {0} tokens")]
    TooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    StandardFinetune,
    MultitaskMlmSeparate,
    MultitaskMlmJoint,
    Entailment,
    StandardPrompt,
    PromptDemonstrations,
    PromptInverse,
    RandomRate,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::StandardFinetune,
        Strategy::MultitaskMlmSeparate,
        Strategy::MultitaskMlmJoint,
        Strategy::Entailment,
        Strategy::StandardPrompt,
        Strategy::PromptDemonstrations,
        Strategy::PromptInverse,
        Strategy::RandomRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::StandardFinetune => "standard_finetune",
            Strategy::MultitaskMlmSeparate => "multitask_mlm_separate",
            Strategy::MultitaskMlmJoint => "multitask_mlm_joint",
            Strategy::Entailment => "entailment",
            Strategy::StandardPrompt => "standard_prompt",
            Strategy::PromptDemonstrations => "prompt_demonstrations",
            Strategy::PromptInverse => "prompt_inverse",
            Strategy::RandomRate => "random_rate",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != Strategy::RandomRate
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ParseEnumError::new("strategy", s))
    }
}

/// Supervision attached to an encoded input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    None,
    /// Index into the head's label space: the four disorder classes, or
    /// entails (0) / does-not-entail (1) for definition pairs.
    Class(usize),
    /// Original token at each masked position.
    Tokens(Vec<(usize, TokenId)>),
}

pub const ENTAILS: usize = 0;
pub const NOT_ENTAILS: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulationInput {
    pub tokens: Vec<TokenId>,
    pub mask_positions: Vec<usize>,
    pub target: Target,
    pub candidate_label: Option<DisorderLabel>,
    pub truncated: bool,
}

impl FormulationInput {
    fn new(tokens: Vec<TokenId>, target: Target, truncated: bool) -> Self {
        let mask_positions = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == MASK)
            .map(|(i, _)| i)
            .collect();
        FormulationInput {
            tokens,
            mask_positions,
            target,
            candidate_label: None,
            truncated,
        }
    }

    /// Positions of ordinary (non-control) tokens.
    pub fn content_positions(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !is_special(**t))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Number of positions masked at `rate` over `n` candidates: `ceil(rate * n)`.
pub fn mask_count(rate: f64, n: usize) -> usize {
    // the epsilon absorbs representation error such as 0.15 * 20 = 3.0000000000000004
    ((rate * n as f64) - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    pub fluent: String,
    pub anomia: String,
    pub disfluency: String,
    pub agrammatism: String,
}

impl Default for Verbalizer {
    fn default() -> Self {
        Verbalizer {
            fluent: "fluent".into(),
            anomia: "empty".into(),
            disfluency: "repeated".into(),
            agrammatism: "ungrammatical".into(),
        }
    }
}

impl Verbalizer {
    pub fn word(&self, label: DisorderLabel) -> &str {
        match label {
            DisorderLabel::Fluent => &self.fluent,
            DisorderLabel::Anomia => &self.anomia,
            DisorderLabel::Disfluency => &self.disfluency,
            DisorderLabel::Agrammatism => &self.agrammatism,
        }
    }

    /// Checks that every word is a single known token and no two classes share one.
    pub fn resolve(&self, vocab: &Vocab) -> Result<[TokenId; NUM_LABELS], FormulationError> {
        let mut ids = [UNK; NUM_LABELS];
        for label in DisorderLabel::ALL {
            let word = self.word(label);
            let pieces = split_words(word);
            if pieces.len() != 1 {
                return Err(FormulationError::MultiTokenVerbalizer {
                    label,
                    word: word.to_string(),
                    count: pieces.len(),
                });
            }
            let id = vocab
                .id(&pieces[0])
                .ok_or_else(|| FormulationError::UnknownVerbalizer {
                    label,
                    word: word.to_string(),
                })?;
            if ids[..label.index()].contains(&id) {
                return Err(FormulationError::NonInjectiveVerbalizer(word.to_string()));
            }
            ids[label.index()] = id;
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDefinitions {
    pub fluent: String,
    pub anomia: String,
    pub disfluency: String,
    pub agrammatism: String,
}

impl Default for LabelDefinitions {
    fn default() -> Self {
        LabelDefinitions {
            fluent: "Fluent speech".into(),
            anomia: "Talking around words/empty speech/incomplete speech".into(),
            disfluency: "Word repetition or revision".into(),
            agrammatism: "Agrammatism or paragrammatism in speech".into(),
        }
    }
}

impl LabelDefinitions {
    pub fn definition(&self, label: DisorderLabel) -> &str {
        match label {
            DisorderLabel::Fluent => &self.fluent,
            DisorderLabel::Anomia => &self.anomia,
            DisorderLabel::Disfluency => &self.disfluency,
            DisorderLabel::Agrammatism => &self.agrammatism,
        }
    }
}

/// User-overridable prompt material, loadable from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormulationConfig {
    pub verbalizer: Verbalizer,
    pub definitions: LabelDefinitions,
}

impl FormulationConfig {
    /// Every word the templates can emit; a vocabulary must contain these.
    pub fn template_texts(&self) -> Vec<String> {
        let mut out: Vec<String> = PROMPT_WORDS.iter().map(|s| s.to_string()).collect();
        for l in DisorderLabel::ALL {
            out.push(self.verbalizer.word(l).to_string());
            out.push(self.definitions.definition(l).to_string());
        }
        out
    }
}

/// One labelled training utterance offered as a demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    pub label: DisorderLabel,
}

/// Training utterances indexed by class for demonstration sampling.
#[derive(Debug, Clone, Default)]
pub struct DemonstrationPool {
    by_class: [Vec<String>; NUM_LABELS],
}

impl DemonstrationPool {
    pub fn new<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, DisorderLabel)>,
    {
        let mut by_class: [Vec<String>; NUM_LABELS] = Default::default();
        for (text, label) in items {
            by_class[label.index()].push(text.to_string());
        }
        DemonstrationPool { by_class }
    }

    /// One uniformly drawn example per class, in canonical label order.
    ///
    /// `exclude` skips an identical utterance text when the class has another
    /// candidate, so a training query is not shown to itself.
    pub fn sample<R: Rng>(
        &self,
        exclude: Option<&str>,
        rng: &mut R,
    ) -> Result<Vec<Demonstration>, FormulationError> {
        DisorderLabel::ALL
            .iter()
            .map(|&label| {
                let pool = &self.by_class[label.index()];
                let candidates: Vec<&String> = match exclude {
                    Some(x) if pool.iter().any(|t| t != x) => {
                        pool.iter().filter(|t| *t != x).collect()
                    }
                    _ => pool.iter().collect(),
                };
                candidates
                    .choose(rng)
                    .map(|t| Demonstration {
                        text: (*t).clone(),
                        label,
                    })
                    .ok_or(FormulationError::MissingDemonstration(label))
            })
            .collect()
    }
}

/// Builds strategy inputs over a fixed vocabulary and prompt configuration.
#[derive(Debug, Clone)]
pub struct Formulator {
    vocab: Vocab,
    verbalizer: [TokenId; NUM_LABELS],
    definitions: [Vec<TokenId>; NUM_LABELS],
    template: [TokenId; 3],
    max_len: usize,
}

impl Formulator {
    pub fn new(
        vocab: Vocab,
        config: &FormulationConfig,
        max_len: usize,
    ) -> Result<Self, FormulationError> {
        let verbalizer = config.verbalizer.resolve(&vocab)?;
        let definitions =
            DisorderLabel::ALL.map(|l| vocab.encode(config.definitions.definition(l)));
        let template = PROMPT_WORDS.map(|w| vocab.id(w).unwrap_or(UNK));
        Ok(Formulator {
            vocab,
            verbalizer,
            definitions,
            template,
            max_len,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn verbalize(&self, label: DisorderLabel) -> TokenId {
        self.verbalizer[label.index()]
    }

    pub fn unverbalize(&self, token: TokenId) -> Option<DisorderLabel> {
        self.verbalizer
            .iter()
            .position(|t| *t == token)
            .and_then(DisorderLabel::from_index)
    }

    pub fn verbalizer_tokens(&self) -> [TokenId; NUM_LABELS] {
        self.verbalizer
    }

    fn utterance_tokens(&self, u: &str) -> Result<Vec<TokenId>, FormulationError> {
        let ids = self.vocab.encode(u);
        if ids.is_empty() {
            return Err(FormulationError::EmptyUtterance);
        }
        Ok(ids)
    }

    /// Utterance tokens without trailing sentence punctuation, for templating.
    fn template_body(&self, u: &str) -> Result<Vec<TokenId>, FormulationError> {
        let mut ids = self.utterance_tokens(u)?;
        let terminals: Vec<TokenId> = [".", "?", "!"]
            .iter()
            .filter_map(|p| self.vocab.id(p))
            .collect();
        while ids.len() > 1 && terminals.contains(ids.last().unwrap()) {
            ids.pop();
        }
        Ok(ids)
    }

    fn truncate(&self, body: &mut Vec<TokenId>, overhead: usize) -> Result<bool, FormulationError> {
        let room = self
            .max_len
            .checked_sub(overhead)
            .filter(|r| *r > 0)
            .ok_or(FormulationError::TooLong(self.max_len))?;
        if body.len() > room {
            log::warn!("utterance of {} tokens truncated to {}", body.len(), room);
            body.truncate(room);
            return Ok(true);
        }
        Ok(false)
    }

    /// `[CLS] t1 ... tn [SEP]`, truncated from the right to the maximum length.
    pub fn encode_standard(
        &self,
        u: &str,
        gold: Option<DisorderLabel>,
    ) -> Result<FormulationInput, FormulationError> {
        let mut body = self.utterance_tokens(u)?;
        let truncated = self.truncate(&mut body, 2)?;
        let mut tokens = Vec::with_capacity(body.len() + 2);
        tokens.push(CLS);
        tokens.extend(body);
        tokens.push(SEP);
        let target = gold
            .map(|g| Target::Class(g.index()))
            .unwrap_or(Target::None);
        Ok(FormulationInput::new(tokens, target, truncated))
    }

    /// Replaces `ceil(rate * n)` randomly chosen content tokens with `[MASK]`.
    pub fn mask_for_mlm<R: Rng>(
        &self,
        input: &FormulationInput,
        rate: f64,
        rng: &mut R,
    ) -> Result<FormulationInput, FormulationError> {
        mask_positions(input, &input.content_positions(), rate, rng)
    }

    /// One `[CLS] u [SEP] definition [SEP]` pair per class, in label order.
    pub fn build_entailment_pairs(
        &self,
        u: &str,
        gold: Option<DisorderLabel>,
    ) -> Result<Vec<FormulationInput>, FormulationError> {
        let body = self.utterance_tokens(u)?;
        DisorderLabel::ALL
            .iter()
            .map(|&label| {
                let def = &self.definitions[label.index()];
                let mut body = body.clone();
                let truncated = self.truncate(&mut body, 3 + def.len())?;
                let mut tokens = vec![CLS];
                tokens.extend(body);
                tokens.push(SEP);
                tokens.extend(def);
                tokens.push(SEP);
                let target = match gold {
                    Some(g) if g == label => Target::Class(ENTAILS),
                    Some(_) => Target::Class(NOT_ENTAILS),
                    None => Target::None,
                };
                let mut input = FormulationInput::new(tokens, target, truncated);
                input.candidate_label = Some(label);
                Ok(input)
            })
            .collect()
    }

    /// `body . It is <slot> .`
    fn cloze(&self, body: &[TokenId], slot: TokenId) -> Vec<TokenId> {
        let [dot, it, is] = self.template;
        let mut out = Vec::with_capacity(body.len() + 5);
        out.extend_from_slice(body);
        out.extend([dot, it, is, slot, dot]);
        out
    }

    /// `[CLS] u . It is [MASK] . [SEP]`
    pub fn build_prompt(
        &self,
        u: &str,
        gold: Option<DisorderLabel>,
    ) -> Result<FormulationInput, FormulationError> {
        let mut body = self.template_body(u)?;
        let truncated = self.truncate(&mut body, 7)?;
        let mut tokens = vec![CLS];
        tokens.extend(self.cloze(&body, MASK));
        tokens.push(SEP);
        let mask_at = tokens.len() - 3;
        let target = gold
            .map(|g| Target::Tokens(vec![(mask_at, self.verbalize(g))]))
            .unwrap_or(Target::None);
        Ok(FormulationInput::new(tokens, target, truncated))
    }

    /// Query prompt followed by one filled-in prompt per demonstration, each
    /// closed by `[SEP]`. Demonstrations must cover every class once and are
    /// emitted in canonical label order. Trailing demonstrations are dropped
    /// first when the sequence is too long.
    pub fn build_demonstration_input(
        &self,
        u: &str,
        demos: &[Demonstration],
        gold: Option<DisorderLabel>,
    ) -> Result<FormulationInput, FormulationError> {
        let mut query = self.build_prompt(u, gold)?;
        let mut truncated = query.truncated;
        for label in DisorderLabel::ALL {
            let demo = demos
                .iter()
                .find(|d| d.label == label)
                .ok_or(FormulationError::MissingDemonstration(label))?;
            let mut seg = self.cloze(&self.template_body(&demo.text)?, self.verbalize(label));
            seg.push(SEP);
            if query.tokens.len() + seg.len() > self.max_len {
                log::warn!(
                    "demonstration input exceeds {} tokens; dropping trailing demonstrations",
                    self.max_len
                );
                truncated = true;
                break;
            }
            query.tokens.extend(seg);
        }
        query.truncated = truncated;
        Ok(query)
    }

    /// Cloze prompt with the label slot filled by `candidate` and
    /// `ceil(0.5 * n)` of the utterance tokens masked.
    ///
    /// Mask positions depend only on the utterance length and `rng`, so a freshly
    /// seeded generator yields the same positions for every candidate.
    pub fn build_inverse_input<R: Rng>(
        &self,
        u: &str,
        candidate: DisorderLabel,
        rng: &mut R,
    ) -> Result<FormulationInput, FormulationError> {
        let mut body = self.template_body(u)?;
        let truncated = self.truncate(&mut body, 7)?;
        let n = body.len();
        let mut tokens = vec![CLS];
        tokens.extend(self.cloze(&body, self.verbalize(candidate)));
        tokens.push(SEP);
        let base = FormulationInput::new(tokens, Target::None, truncated);
        let utterance_positions: Vec<usize> = (1..=n).collect();
        let mut input = mask_positions(&base, &utterance_positions, INVERSE_MASK_RATE, rng)?;
        input.candidate_label = Some(candidate);
        Ok(input)
    }

    /// The four inverse inputs scored at inference, sharing mask positions.
    pub fn inverse_candidates(
        &self,
        u: &str,
        seed: u64,
    ) -> Result<Vec<FormulationInput>, FormulationError> {
        DisorderLabel::ALL
            .iter()
            .map(|&c| self.build_inverse_input(u, c, &mut ChaCha8Rng::seed_from_u64(seed)))
            .collect()
    }
}

fn mask_positions<R: Rng>(
    input: &FormulationInput,
    candidates: &[usize],
    rate: f64,
    rng: &mut R,
) -> Result<FormulationInput, FormulationError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(FormulationError::InvalidRate(rate));
    }
    let candidates: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&p| !is_special(input.tokens[p]))
        .collect();
    if candidates.is_empty() {
        return Err(FormulationError::NoMaskableTokens);
    }
    let k = mask_count(rate, candidates.len());
    let mut chosen: Vec<usize> = sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    chosen.sort_unstable();
    let mut tokens = input.tokens.clone();
    let mut targets = Vec::with_capacity(k);
    for &p in &chosen {
        targets.push((p, tokens[p]));
        tokens[p] = MASK;
    }
    let mut out = FormulationInput::new(tokens, Target::Tokens(targets), input.truncated);
    out.candidate_label = input.candidate_label;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn formulator(max_len: usize) -> Formulator {
        let cfg = FormulationConfig::default();
        let mut texts = cfg.template_texts();
        texts.extend(
            [
                "A mother is wiping a dish",
                "Her doing the dishes",
                "His his sister's asking for one",
                "the boy is on the stool .",
                "this thing there",
            ]
            .map(String::from),
        );
        let vocab = Vocab::build(texts.iter().map(String::as_str));
        Formulator::new(vocab, &cfg, max_len).unwrap()
    }

    fn show(f: &Formulator, input: &FormulationInput) -> String {
        f.vocab().decode(&input.tokens)
    }

    #[test]
    fn standard_encoding() {
        let f = formulator(512);
        let x = f
            .encode_standard("A mother is wiping a dish", Some(DisorderLabel::Fluent))
            .unwrap();
        assert_eq!(show(&f, &x), "[CLS] A mother is wiping a dish [SEP]");
        assert_eq!(x.target, Target::Class(0));
        assert_eq!(
            f.encode_standard("", None).unwrap_err(),
            FormulationError::EmptyUtterance
        );
    }

    #[test]
    fn long_utterance_truncated() {
        let f = formulator(512);
        let u = vec!["dish"; 600].join(" ");
        let x = f.encode_standard(&u, None).unwrap();
        assert_eq!(x.tokens.len(), 512);
        assert!(x.truncated);
        assert_eq!(*x.tokens.last().unwrap(), SEP);
    }

    #[test]
    fn mlm_mask_count_and_determinism() {
        let f = formulator(512);
        let x = f
            .encode_standard("A mother is wiping a dish", None)
            .unwrap();
        let a = f
            .mask_for_mlm(&x, MLM_MASK_RATE, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = f
            .mask_for_mlm(&x, MLM_MASK_RATE, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask_positions.len(), 1);
        assert_ne!(a.mask_positions[0], 0);
        assert_ne!(a.mask_positions[0], 7);
        let Target::Tokens(t) = &a.target else {
            panic!()
        };
        assert_eq!(x.tokens[t[0].0], t[0].1);
        // dynamic masking: successive draws from one stream differ somewhere
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<_> = (0..10)
            .map(|_| {
                f.mask_for_mlm(&x, MLM_MASK_RATE, &mut rng)
                    .unwrap()
                    .mask_positions
            })
            .collect();
        assert!(draws.iter().any(|d| d != &draws[0]));
    }

    #[test]
    fn mlm_rejects_bad_input() {
        let f = formulator(512);
        let x = f.encode_standard("dish", None).unwrap();
        assert_eq!(
            f.mask_for_mlm(&x, 1.0, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap_err(),
            FormulationError::InvalidRate(1.0)
        );
        let empty = FormulationInput::new(vec![CLS, SEP], Target::None, false);
        assert_eq!(
            f.mask_for_mlm(&empty, 0.15, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap_err(),
            FormulationError::NoMaskableTokens
        );
    }

    #[test]
    fn entailment_targets() {
        let f = formulator(512);
        let pairs = f
            .build_entailment_pairs(
                "His his sister's asking for one",
                Some(DisorderLabel::Disfluency),
            )
            .unwrap();
        assert_eq!(pairs.len(), 4);
        let dis = &pairs[DisorderLabel::Disfluency.index()];
        assert_eq!(
            show(&f, dis),
            "[CLS] His his sister's asking for one [SEP] Word repetition or revision [SEP]"
        );
        assert_eq!(dis.target, Target::Class(ENTAILS));
        let fluent = f
            .build_entailment_pairs("A mother is wiping a dish", Some(DisorderLabel::Fluent))
            .unwrap();
        let entails = fluent
            .iter()
            .filter(|p| p.target == Target::Class(ENTAILS))
            .count();
        let not = fluent
            .iter()
            .filter(|p| p.target == Target::Class(NOT_ENTAILS))
            .count();
        assert_eq!((entails, not), (1, 3));
    }

    #[test]
    fn prompt_template() {
        let f = formulator(512);
        let x = f
            .build_prompt("Her doing the dishes", Some(DisorderLabel::Agrammatism))
            .unwrap();
        assert_eq!(
            show(&f, &x),
            "[CLS] Her doing the dishes . It is [MASK] . [SEP]"
        );
        assert_eq!(x.mask_positions, vec![8]);
        assert_eq!(
            x.target,
            Target::Tokens(vec![(8, f.verbalize(DisorderLabel::Agrammatism))])
        );
        // trailing punctuation is not doubled
        let y = f.build_prompt("the boy is on the stool .", None).unwrap();
        assert_eq!(
            show(&f, &y),
            "[CLS] the boy is on the stool . It is [MASK] . [SEP]"
        );
    }

    fn demos() -> Vec<Demonstration> {
        vec![
            Demonstration {
                text: "the boy is on the stool .".into(),
                label: DisorderLabel::Fluent,
            },
            Demonstration {
                text: "this thing there".into(),
                label: DisorderLabel::Anomia,
            },
            Demonstration {
                text: "His his sister's asking for one".into(),
                label: DisorderLabel::Disfluency,
            },
            Demonstration {
                text: "Her doing the dishes".into(),
                label: DisorderLabel::Agrammatism,
            },
        ]
    }

    #[test]
    fn demonstration_layout() {
        let f = formulator(512);
        let mut shuffled = demos();
        shuffled.reverse();
        let x = f
            .build_demonstration_input(
                "A mother is wiping a dish",
                &shuffled,
                Some(DisorderLabel::Fluent),
            )
            .unwrap();
        assert_eq!(
            show(&f, &x),
            "[CLS] A mother is wiping a dish . It is [MASK] . [SEP] \
             the boy is on the stool . It is fluent . [SEP] \
             this thing there . It is empty . [SEP] \
             His his sister's asking for one . It is repeated . [SEP] \
             Her doing the dishes . It is ungrammatical . [SEP]"
        );
        assert_eq!(x.mask_positions.len(), 1);
        assert!(!x.truncated);
        let missing = &demos()[..3];
        assert_eq!(
            f.build_demonstration_input("A mother is wiping a dish", missing, None)
                .unwrap_err(),
            FormulationError::MissingDemonstration(DisorderLabel::Agrammatism)
        );
    }

    #[test]
    fn demonstration_truncation_drops_trailing_demos() {
        let f = formulator(30);
        let x = f
            .build_demonstration_input("A mother is wiping a dish", &demos(), None)
            .unwrap();
        assert!(x.truncated);
        assert!(x.tokens.len() <= 30);
        // the query is intact and the first demonstration fits
        assert_eq!(
            show(&f, &x),
            "[CLS] A mother is wiping a dish . It is [MASK] . [SEP] the boy is on the stool . It is fluent . [SEP]"
        );
    }

    #[test]
    fn demonstration_sampling_is_seeded() {
        let pool = DemonstrationPool::new(
            demos()
                .iter()
                .map(|d| (d.text.as_str(), d.label))
                .chain([("a dish", DisorderLabel::Fluent)]),
        );
        let a = pool
            .sample(None, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        let b = pool
            .sample(None, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.iter().map(|d| d.label).collect::<Vec<_>>(),
            DisorderLabel::ALL.to_vec()
        );
        let ex = pool
            .sample(Some("a dish"), &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert_eq!(ex[0].text, "the boy is on the stool .");
        let empty = DemonstrationPool::new([("x", DisorderLabel::Fluent)]);
        assert!(empty
            .sample(None, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn inverse_shares_positions_across_candidates() {
        let f = formulator(512);
        let c = f
            .inverse_candidates("A mother is wiping a dish", 42)
            .unwrap();
        assert_eq!(c.len(), 4);
        for x in &c {
            assert_eq!(x.mask_positions, c[0].mask_positions);
            assert_eq!(x.mask_positions.len(), 3);
            assert!(x.mask_positions.iter().all(|p| (1..=6).contains(p)));
        }
        // label slot differs
        assert_eq!(c[0].tokens[10], f.verbalize(DisorderLabel::Fluent));
        assert_eq!(c[1].tokens[10], f.verbalize(DisorderLabel::Anomia));
    }

    #[test]
    fn verbalizer_checks() {
        let f = formulator(512);
        for l in DisorderLabel::ALL {
            assert_eq!(f.unverbalize(f.verbalize(l)), Some(l));
        }
        let vocab = f.vocab().clone();
        let multi = Verbalizer {
            fluent: "very fluent".into(),
            ..Default::default()
        };
        assert!(matches!(
            multi.resolve(&vocab),
            Err(FormulationError::MultiTokenVerbalizer { count: 2, .. })
        ));
        let dup = Verbalizer {
            anomia: "fluent".into(),
            ..Default::default()
        };
        assert!(matches!(
            dup.resolve(&vocab),
            Err(FormulationError::NonInjectiveVerbalizer(_))
        ));
        let unknown = Verbalizer {
            anomia: "zzz".into(),
            ..Default::default()
        };
        assert!(matches!(
            unknown.resolve(&vocab),
            Err(FormulationError::UnknownVerbalizer { .. })
        ));
    }

    #[test]
    fn strategy_names() {
        for s in super::Strategy::ALL {
            assert_eq!(s.as_str().parse::<super::Strategy>().unwrap(), s);
        }
        assert_eq!(
            "prompt-demonstrations".parse::<super::Strategy>().unwrap(),
            super::Strategy::PromptDemonstrations
        );
    }

    proptest! {
        #[test]
        fn mask_count_law(n in 1usize..400) {
            // integer oracle for ceil(15n/100) and ceil(n/2)
            prop_assert_eq!(mask_count(MLM_MASK_RATE, n), (15 * n + 99) / 100);
            prop_assert_eq!(mask_count(INVERSE_MASK_RATE, n), (n + 1) / 2);
        }

        #[test]
        fn masks_respect_rate_and_controls(words in 1usize..60, seed in any::<u64>()) {
            let f = formulator(512);
            let u = vec!["dish"; words].join(" ");
            let x = f.encode_standard(&u, None).unwrap();
            let m = f.mask_for_mlm(&x, MLM_MASK_RATE, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(m.mask_positions.len(), (15 * words + 99) / 100);
            prop_assert!(m.mask_positions.iter().all(|&p| m.tokens[p] == MASK && p != 0 && p != words + 1));
            let inv = f.build_inverse_input(&u, DisorderLabel::Anomia, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(inv.mask_positions.len(), (words + 1) / 2);
            let p = f.build_prompt(&u, None).unwrap();
            prop_assert_eq!(p.mask_positions.len(), 1);
        }
    }
}
