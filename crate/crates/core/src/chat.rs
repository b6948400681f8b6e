//! Reader for the subset of the CHAT transcription format used by
//! picture-description corpora.
//!
//! Only header tiers, main speaker tiers and the paralinguistic codes that carry a
//! disorder annotation are interpreted. Dependent tiers (`%mor`, `%gra`, ...) are
//! skipped. Any other bracketed code or special form is kept as
//! [`CodeKind::Unknown`] and reported as a [`ParseWarning`].
//!
//! Session metadata is read from the `@ID` group field (cohort) and from the
//! optional `@Subject`, `@Visit`, `@Cohort`, `@MMSE` and `@CDR` headers. When no
//! `@Subject`/`@Visit` header is present, a DementiaBank-style file name such as
//! `001-2.cha` supplies the subject id and the zero-based visit number.

use std::fmt;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::label::{Cohort, DisorderLabel, Speaker, UtteranceLabel};

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error("line {line}: malformed tier: {message}")]
    Malformed { line: usize, message: String },
    #[error("session has no participant utterances")]
    EmptySession,
    #[error("missing session metadata: {0}")]
    MissingMetadata(&'static str),
    #[error("line {line}: invalid value `{value}` for @{header}")]
    InvalidHeader {
        line: usize,
        header: String,
        value: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Annotation codes interpreted by the labeller.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    /// `[+ gram]`
    Agrammatic,
    /// `[/]`
    Repetition,
    /// `[//]`
    Revision,
    /// `&+` word prefix
    PhonologicalFragment,
    /// `+ es` / `[+ es]`
    EmptySpeech,
    /// `+...` terminator
    TrailingOff,
    /// `[+ cir]`
    Circumlocution,
    /// `[+ jar]`
    Jargon,
    /// `[+ exc]`
    NonDescriptive,
    /// Anything else that looks like a CHAT code; the verbatim text is kept.
    Unknown(String),
}

/// What a code contributes to the utterance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeClass {
    Disorder(DisorderLabel),
    Excluded,
    Unmapped,
}

impl CodeKind {
    /// The nine codes of the annotation scheme, in table order.
    pub const ANNOTATION_SCHEME: [CodeKind; 9] = [
        CodeKind::Agrammatic,
        CodeKind::Repetition,
        CodeKind::Revision,
        CodeKind::PhonologicalFragment,
        CodeKind::EmptySpeech,
        CodeKind::TrailingOff,
        CodeKind::Circumlocution,
        CodeKind::Jargon,
        CodeKind::NonDescriptive,
    ];

    pub fn class(&self) -> CodeClass {
        use CodeKind::*;
        match self {
            Agrammatic => CodeClass::Disorder(DisorderLabel::Agrammatism),
            Repetition | Revision | PhonologicalFragment => {
                CodeClass::Disorder(DisorderLabel::Disfluency)
            }
            EmptySpeech | TrailingOff | Circumlocution | Jargon => {
                CodeClass::Disorder(DisorderLabel::Anomia)
            }
            NonDescriptive => CodeClass::Excluded,
            Unknown(_) => CodeClass::Unmapped,
        }
    }

    /// Canonical CHAT spelling.
    pub fn notation(&self) -> &str {
        use CodeKind::*;
        match self {
            Agrammatic => "[+ gram]",
            Repetition => "[/]",
            Revision => "[//]",
            PhonologicalFragment => "&+",
            EmptySpeech => "[+ es]",
            TrailingOff => "+...",
            Circumlocution => "[+ cir]",
            Jargon => "[+ jar]",
            NonDescriptive => "[+ exc]",
            Unknown(s) => s,
        }
    }

    fn from_bracket(content: &str) -> CodeKind {
        let squashed: String = content.chars().filter(|c| !c.is_whitespace()).collect();
        match squashed.as_str() {
            "+gram" => CodeKind::Agrammatic,
            "/" => CodeKind::Repetition,
            "//" => CodeKind::Revision,
            "+es" => CodeKind::EmptySpeech,
            "+cir" => CodeKind::Circumlocution,
            "+jar" => CodeKind::Jargon,
            "+exc" => CodeKind::NonDescriptive,
            _ => CodeKind::Unknown(format!("[{}]", content.trim())),
        }
    }
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.notation())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatCode {
    pub kind: CodeKind,
    /// Byte range of the code inside [`AnnotatedUtterance::raw`].
    pub span: Range<usize>,
}

/// Order in which co-occurring disorder codes are resolved to a single label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPrecedence(pub [DisorderLabel; 3]);

impl Default for LabelPrecedence {
    fn default() -> Self {
        LabelPrecedence([
            DisorderLabel::Anomia,
            DisorderLabel::Agrammatism,
            DisorderLabel::Disfluency,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    /// Main-tier content with codes, continuation lines joined by a space.
    pub raw: String,
    pub text: String,
    pub speaker: Speaker,
    pub codes: Vec<ChatCode>,
    pub label: UtteranceLabel,
    /// 1-based line of the speaker tier in the source document.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub line: usize,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub subject_id: String,
    pub cohort: Cohort,
    pub visit_index: u32,
    pub utterances: Vec<AnnotatedUtterance>,
    pub mmse: Option<u8>,
    pub cdr: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<ParseWarning>,
}

impl SessionRecord {
    /// Participant utterances that carry a disorder label.
    pub fn included(&self) -> impl Iterator<Item = (&AnnotatedUtterance, DisorderLabel)> {
        self.utterances
            .iter()
            .filter_map(|u| u.label.included().map(|l| (u, l)))
    }
}

pub const CDR_LEVELS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];

pub fn validate_mmse(v: i64) -> bool {
    (0..=30).contains(&v)
}

pub fn validate_cdr(v: f64) -> bool {
    CDR_LEVELS.contains(&v)
}

// ---------------------------------------------------------------------------
// Utterance-level lexing

#[derive(Debug)]
enum Lexeme {
    Word {
        text: String,
    },
    Punct(char),
    Code(ChatCode),
    /// Markers that are neither words nor annotation codes (`<`, `>`, pauses).
    Skip,
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!' | ',')
}

fn lex(raw: &str) -> Vec<Lexeme> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let c = raw[i..].chars().next().unwrap();
        if c.is_whitespace() || c == '<' || c == '>' {
            if !c.is_whitespace() {
                out.push(Lexeme::Skip);
            }
            i += c.len_utf8();
            continue;
        }
        if c == '\u{15}' {
            // media bullet: skip to the closing bullet
            let end = raw[i + 1..]
                .find('\u{15}')
                .map(|p| i + 1 + p + 1)
                .unwrap_or(raw.len());
            out.push(Lexeme::Skip);
            i = end;
            continue;
        }
        if c == '[' {
            let (content, end) = match raw[i..].find(']') {
                Some(p) => (&raw[i + 1..i + p], i + p + 1),
                None => (&raw[i + 1..], raw.len()),
            };
            out.push(Lexeme::Code(ChatCode {
                kind: CodeKind::from_bracket(content),
                span: i..end,
            }));
            i = end;
            continue;
        }
        // a whitespace-delimited chunk that stops at brackets and scope markers
        let start = i;
        let mut end = i;
        while end < raw.len() {
            let ch = raw[end..].chars().next().unwrap();
            if ch.is_whitespace() || ch == '[' || ch == '<' || ch == '>' || ch == '\u{15}' {
                break;
            }
            end += ch.len_utf8();
        }
        let chunk = &raw[start..end];
        i = end;
        lex_chunk(chunk, start, &mut out);
    }
    merge_bare_empty_speech(out)
}

fn lex_chunk(chunk: &str, start: usize, out: &mut Vec<Lexeme>) {
    if chunk.starts_with("+...") || chunk.starts_with("+…") {
        out.push(Lexeme::Code(ChatCode {
            kind: CodeKind::TrailingOff,
            span: start..start + chunk.len(),
        }));
        return;
    }
    if chunk == "+" {
        // possibly the first half of a bare `+ es`; resolved in merge_bare_empty_speech
        out.push(Lexeme::Code(ChatCode {
            kind: CodeKind::Unknown("+".into()),
            span: start..start + 1,
        }));
        return;
    }
    if chunk.starts_with('+') {
        out.push(Lexeme::Code(ChatCode {
            kind: CodeKind::Unknown(chunk.to_string()),
            span: start..start + chunk.len(),
        }));
        return;
    }
    if chunk.starts_with('(')
        && chunk.ends_with(')')
        && chunk.trim_matches(&['(', ')', '.'][..]).is_empty()
    {
        out.push(Lexeme::Skip); // pause
        return;
    }
    // split trailing punctuation
    let trimmed = chunk.trim_end_matches(is_terminator);
    let trailing = &chunk[trimmed.len()..];
    if !trimmed.is_empty() {
        lex_word(trimmed, start, out);
    }
    for c in trailing.chars() {
        out.push(Lexeme::Punct(c));
    }
}

fn lex_word(word: &str, start: usize, out: &mut Vec<Lexeme>) {
    if let Some(rest) = word.strip_prefix("&+") {
        out.push(Lexeme::Code(ChatCode {
            kind: CodeKind::PhonologicalFragment,
            span: start..start + 2,
        }));
        push_spoken(rest, out);
        return;
    }
    if word.starts_with("&=") {
        // paralinguistic event such as &=laughs: not spoken words
        out.push(Lexeme::Code(ChatCode {
            kind: CodeKind::Unknown(word.to_string()),
            span: start..start + word.len(),
        }));
        return;
    }
    if let Some(rest) = word.strip_prefix('&') {
        // fillers (&-uh) and legacy fragments (&sp): keep the spoken material
        let body = rest.strip_prefix('-').unwrap_or(rest);
        let marker_len = word.len() - body.len();
        out.push(Lexeme::Code(ChatCode {
            kind: CodeKind::Unknown(word[..marker_len].to_string()),
            span: start..start + marker_len,
        }));
        push_spoken(body, out);
        return;
    }
    if word.starts_with('0') && word.len() > 1 {
        // omitted word, not produced by the speaker
        out.push(Lexeme::Skip);
        return;
    }
    push_spoken(word, out);
}

fn push_spoken(word: &str, out: &mut Vec<Lexeme>) {
    // drop special-form suffixes (word@l) and CHAT-internal characters
    let base = word.split('@').next().unwrap_or("");
    let cleaned: String = base
        .chars()
        .filter(|c| {
            !matches!(
                c,
                '(' | ')' | ':' | '^' | '↑' | '↓' | '≠' | '+' | '&' | '[' | ']' | '<' | '>'
            )
        })
        .collect();
    if !cleaned.is_empty() {
        out.push(Lexeme::Word { text: cleaned });
    }
}

fn merge_bare_empty_speech(lexemes: Vec<Lexeme>) -> Vec<Lexeme> {
    let mut out: Vec<Lexeme> = Vec::with_capacity(lexemes.len());
    let mut iter = lexemes.into_iter().peekable();
    while let Some(lx) = iter.next() {
        if let Lexeme::Code(ChatCode {
            kind: CodeKind::Unknown(ref s),
            ref span,
        }) = lx
        {
            if s == "+" {
                if let Some(Lexeme::Word { text }) = iter.peek() {
                    if text == "es" {
                        let start = span.start;
                        iter.next();
                        // `+ es` spans the plus, one space and the two letters
                        out.push(Lexeme::Code(ChatCode {
                            kind: CodeKind::EmptySpeech,
                            span: start..start + 4,
                        }));
                        continue;
                    }
                }
            }
        }
        out.push(lx);
    }
    out
}

/// Extracts every annotation code of a main-tier utterance, in order.
pub fn extract_codes(raw: &str) -> Vec<ChatCode> {
    lex(raw)
        .into_iter()
        .filter_map(|lx| match lx {
            Lexeme::Code(c) => Some(c),
            _ => None,
        })
        .collect()
}

/// Removes all codes and markers and normalises whitespace.
///
/// Retraced material and fragments stay in the text as spoken words; only the
/// markers go. Terminal punctuation is attached to the preceding word.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for lx in lex(raw) {
        match lx {
            Lexeme::Word { text } => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(&text);
            }
            Lexeme::Punct(c) => {
                if !out.is_empty() {
                    out.push(c);
                }
            }
            Lexeme::Code(_) | Lexeme::Skip => {}
        }
    }
    out
}

pub fn clean_utterance(utt: &AnnotatedUtterance) -> String {
    clean_text(&utt.raw)
}

/// Label from codes and speaker under an explicit precedence.
pub fn label_from_codes(
    codes: &[ChatCode],
    speaker: Speaker,
    precedence: &LabelPrecedence,
) -> UtteranceLabel {
    if speaker == Speaker::Interviewer {
        return UtteranceLabel::Excluded;
    }
    let mut present = [false; 4];
    for code in codes {
        match code.kind.class() {
            CodeClass::Excluded => return UtteranceLabel::Excluded,
            CodeClass::Disorder(l) => present[l.index()] = true,
            CodeClass::Unmapped => {}
        }
    }
    precedence
        .0
        .iter()
        .find(|l| present[l.index()])
        .map(|l| UtteranceLabel::Included(*l))
        .unwrap_or(UtteranceLabel::Included(DisorderLabel::Fluent))
}

pub fn derive_label(utt: &AnnotatedUtterance) -> UtteranceLabel {
    label_from_codes(&utt.codes, utt.speaker, &LabelPrecedence::default())
}

impl AnnotatedUtterance {
    pub fn new(raw: &str, speaker: Speaker, line: usize, precedence: &LabelPrecedence) -> Self {
        let codes = extract_codes(raw);
        let label = label_from_codes(&codes, speaker, precedence);
        AnnotatedUtterance {
            raw: raw.to_string(),
            text: clean_text(raw),
            speaker,
            codes,
            label,
            line,
        }
    }
}

// ---------------------------------------------------------------------------
// Document-level parsing

#[derive(Debug, Default)]
struct Headers {
    subject: Option<String>,
    visit: Option<u32>,
    cohort: Option<Cohort>,
    mmse: Option<u8>,
    cdr: Option<f64>,
}

struct Tier {
    line: usize,
    kind: TierKind,
    content: String,
}

enum TierKind {
    Header(String),
    Main(String),
    Dependent,
}

fn split_tiers(text: &str) -> Result<Vec<Tier>, ChatError> {
    let mut tiers: Vec<Tier> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('\t') || line.starts_with(' ') {
            match tiers.last_mut() {
                Some(t) => {
                    t.content.push(' ');
                    t.content.push_str(line.trim());
                }
                None => {
                    return Err(ChatError::Malformed {
                        line: lineno,
                        message: "continuation line before any tier".into(),
                    })
                }
            }
            continue;
        }
        let (marker, rest) = line.split_at(1);
        match marker {
            "@" => {
                let (name, value) = match rest.split_once(':') {
                    Some((n, v)) => (n.trim().to_string(), v.trim().to_string()),
                    None => (rest.trim().to_string(), String::new()),
                };
                tiers.push(Tier {
                    line: lineno,
                    kind: TierKind::Header(name),
                    content: value,
                });
            }
            "*" | "%" => {
                let Some((code, content)) = rest.split_once(':') else {
                    return Err(ChatError::Malformed {
                        line: lineno,
                        message: format!("tier `{line}` has no `:` separator"),
                    });
                };
                let code = code.trim();
                if code.is_empty() || !code.chars().all(|c| c.is_ascii_alphanumeric()) {
                    return Err(ChatError::Malformed {
                        line: lineno,
                        message: format!("invalid tier code `{code}`"),
                    });
                }
                let kind = if marker == "*" {
                    TierKind::Main(code.to_string())
                } else {
                    TierKind::Dependent
                };
                tiers.push(Tier {
                    line: lineno,
                    kind,
                    content: content.trim().to_string(),
                });
            }
            _ => {
                return Err(ChatError::Malformed {
                    line: lineno,
                    message: format!("line does not start with `@`, `*`, `%` or a tab: `{line}`"),
                })
            }
        }
    }
    Ok(tiers)
}

fn apply_header(
    headers: &mut Headers,
    name: &str,
    value: &str,
    line: usize,
) -> Result<(), ChatError> {
    let invalid = || ChatError::InvalidHeader {
        line,
        header: name.to_string(),
        value: value.to_string(),
    };
    match name.to_ascii_lowercase().as_str() {
        "id" => {
            let fields: Vec<&str> = value.split('|').collect();
            if fields.get(2).map(|c| c.trim()) == Some("PAR") {
                if let Some(group) = fields.get(5) {
                    if let Ok(c) = group.parse::<Cohort>() {
                        headers.cohort.get_or_insert(c);
                    }
                }
            }
        }
        "subject" => headers.subject = Some(value.to_string()),
        "visit" => {
            let v: u32 = value.parse().map_err(|_| invalid())?;
            if v == 0 {
                return Err(invalid());
            }
            headers.visit = Some(v);
        }
        "cohort" => headers.cohort = Some(value.parse().map_err(|_| invalid())?),
        "mmse" => {
            let v: i64 = value.parse().map_err(|_| invalid())?;
            if !validate_mmse(v) {
                return Err(invalid());
            }
            headers.mmse = Some(v as u8);
        }
        "cdr" => {
            let v: f64 = value.parse().map_err(|_| invalid())?;
            if !validate_cdr(v) {
                return Err(invalid());
            }
            headers.cdr = Some(v);
        }
        _ => {}
    }
    Ok(())
}

/// `001-2` → (`001`, visit 3).
fn metadata_from_name(name: &str) -> (Option<String>, Option<u32>) {
    let stem = Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    match stem.rsplit_once('-') {
        Some((subject, visit)) if !subject.is_empty() => match visit.parse::<u32>() {
            Ok(v) => (Some(subject.to_string()), Some(v + 1)),
            Err(_) => (Some(stem.to_string()), None),
        },
        _ => (Some(stem.to_string()), None),
    }
}

/// Parses one CHAT document.
///
/// `source_name` is the file name (or any label) used as a metadata fallback.
pub fn parse_chat(text: &str, source_name: Option<&str>) -> Result<SessionRecord, ChatError> {
    parse_chat_with(text, source_name, &LabelPrecedence::default())
}

pub fn parse_chat_with(
    text: &str,
    source_name: Option<&str>,
    precedence: &LabelPrecedence,
) -> Result<SessionRecord, ChatError> {
    let tiers = split_tiers(text)?;
    let mut headers = Headers::default();
    let mut utterances = Vec::new();
    let mut warnings = Vec::new();
    for tier in &tiers {
        match &tier.kind {
            TierKind::Header(name) => apply_header(&mut headers, name, &tier.content, tier.line)?,
            TierKind::Main(code) => {
                let speaker = if code == "PAR" {
                    Speaker::Participant
                } else {
                    Speaker::Interviewer
                };
                let utt = AnnotatedUtterance::new(&tier.content, speaker, tier.line, precedence);
                for c in &utt.codes {
                    if let CodeKind::Unknown(s) = &c.kind {
                        log::debug!("line {}: unrecognised CHAT code `{}`", tier.line, s);
                        warnings.push(ParseWarning {
                            line: tier.line,
                            code: s.clone(),
                        });
                    }
                }
                utterances.push(utt);
            }
            TierKind::Dependent => {}
        }
    }
    if !utterances.iter().any(|u| u.speaker == Speaker::Participant) {
        return Err(ChatError::EmptySession);
    }
    let (name_subject, name_visit) = source_name.map(metadata_from_name).unwrap_or((None, None));
    let subject_id = headers
        .subject
        .or(name_subject)
        .ok_or(ChatError::MissingMetadata("subject id"))?;
    let cohort = headers.cohort.ok_or(ChatError::MissingMetadata("cohort"))?;
    Ok(SessionRecord {
        subject_id,
        cohort,
        visit_index: headers.visit.or(name_visit).unwrap_or(1),
        utterances,
        mmse: headers.mmse,
        cdr: headers.cdr,
        warnings,
    })
}

pub fn parse_chat_reader<R: Read>(
    mut reader: R,
    source_name: Option<&str>,
) -> Result<SessionRecord, ChatError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_chat(&text, source_name)
}

pub fn parse_chat_file(path: &Path) -> Result<SessionRecord, ChatError> {
    let text = std::fs::read_to_string(path)?;
    parse_chat(&text, path.file_name().and_then(|s| s.to_str()))
}
