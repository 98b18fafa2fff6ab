//! Sentence and annotation data model.
//!
//! Tokens carry character offsets (Unicode scalar values, not bytes) into the
//! text of the sentence they belong to. Entity spans are expressed in token
//! indices with an exclusive end.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label {label:?}")]
    Label { line: usize, label: String },
    #[error("span conflict: {0}")]
    SpanConflict(String),
    #[error("invalid split ratios: {0}")]
    Ratio(String),
    #[error("duplicate sentence id {0:?}")]
    DuplicateSentence(String),
    #[error("cannot write token {0:?}: tokens must be non-empty and free of whitespace")]
    BadToken(String),
    #[error("cannot write sentence {0:?}: text spans several lines")]
    MultilineText(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The five personal-information classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TagClass {
    BD,
    PR,
    SP,
    CH,
    ED,
}

impl TagClass {
    pub const ALL: [TagClass; 5] = [TagClass::BD, TagClass::PR, TagClass::SP, TagClass::CH, TagClass::ED];

    pub fn as_str(self) -> &'static str {
        match self {
            TagClass::BD => "BD",
            TagClass::PR => "PR",
            TagClass::SP => "SP",
            TagClass::CH => "CH",
            TagClass::ED => "ED",
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TagClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "BD" => Ok(TagClass::BD),
            "PR" => Ok(TagClass::PR),
            "SP" => Ok(TagClass::SP),
            "CH" => Ok(TagClass::CH),
            "ED" => Ok(TagClass::ED),
            _ => Err(format!("unknown tag class {s:?}")),
        }
    }
}

/// Per-token BIO label. Index order is `O` followed by `B_t, I_t` pairs in
/// [`TagClass`] order; the tagger's weight columns use this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioLabel {
    O,
    B(TagClass),
    I(TagClass),
}

impl BioLabel {
    pub const COUNT: usize = 11;

    pub fn all() -> [BioLabel; Self::COUNT] {
        let mut out = [BioLabel::O; Self::COUNT];
        for (i, tag) in TagClass::ALL.iter().enumerate() {
            out[1 + 2 * i] = BioLabel::B(*tag);
            out[2 + 2 * i] = BioLabel::I(*tag);
        }
        out
    }

    pub fn index(self) -> usize {
        match self {
            BioLabel::O => 0,
            BioLabel::B(t) => 1 + 2 * t.ordinal(),
            BioLabel::I(t) => 2 + 2 * t.ordinal(),
        }
    }

    pub fn from_index(index: usize) -> Option<BioLabel> {
        Self::all().get(index).copied()
    }

    pub fn tag(self) -> Option<TagClass> {
        match self {
            BioLabel::O => None,
            BioLabel::B(t) | BioLabel::I(t) => Some(t),
        }
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioLabel::O => f.write_str("O"),
            BioLabel::B(t) => write!(f, "B_{t}"),
            BioLabel::I(t) => write!(f, "I_{t}"),
        }
    }
}

impl FromStr for BioLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioLabel::O);
        }
        let bad = || format!("unknown label {s:?}");
        let (prefix, tag) = s.split_once('_').ok_or_else(bad)?;
        let tag: TagClass = tag.parse().map_err(|_| bad())?;
        match prefix {
            "B" => Ok(BioLabel::B(tag)),
            "I" => Ok(BioLabel::I(tag)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for BioLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Inclusive character offset.
    pub start: usize,
    /// Exclusive character offset.
    pub end: usize,
}

/// A typed entity over tokens `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub tag: TagClass,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, tag: TagClass) -> Self {
        EntitySpan { start, end, tag }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of tokens shared with `other`.
    pub fn overlap(&self, other: &EntitySpan) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }

    pub fn same_bounds(&self, other: &EntitySpan) -> bool {
        self.start == other.start && self.end == other.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub sentence_id: String,
    pub page_id: String,
    /// Sentence text the token offsets index into.
    pub text: String,
    pub tokens: Vec<Token>,
    pub labels: Vec<BioLabel>,
}

impl AnnotatedSentence {
    /// Builds a sentence from tokenized text and entity spans.
    pub fn from_spans(
        sentence_id: impl Into<String>,
        page_id: impl Into<String>,
        text: impl Into<String>,
        spans: &[EntitySpan],
    ) -> Result<Self> {
        let text = text.into();
        let tokens = tokenize(&text);
        let labels = spans_to_bio(&tokens, spans)?;
        Ok(AnnotatedSentence { sentence_id: sentence_id.into(), page_id: page_id.into(), text, tokens, labels })
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        bio_to_spans(&self.labels).spans
    }

    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn is_bio_valid(&self) -> bool {
        bio_to_spans(&self.labels).repairs == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub sentences: Vec<AnnotatedSentence>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, sentences: Vec<AnnotatedSentence>) -> Result<Self> {
        let corpus = Corpus { name: name.into(), sentences };
        corpus.check_unique_ids()?;
        Ok(corpus)
    }

    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sentences {
            if !seen.insert(s.sentence_id.as_str()) {
                return Err(CorpusError::DuplicateSentence(s.sentence_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Page ids in order of first appearance.
    pub fn page_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.sentences
            .iter()
            .filter(|s| seen.insert(s.page_id.as_str()))
            .map(|s| s.page_id.clone())
            .collect()
    }

    /// Sentences whose page is in `pages`, in corpus order.
    pub fn select_pages(&self, name: impl Into<String>, pages: &HashSet<String>) -> Corpus {
        Corpus {
            name: name.into(),
            sentences: self.sentences.iter().filter(|s| pages.contains(&s.page_id)).cloned().collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenization and sentence splitting
// ---------------------------------------------------------------------------

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace; every punctuation character is its own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_start = 0;
    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token { text: std::mem::take(current), start, end });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, current_start, i, &mut tokens);
        } else if is_punct(c) {
            flush(&mut current, current_start, i, &mut tokens);
            tokens.push(Token { text: c.to_string(), start: i, end: i + 1 });
        } else {
            if current.is_empty() {
                current_start = i;
            }
            current.push(c);
        }
    }
    let n = text.chars().count();
    flush(&mut current, current_start, n, &mut tokens);
    tokens
}

/// A cleaned sentence and the page-text character offset of each of its characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanSentence {
    pub text: String,
    pub source_offsets: Vec<usize>,
}

impl CleanSentence {
    /// Character range in the original page text covered by this sentence.
    pub fn source_range(&self) -> (usize, usize) {
        match (self.source_offsets.first(), self.source_offsets.last()) {
            (Some(&a), Some(&b)) => (a, b + 1),
            _ => (0, 0),
        }
    }
}

static CITATION: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r"(?i)\[\s*(?:\d+|[a-z]|note\s+\d+|nb\s+\d+|citation needed|clarification needed|when\?|who\?|according to whom\?)\s*\]",
    )
    .unwrap()
});

static PARAGRAPH_BREAK: Lazy<Regex> = Lazy::new(|| Regex::new(r"\n[ \t\r]*\n").unwrap());

const SUPERSCRIPT_DIGITS: &str = "⁰¹²³⁴⁵⁶⁷⁸⁹";

const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "gen", "col", "lt", "sgt", "capt", "rev", "hon", "gov",
    "sen", "rep", "pres", "mt", "ft", "inc", "ltd", "co", "corp", "vs", "etc", "no", "nos", "vol", "fig", "al",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "approx", "est", "dept",
    "univ", "assn", "bros", "ave", "blvd", "rd",
];

/// Removes citation markers and footnote numerals, then splits into sentences.
pub fn clean_and_split(text: &str) -> Vec<CleanSentence> {
    let chars: Vec<char> = text.chars().collect();
    let mut keep = vec![true; chars.len()];

    let byte_to_char = byte_to_char_map(text);
    for m in CITATION.find_iter(text) {
        let (mut a, b) = (byte_to_char[m.start()], byte_to_char[m.end()]);
        let next_is_word = chars.get(b).is_some_and(|c| c.is_alphanumeric());
        if !next_is_word {
            while a > 0 && chars[a - 1].is_whitespace() && chars[a - 1] != '\n' {
                a -= 1;
            }
        }
        keep[a..b].iter_mut().for_each(|k| *k = false);
    }
    for (i, c) in chars.iter().enumerate() {
        if SUPERSCRIPT_DIGITS.contains(*c) {
            keep[i] = false;
        }
    }

    // Paragraph boundaries are hard sentence boundaries.
    let mut paragraph_starts = vec![0];
    let mut paragraph_ends = Vec::new();
    for m in PARAGRAPH_BREAK.find_iter(text) {
        paragraph_ends.push(byte_to_char[m.start()]);
        paragraph_starts.push(byte_to_char[m.end()]);
    }
    paragraph_ends.push(chars.len());

    let mut out = Vec::new();
    for (&ps, &pe) in paragraph_starts.iter().zip(&paragraph_ends) {
        // Collapse whitespace runs into single spaces.
        let mut cleaned: Vec<(char, usize)> = Vec::new();
        for i in ps..pe {
            if !keep[i] {
                continue;
            }
            let c = chars[i];
            if c.is_whitespace() {
                if cleaned.last().is_some_and(|(p, _)| *p != ' ') {
                    cleaned.push((' ', i));
                }
            } else {
                cleaned.push((c, i));
            }
        }
        split_paragraph(&cleaned, &mut out);
    }
    out
}

fn byte_to_char_map(text: &str) -> Vec<usize> {
    let mut map = vec![0; text.len() + 1];
    let mut ci = 0;
    for (bi, c) in text.char_indices() {
        map[bi..bi + c.len_utf8()].fill(ci);
        ci += 1;
    }
    map[text.len()] = ci;
    map
}

fn split_paragraph(cleaned: &[(char, usize)], out: &mut Vec<CleanSentence>) {
    let mut start = 0;
    let n = cleaned.len();
    for i in 0..n {
        let c = cleaned[i].0;
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let boundary = i + 2 < n && cleaned[i + 1].0 == ' ' && cleaned[i + 2].0.is_uppercase();
        if !boundary || (c == '.' && is_abbreviation(&cleaned[start..i])) {
            continue;
        }
        push_sentence(&cleaned[start..=i], out);
        start = i + 2;
    }
    if start < n {
        push_sentence(&cleaned[start..], out);
    }
}

/// True when the word ending right before a period should not end a sentence.
fn is_abbreviation(before: &[(char, usize)]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|(c, _)| *c != ' ')
        .map(|(c, _)| *c)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    let mut letters = word.chars();
    // Single initials ("John F. Kennedy") and dotted acronyms ("U.S.").
    if let (Some(first), None) = (letters.next(), letters.next()) {
        if first.is_uppercase() {
            return true;
        }
    }
    if word.contains('.') && word.split('.').all(|p| p.chars().count() <= 2) {
        return true;
    }
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

fn push_sentence(chars: &[(char, usize)], out: &mut Vec<CleanSentence>) {
    let trimmed: Vec<&(char, usize)> = {
        let s = chars.iter().position(|(c, _)| *c != ' ');
        let e = chars.iter().rposition(|(c, _)| *c != ' ');
        match (s, e) {
            (Some(s), Some(e)) => chars[s..=e].iter().collect(),
            _ => return,
        }
    };
    out.push(CleanSentence {
        text: trimmed.iter().map(|(c, _)| *c).collect(),
        source_offsets: trimmed.iter().map(|(_, o)| *o).collect(),
    });
}

// ---------------------------------------------------------------------------
// BIO codec
// ---------------------------------------------------------------------------

pub fn spans_to_bio(tokens: &[Token], spans: &[EntitySpan]) -> Result<Vec<BioLabel>> {
    spans_to_labels(tokens.len(), spans)
}

/// Same as [`spans_to_bio`] when only the sentence length is known.
pub fn spans_to_labels(n_tokens: usize, spans: &[EntitySpan]) -> Result<Vec<BioLabel>> {
    let mut labels = vec![BioLabel::O; n_tokens];
    let mut claimed = vec![false; n_tokens];
    for span in spans {
        if span.start >= span.end || span.end > n_tokens {
            return Err(CorpusError::SpanConflict(format!(
                "span {}..{} out of bounds for {} tokens",
                span.start, span.end, n_tokens
            )));
        }
        for i in span.start..span.end {
            if claimed[i] {
                return Err(CorpusError::SpanConflict(format!("span {}..{} overlaps at token {i}", span.start, span.end)));
            }
            claimed[i] = true;
            labels[i] = if i == span.start { BioLabel::B(span.tag) } else { BioLabel::I(span.tag) };
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioDecode {
    pub spans: Vec<EntitySpan>,
    /// Number of `I_t` labels that started a new span because they followed
    /// `O` or a different tag.
    pub repairs: usize,
}

pub fn bio_to_spans(labels: &[BioLabel]) -> BioDecode {
    let mut spans = Vec::new();
    let mut repairs = 0;
    let mut open: Option<(usize, TagClass)> = None;
    for (i, label) in labels.iter().enumerate() {
        match *label {
            BioLabel::O => {
                if let Some((s, t)) = open.take() {
                    spans.push(EntitySpan::new(s, i, t));
                }
            }
            BioLabel::B(t) => {
                if let Some((s, u)) = open.take() {
                    spans.push(EntitySpan::new(s, i, u));
                }
                open = Some((i, t));
            }
            BioLabel::I(t) => match open {
                Some((_, u)) if u == t => {}
                _ => {
                    if let Some((s, u)) = open.take() {
                        spans.push(EntitySpan::new(s, i, u));
                    }
                    repairs += 1;
                    open = Some((i, t));
                }
            },
        }
    }
    if let Some((s, t)) = open {
        spans.push(EntitySpan::new(s, labels.len(), t));
    }
    BioDecode { spans, repairs }
}

// ---------------------------------------------------------------------------
// CoNLL I/O
// ---------------------------------------------------------------------------

/// Renders a corpus in the tab-separated CoNLL layout.
///
/// Each page's first sentence is preceded by `#page=<id>`; every sentence
/// carries `#sentence=<id>` and `#text=<text>` comment lines so that ids and
/// character offsets survive a round trip.
pub fn conll_to_string(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    let mut current_page: Option<&str> = None;
    for s in &corpus.sentences {
        if current_page != Some(s.page_id.as_str()) {
            out.push_str("#page=");
            out.push_str(&s.page_id);
            out.push('\n');
            current_page = Some(&s.page_id);
        }
        if s.text.contains(['\n', '\r']) || s.sentence_id.contains(['\n', '\r']) {
            return Err(CorpusError::MultilineText(s.sentence_id.clone()));
        }
        out.push_str("#sentence=");
        out.push_str(&s.sentence_id);
        out.push('\n');
        out.push_str("#text=");
        out.push_str(&s.text);
        out.push('\n');
        for (tok, label) in s.tokens.iter().zip(&s.labels) {
            if tok.text.is_empty() || tok.text.contains(char::is_whitespace) {
                return Err(CorpusError::BadToken(tok.text.clone()));
            }
            out.push_str(&tok.text);
            out.push('\t');
            out.push_str(&label.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_conll(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, conll_to_string(corpus)?)?;
    Ok(())
}

pub fn read_conll(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_conll(&text, name)
}

#[derive(Default)]
struct PendingSentence {
    id: Option<String>,
    text: Option<(String, usize)>,
    rows: Vec<(String, BioLabel, usize)>,
}

pub fn parse_conll(input: &str, name: impl Into<String>) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut page = String::from("doc");
    let mut per_page: HashMap<String, usize> = HashMap::new();
    let mut pending = PendingSentence::default();

    let mut finish = |pending: &mut PendingSentence, page: &str, sentences: &mut Vec<AnnotatedSentence>| -> Result<()> {
        let p = std::mem::take(pending);
        if p.rows.is_empty() {
            return Ok(());
        }
        let n = per_page.entry(page.to_string()).or_insert(0);
        let id = p.id.unwrap_or_else(|| format!("{page}-{n}"));
        *n += 1;
        let (tokens, text) = match p.text {
            Some((text, line)) => (align_tokens(&text, &p.rows, line)?, text),
            None => {
                let text = p.rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join(" ");
                (tokenize_joined(&p.rows), text)
            }
        };
        sentences.push(AnnotatedSentence {
            sentence_id: id,
            page_id: page.to_string(),
            text,
            tokens,
            labels: p.rows.iter().map(|r| r.1).collect(),
        });
        Ok(())
    };

    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            finish(&mut pending, &page, &mut sentences)?;
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        // `#` alone is a token, so a metadata line is recognized by its key;
        // other `#` lines without a tab are comments
        let meta = ["#page=", "#sentence=", "#text="].iter().any(|k| line.starts_with(k));
        if meta || (line.starts_with('#') && !line.contains('\t')) {
            let body = &line[1..];
            if let Some(id) = body.strip_prefix("page=") {
                finish(&mut pending, &page, &mut sentences)?;
                page = id.to_string();
            } else if let Some(id) = body.strip_prefix("sentence=") {
                if !pending.rows.is_empty() {
                    finish(&mut pending, &page, &mut sentences)?;
                }
                pending.id = Some(id.to_string());
            } else if let Some(text) = body.strip_prefix("text=") {
                pending.text = Some((text.to_string(), lineno));
            }
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(tok), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(CorpusError::Parse { line: lineno, message: "expected TOKEN<TAB>LABEL".into() });
        };
        if tok.is_empty() {
            return Err(CorpusError::Parse { line: lineno, message: "empty token".into() });
        }
        let label: BioLabel =
            label.parse().map_err(|_| CorpusError::Label { line: lineno, label: label.to_string() })?;
        pending.rows.push((tok.to_string(), label, lineno));
    }
    finish(&mut pending, &page, &mut sentences)?;
    Corpus::new(name, sentences)
}

fn tokenize_joined(rows: &[(String, BioLabel, usize)]) -> Vec<Token> {
    let mut pos = 0;
    rows.iter()
        .map(|(t, _, _)| {
            let len = t.chars().count();
            let tok = Token { text: t.clone(), start: pos, end: pos + len };
            pos += len + 1;
            tok
        })
        .collect()
}

fn align_tokens(text: &str, rows: &[(String, BioLabel, usize)], text_line: usize) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(rows.len());
    for (tok, _, line) in rows {
        while pos < chars.len() && chars[pos].is_whitespace() {
            pos += 1;
        }
        let tc: Vec<char> = tok.chars().collect();
        if chars.get(pos..pos + tc.len()) != Some(&tc[..]) {
            return Err(CorpusError::Parse {
                line: *line,
                message: format!("token {tok:?} does not match #text on line {text_line}"),
            });
        }
        tokens.push(Token { text: tok.clone(), start: pos, end: pos + tc.len() });
        pos += tc.len();
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// Statistics and splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub pages: usize,
    pub sentences: usize,
    /// Sentences containing at least one entity.
    pub sentences_with_entities: usize,
    pub mentions: BTreeMap<TagClass, usize>,
    pub bio_repairs: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        mentions: TagClass::ALL.iter().map(|t| (*t, 0)).collect(),
        ..Default::default()
    };
    let mut pages = BTreeSet::new();
    for s in &corpus.sentences {
        pages.insert(s.page_id.as_str());
        stats.sentences += 1;
        let decoded = bio_to_spans(&s.labels);
        stats.bio_repairs += decoded.repairs;
        if !decoded.spans.is_empty() {
            stats.sentences_with_entities += 1;
        }
        for span in decoded.spans {
            *stats.mentions.entry(span.tag).or_insert(0) += 1;
        }
    }
    stats.pages = pages.len();
    stats
}

/// Allocates `total` items to `ratios` by largest remainder.
pub(crate) fn allocate(total: usize, ratios: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Page-granular seeded split into (train, validation, test).
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(CorpusError::Ratio(format!("ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CorpusError::Ratio(format!("ratios must sum to 1, got {sum}")));
    }
    let mut pages = corpus.page_ids();
    pages.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = allocate(pages.len(), &ratios);
    let mut parts = Vec::with_capacity(3);
    let mut offset = 0;
    for (suffix, n) in ["train", "validation", "test"].iter().zip(counts) {
        let set: HashSet<String> = pages[offset..offset + n].iter().cloned().collect();
        offset += n;
        parts.push(corpus.select_pages(format!("{}-{}", corpus.name, suffix), &set));
    }
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((train, validation, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token]) -> Vec<(&str, usize, usize)> {
        tokens.iter().map(|t| (t.text.as_str(), t.start, t.end)).collect()
    }

    fn slice(text: &str, a: usize, b: usize) -> String {
        text.chars().skip(a).take(b - a).collect()
    }

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(texts(&tokenize("Adam London.")), vec![("Adam", 0, 4), ("London", 5, 11), (".", 11, 12)]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
    }

    #[test]
    fn tokenize_offsets_round_trip() {
        for text in ["U.S.A.", "Zoë  Müller-Smith, (née Brown)", "a\u{00a0}b\tc"] {
            for t in tokenize(text) {
                assert_eq!(slice(text, t.start, t.end), t.text);
                assert!(!t.text.contains(char::is_whitespace));
            }
        }
        let usa: Vec<_> = tokenize("U.S.A.").into_iter().map(|t| t.text).collect();
        assert_eq!(usa, ["U", ".", "S", ".", "A", "."]);
    }

    #[test]
    fn clean_removes_citations_and_splits() {
        let out: Vec<_> =
            clean_and_split("He studied law[12] in Boston. She left.").into_iter().map(|s| s.text).collect();
        assert_eq!(out, ["He studied law in Boston.", "She left."]);
    }

    #[test]
    fn clean_respects_abbreviations() {
        assert_eq!(clean_and_split("Dr. Smith arrived.").len(), 1);
        assert_eq!(clean_and_split("John F. Kennedy moved to the U.S. in 1950. He died.").len(), 2);
        assert_eq!(clean_and_split("He was born on Sept. Fifth.").len(), 1);
    }

    #[test]
    fn clean_keeps_dates_and_maps_offsets() {
        let page = "Born 12 April 1980 [3] in Troy.[4] She married Bob Ray in 2001.[5][6]\n\nHer son Troy lives there.[7]";
        let out = clean_and_split(page);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].text, "Born 12 April 1980 in Troy.");
        assert_eq!(out[1].text, "She married Bob Ray in 2001.");
        for s in &out {
            assert!(!s.text.contains('['));
            for (c, &o) in s.text.chars().zip(&s.source_offsets) {
                assert_eq!(page.chars().nth(o), Some(c));
            }
        }
    }

    #[test]
    fn clean_strips_superscript_numerals() {
        let out = clean_and_split("She won gold.¹ Then she retired.");
        assert_eq!(out[0].text, "She won gold.");
    }

    #[test]
    fn bio_examples() {
        let toks = tokenize("Adam London");
        let labels = spans_to_bio(&toks, &[EntitySpan::new(0, 2, TagClass::SP)]).unwrap();
        assert_eq!(labels, [BioLabel::B(TagClass::SP), BioLabel::I(TagClass::SP)]);
        assert_eq!(spans_to_bio(&toks, &[]).unwrap(), [BioLabel::O, BioLabel::O]);
        let d = bio_to_spans(&labels);
        assert_eq!(d.spans, [EntitySpan::new(0, 2, TagClass::SP)]);
        assert_eq!(d.repairs, 0);

        let d = bio_to_spans(&[BioLabel::O, BioLabel::I(TagClass::ED)]);
        assert_eq!(d.spans, [EntitySpan::new(1, 2, TagClass::ED)]);
        assert_eq!(d.repairs, 1);
    }

    #[test]
    fn bio_rejects_conflicts() {
        let toks = tokenize("a b c");
        let overlapping = [EntitySpan::new(0, 2, TagClass::SP), EntitySpan::new(1, 3, TagClass::CH)];
        assert!(matches!(spans_to_bio(&toks, &overlapping), Err(CorpusError::SpanConflict(_))));
        assert!(spans_to_bio(&toks, &[EntitySpan::new(2, 4, TagClass::SP)]).is_err());
        assert!(spans_to_bio(&toks, &[EntitySpan::new(1, 1, TagClass::SP)]).is_err());
    }

    #[test]
    fn label_strings() {
        let all: Vec<String> = BioLabel::all().iter().map(|l| l.to_string()).collect();
        assert_eq!(all, ["O", "B_BD", "I_BD", "B_PR", "I_PR", "B_SP", "I_SP", "B_CH", "I_CH", "B_ED", "I_ED"]);
        for (i, l) in BioLabel::all().iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(l.to_string().parse::<BioLabel>().unwrap(), *l);
        }
        assert!("B_XX".parse::<BioLabel>().is_err());
        assert!("O_".parse::<BioLabel>().is_err());
    }

    const FIXTURE: &str = "#page=p1\n#sentence=p1-0\n#text=Adam London married Eve.\nAdam\tB_SP\nLondon\tI_SP\nmarried\tO\nEve\tB_SP\n.\tO\n\n#page=p2\n#sentence=p2-3\n#text=Born 1980.\nBorn\tO\n1980\tB_BD\n.\tO\n\n";

    #[test]
    fn conll_fixture_round_trip() {
        let c = parse_conll(FIXTURE, "fx").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[1].sentence_id, "p2-3");
        assert_eq!(c.sentences[1].page_id, "p2");
        assert_eq!(c.sentences[0].spans().len(), 2);
        assert_eq!(conll_to_string(&c).unwrap(), FIXTURE);
    }

    #[test]
    fn conll_plain_input_without_comments() {
        let c = parse_conll("-DOCSTART-\tO\n\nJane\tB_PR\nDoe\tI_PR\n\nx\tO\n", "plain").unwrap();
        // -DOCSTART- lines carrying a label column are skipped too
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].sentence_id, "doc-0");
        assert_eq!(c.sentences[0].text, "Jane Doe");
        assert_eq!(c.sentences[0].tokens[1].start, 5);
    }

    #[test]
    fn conll_errors_name_the_line() {
        let err = parse_conll("#page=a\nAdam\tB_XX\n", "bad").unwrap_err();
        assert!(matches!(err, CorpusError::Label { line: 2, .. }), "{err}");
        let err = parse_conll("Adam B_SP\n", "bad").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }), "{err}");
        let err = parse_conll("#text=Adam\nEve\tO\n", "bad").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");
        let err = parse_conll("#sentence=a\nx\tO\n\n#sentence=a\ny\tO\n", "dup").unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateSentence(_)));
    }

    #[test]
    fn stats_counts_mentions() {
        assert_eq!(corpus_stats(&Corpus::default()).sentences, 0);
        let c = parse_conll(FIXTURE, "fx").unwrap();
        let st = corpus_stats(&c);
        assert_eq!(st.mentions[&TagClass::SP], 2);
        assert_eq!(st.mentions[&TagClass::BD], 1);
        assert_eq!(st.pages, 2);
        assert_eq!(st.sentences_with_entities, 2);
    }

    fn pages_corpus(n: usize) -> Corpus {
        let sentences = (0..n)
            .flat_map(|p| {
                (0..2).map(move |i| {
                    AnnotatedSentence::from_spans(format!("p{p}-{i}"), format!("p{p}"), "Some text .", &[]).unwrap()
                })
            })
            .collect();
        Corpus::new("pages", sentences).unwrap()
    }

    #[test]
    fn split_is_page_granular_and_seeded() {
        let c = pages_corpus(10);
        let (tr, va, te) = split_corpus(&c, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((tr.page_ids().len(), va.page_ids().len(), te.page_ids().len()), (8, 1, 1));
        let again = split_corpus(&c, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(tr, again.0);
        let mut all: Vec<String> = [tr.page_ids(), va.page_ids(), te.page_ids()].concat();
        all.sort();
        let mut orig = c.page_ids();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(tr.len() + va.len() + te.len(), c.len());
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let c = pages_corpus(3);
        assert!(matches!(split_corpus(&c, [0.5, 0.5, 0.5], 1), Err(CorpusError::Ratio(_))));
        assert!(matches!(split_corpus(&c, [1.0, 0.0, 0.0], 1), Err(CorpusError::Ratio(_))));
    }

    #[test]
    fn allocate_largest_remainder() {
        assert_eq!(allocate(10, &[0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(allocate(3, &[0.5, 0.25, 0.25]), [1, 1, 1]);
        assert_eq!(allocate(0, &[0.5, 0.5]), [0, 0]);
    }
}
