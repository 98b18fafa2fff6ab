//! Automatic annotation: find each record phrase in the page text and label it.
//!
//! Candidate spans come from a [`CandidateProvider`]; for each tag the
//! candidates of the preferred categories are fuzzy-matched against the
//! record's phrases and the best match is claimed. Overlapping claims are
//! resolved by score, then span length, then tag order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, AnnotatedSentence, Corpus, EntitySpan, TagClass, Token};
use crate::dates;
use crate::fuzzymatch::{self, GramProfile, DEFAULT_THRESHOLD};
use crate::infobox::PiiRecord;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("candidate sidecar line {line}: {message}")]
    Sidecar { line: usize, message: String },
    #[error("invalid annotation config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CandidateCategory {
    Person,
    Org,
    Date,
    NounChunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub start: usize,
    pub end: usize,
    pub category: CandidateCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    pub fuzzy_threshold: f64,
    pub category_map: BTreeMap<TagClass, Vec<CandidateCategory>>,
    pub keep_empty_sentences: bool,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        use CandidateCategory::*;
        let category_map = TagClass::ALL
            .iter()
            .map(|t| {
                let cats = match t {
                    TagClass::BD => vec![Date],
                    TagClass::PR | TagClass::SP | TagClass::CH => vec![Person],
                    TagClass::ED => vec![Org],
                };
                (*t, cats)
            })
            .collect();
        AnnotationConfig { fuzzy_threshold: DEFAULT_THRESHOLD, category_map, keep_empty_sentences: false }
    }
}

impl AnnotationConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        AnnotationConfig { fuzzy_threshold: threshold, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), AnnotateError> {
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(AnnotateError::Config(format!("fuzzy threshold {} outside [0, 1]", self.fuzzy_threshold)));
        }
        for t in TagClass::ALL {
            if self.category_map.get(&t).is_none_or(|c| c.is_empty()) {
                return Err(AnnotateError::Config(format!("no candidate categories for {t}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Candidate providers
// ---------------------------------------------------------------------------

pub trait CandidateProvider: Sync {
    fn candidates(&self, sentence_id: &str, tokens: &[Token]) -> Vec<CandidateSpan>;
}

/// Capitalization and date-pattern heuristics.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicCandidates;

impl CandidateProvider for HeuristicCandidates {
    fn candidates(&self, _sentence_id: &str, tokens: &[Token]) -> Vec<CandidateSpan> {
        extract_candidates(tokens)
    }
}

/// Precomputed candidates keyed by sentence id, read from a JSON-lines file.
#[derive(Debug, Clone, Default)]
pub struct SidecarCandidates {
    by_sentence: HashMap<String, Vec<CandidateSpan>>,
}

#[derive(Deserialize)]
struct SidecarLine {
    sentence_id: String,
    candidates: Vec<CandidateSpan>,
}

impl SidecarCandidates {
    pub fn parse(text: &str) -> Result<Self, AnnotateError> {
        let mut by_sentence = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: SidecarLine = serde_json::from_str(line)
                .map_err(|e| AnnotateError::Sidecar { line: i + 1, message: e.to_string() })?;
            if let Some(c) = parsed.candidates.iter().find(|c| c.start >= c.end) {
                return Err(AnnotateError::Sidecar {
                    line: i + 1,
                    message: format!("empty candidate span {}..{}", c.start, c.end),
                });
            }
            by_sentence.insert(parsed.sentence_id, parsed.candidates);
        }
        Ok(SidecarCandidates { by_sentence })
    }

    pub fn load(path: &Path) -> Result<Self, AnnotateError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.by_sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sentence.is_empty()
    }
}

impl CandidateProvider for SidecarCandidates {
    fn candidates(&self, sentence_id: &str, tokens: &[Token]) -> Vec<CandidateSpan> {
        self.by_sentence
            .get(sentence_id)
            .map(|cs| cs.iter().copied().filter(|c| c.start < c.end && c.end <= tokens.len()).collect())
            .unwrap_or_default()
    }
}

const CONNECTORS: &[&str] = &["of", "the", "de", "van", "von"];
const INSTITUTION_WORDS: &[&str] = &["University", "College", "School", "Institute", "Academy"];
/// Capitalized only because they open the sentence.
const SENTENCE_OPENERS: &[&str] = &[
    "a", "after", "an", "and", "as", "at", "before", "born", "but", "by", "during", "following", "for", "from", "he",
    "her", "his", "in", "it", "its", "on", "she", "since", "that", "the", "their", "they", "this", "when", "while",
    "with",
];

fn is_capitalized(t: &Token) -> bool {
    t.text.chars().next().is_some_and(char::is_uppercase)
}

fn is_bridge(tokens: &[Token], k: usize) -> bool {
    let t = tokens[k].text.as_str();
    if CONNECTORS.contains(&t) || matches!(t, "-" | "'" | "\u{2019}") {
        return true;
    }
    // the period of an initial, as in "John F. Kennedy"
    t == "." && k > 0 && {
        let prev = &tokens[k - 1].text;
        prev.chars().count() == 1 && is_capitalized(&tokens[k - 1])
    }
}

fn capitalized_runs(tokens: &[Token]) -> Vec<(usize, usize)> {
    let n = tokens.len();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < n {
        if !is_capitalized(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i + 1;
        loop {
            if end < n && is_capitalized(&tokens[end]) {
                end += 1;
                continue;
            }
            let mut k = end;
            while k < n && is_bridge(tokens, k) {
                k += 1;
            }
            if k > end && k < n && is_capitalized(&tokens[k]) {
                end = k + 1;
                continue;
            }
            break;
        }
        runs.push((start, end));
        i = end;
    }
    runs
}

/// Text of tokens `start..end`, re-inserting single spaces at gaps.
pub fn span_text(tokens: &[Token], start: usize, end: usize) -> String {
    let mut out = String::new();
    for (i, t) in tokens[start..end].iter().enumerate() {
        if i > 0 && t.start > tokens[start + i - 1].end {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}

/// Built-in candidate heuristic.
///
/// Capitalized runs (lowercase connectors allowed inside) become NOUN_CHUNK
/// candidates as-is and PERSON candidates once a sentence-opening function
/// word is trimmed; runs with an institutional keyword are also ORG. Date
/// pattern matches become DATE candidates.
pub fn extract_candidates(tokens: &[Token]) -> Vec<CandidateSpan> {
    let mut out = HashSet::new();
    for (start, end) in capitalized_runs(tokens) {
        out.insert(CandidateSpan { start, end, category: CandidateCategory::NounChunk });
        let mut s = start;
        if s == 0 && SENTENCE_OPENERS.contains(&tokens[0].text.to_lowercase().as_str()) {
            s += 1;
        }
        while s < end && !is_capitalized(&tokens[s]) {
            s += 1;
        }
        if s >= end {
            continue;
        }
        out.insert(CandidateSpan { start: s, end, category: CandidateCategory::Person });
        if tokens[s..end].iter().any(|t| INSTITUTION_WORDS.contains(&t.text.as_str())) {
            out.insert(CandidateSpan { start: s, end, category: CandidateCategory::Org });
        }
    }
    for (start, end) in date_candidates(tokens) {
        out.insert(CandidateSpan { start, end, category: CandidateCategory::Date });
    }
    let mut out: Vec<CandidateSpan> = out.into_iter().collect();
    out.sort();
    out
}

fn date_candidates(tokens: &[Token]) -> Vec<(usize, usize)> {
    let Some(last) = tokens.last() else { return Vec::new() };
    let mut chars = vec![' '; last.end];
    for t in tokens {
        for (i, c) in t.text.chars().enumerate() {
            chars[t.start + i] = c;
        }
    }
    let text: String = chars.iter().collect();
    let byte_to_char: HashMap<usize, usize> =
        text.char_indices().enumerate().map(|(ci, (bi, _))| (bi, ci)).chain([(text.len(), chars.len())]).collect();
    let mut out = Vec::new();
    for r in dates::find_date_mentions(&text) {
        let (a, b) = (byte_to_char[&r.start], byte_to_char[&r.end]);
        let s = tokens.iter().position(|t| t.start == a);
        let e = tokens.iter().position(|t| t.end == b);
        if let (Some(s), Some(e)) = (s, e) {
            out.push((s, e + 1));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Entity location
// ---------------------------------------------------------------------------

/// One phrase's winning candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Claim {
    pub span: EntitySpan,
    pub score: f64,
    /// Index of the phrase within `record.phrases(span.tag)`.
    pub phrase: usize,
}

/// All claims before overlap resolution.
pub fn phrase_claims(
    tokens: &[Token],
    candidates: &[CandidateSpan],
    record: &PiiRecord,
    config: &AnnotationConfig,
) -> Vec<Claim> {
    let mut claims = Vec::new();
    for tag in TagClass::ALL {
        let phrases = record.phrases(tag);
        if phrases.is_empty() {
            continue;
        }
        let wanted = config.category_map.get(&tag).map(Vec::as_slice).unwrap_or(&[]);
        let mut pool = pool_for(candidates, wanted);
        if pool.is_empty() {
            pool = pool_for(candidates, &[CandidateCategory::NounChunk]);
        }
        if pool.is_empty() {
            continue;
        }
        let profiles: Vec<GramProfile> = pool.iter().map(|&(s, e)| GramProfile::new(&span_text(tokens, s, e))).collect();
        for (pi, phrase) in phrases.iter().enumerate() {
            let target = GramProfile::new(phrase);
            if let Some(m) = fuzzymatch::best_match_profiles(&target, &profiles, config.fuzzy_threshold) {
                let (s, e) = pool[m.candidate_index];
                claims.push(Claim { span: EntitySpan::new(s, e, tag), score: m.score, phrase: pi });
            }
        }
    }
    claims
}

fn pool_for(candidates: &[CandidateSpan], wanted: &[CandidateCategory]) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    candidates
        .iter()
        .filter(|c| wanted.contains(&c.category))
        .map(|c| (c.start, c.end))
        .filter(|se| seen.insert(*se))
        .collect()
}

/// Keeps a non-overlapping subset of claims, best first.
pub fn resolve_claims(mut claims: Vec<Claim>) -> Vec<Claim> {
    claims.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(b.span.len().cmp(&a.span.len()))
            .then(a.span.tag.cmp(&b.span.tag))
            .then(a.span.start.cmp(&b.span.start))
            .then(a.phrase.cmp(&b.phrase))
    });
    let mut kept: Vec<Claim> = Vec::new();
    for c in claims {
        if kept.iter().all(|k| k.span.overlap(&c.span) == 0) {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| c.span.start);
    kept
}

pub fn locate_entities(
    tokens: &[Token],
    candidates: &[CandidateSpan],
    record: &PiiRecord,
    config: &AnnotationConfig,
) -> Vec<EntitySpan> {
    resolve_claims(phrase_claims(tokens, candidates, record, config)).into_iter().map(|c| c.span).collect()
}

// ---------------------------------------------------------------------------
// Pages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationStats {
    pub pages: usize,
    pub sentences_total: usize,
    pub sentences_kept: usize,
    pub spans: BTreeMap<TagClass, usize>,
    /// Phrases that labeled at least one span on their page.
    pub located: BTreeMap<TagClass, usize>,
    pub unlocated: BTreeMap<TagClass, usize>,
}

impl AnnotationStats {
    fn zeroed() -> Self {
        let zeros: BTreeMap<TagClass, usize> = TagClass::ALL.iter().map(|t| (*t, 0)).collect();
        AnnotationStats { spans: zeros.clone(), located: zeros.clone(), unlocated: zeros, ..Default::default() }
    }

    pub fn merge(&mut self, other: &AnnotationStats) {
        self.pages += other.pages;
        self.sentences_total += other.sentences_total;
        self.sentences_kept += other.sentences_kept;
        for (dst, src) in [(&mut self.spans, &other.spans), (&mut self.located, &other.located), (&mut self.unlocated, &other.unlocated)] {
            for (t, n) in src {
                *dst.entry(*t).or_insert(0) += n;
            }
        }
    }

    pub fn total_spans(&self) -> usize {
        self.spans.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotatedPage {
    pub sentences: Vec<AnnotatedSentence>,
    pub stats: AnnotationStats,
}

/// Splits, tokenizes and labels one page. Sentence ids are
/// `<page_id>-<index>` where the index counts every sentence of the page,
/// including dropped ones.
pub fn annotate_page(
    page_text: &str,
    record: &PiiRecord,
    config: &AnnotationConfig,
    provider: &dyn CandidateProvider,
) -> AnnotatedPage {
    let mut stats = AnnotationStats::zeroed();
    if record.is_empty() {
        return AnnotatedPage { sentences: Vec::new(), stats };
    }
    stats.pages = 1;
    let mut located: HashSet<(TagClass, usize)> = HashSet::new();
    let mut sentences = Vec::new();
    for (i, clean) in corpus::clean_and_split(page_text).into_iter().enumerate() {
        stats.sentences_total += 1;
        let sentence_id = format!("{}-{}", record.page_id, i);
        let tokens = corpus::tokenize(&clean.text);
        let candidates = provider.candidates(&sentence_id, &tokens);
        let claims = phrase_claims(&tokens, &candidates, record, config);
        let kept = resolve_claims(claims.clone());
        for c in &claims {
            if kept.iter().any(|k| k.span == c.span) {
                located.insert((c.span.tag, c.phrase));
            }
        }
        let spans: Vec<EntitySpan> = kept.iter().map(|c| c.span).collect();
        for s in &spans {
            *stats.spans.entry(s.tag).or_insert(0) += 1;
        }
        if spans.is_empty() && !config.keep_empty_sentences {
            continue;
        }
        let labels = corpus::spans_to_bio(&tokens, &spans).expect("resolved claims never overlap");
        stats.sentences_kept += 1;
        sentences.push(AnnotatedSentence {
            sentence_id,
            page_id: record.page_id.clone(),
            text: clean.text,
            tokens,
            labels,
        });
    }
    for tag in TagClass::ALL {
        let n = record.phrases(tag).len();
        let found = located.iter().filter(|(t, _)| *t == tag).count();
        stats.located.insert(tag, found);
        stats.unlocated.insert(tag, n - found);
    }
    AnnotatedPage { sentences, stats }
}

/// Annotates independent pages in parallel; output follows input order.
pub fn annotate_pages(
    name: &str,
    pages: &[(String, PiiRecord)],
    config: &AnnotationConfig,
    provider: &dyn CandidateProvider,
) -> (Corpus, AnnotationStats) {
    let results: Vec<AnnotatedPage> =
        pages.par_iter().map(|(text, rec)| annotate_page(text, rec, config, provider)).collect();
    let mut stats = AnnotationStats::zeroed();
    let mut sentences = Vec::new();
    for r in results {
        stats.merge(&r.stats);
        sentences.extend(r.sentences);
    }
    (Corpus { name: name.to_string(), sentences }, stats)
}
