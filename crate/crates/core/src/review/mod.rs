//! Human review of machine annotations.
//!
//! Review state is a left fold over an append-only decision log: starting
//! from the machine corpus, each decision confirms, rejects, corrects or adds
//! one entity. Replaying the same log always yields the same state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{spans_to_labels, AnnotatedSentence, Corpus, EntitySpan, TagClass};
use crate::infobox::PiiRecord;

#[cfg(feature = "server")]
pub mod server;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown sentence {0:?}")]
    UnknownSentence(String),
    #[error("sentence {sentence:?} has no entity {entity:?}")]
    UnknownEntity { sentence: String, entity: String },
    #[error("span {start}..{end} overlaps entity {other:?}")]
    Overlap { start: usize, end: usize, other: String },
    #[error("invalid decision: {0}")]
    Invalid(String),
    #[error("decision log {path}: corrupt record after last good offset {offset}: {message}")]
    CorruptLog { path: PathBuf, offset: u64, message: String },
    #[error("decision log {path}: logged decision {decision_id} no longer applies: {message}")]
    Replay { path: PathBuf, decision_id: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Confirm,
    Reject,
    Correct,
    Add,
}

/// Span in token indices; `tag` is a class name or `"O"` (correct-to-O).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanInput {
    pub start: usize,
    pub end: usize,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub decision_id: u64,
    pub sentence_id: String,
    pub action: Action,
    /// Entity id for CONFIRM, REJECT and CORRECT. A CONFIRM without a target
    /// confirms every remaining entity of the sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<SpanInput>,
    #[serde(default)]
    pub annotator: String,
    #[serde(default)]
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Machine,
    Added,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityStatus {
    Pending,
    Confirmed,
    Rejected,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntity {
    pub id: String,
    pub origin: Origin,
    pub start: usize,
    pub end: usize,
    pub tag: TagClass,
    pub status: EntityStatus,
}

impl ReviewEntity {
    pub fn span(&self) -> EntitySpan {
        EntitySpan::new(self.start, self.end, self.tag)
    }

    fn is_live(&self) -> bool {
        self.status != EntityStatus::Rejected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceReview {
    pub sentence: AnnotatedSentence,
    pub entities: Vec<ReviewEntity>,
    /// Set by a sentence-level CONFIRM; the only way to finish a sentence
    /// that has no entities.
    pub confirmed: bool,
}

impl SentenceReview {
    fn new(sentence: AnnotatedSentence) -> Self {
        let entities = sentence
            .spans()
            .into_iter()
            .enumerate()
            .map(|(i, s)| ReviewEntity {
                id: format!("m{i}"),
                origin: Origin::Machine,
                start: s.start,
                end: s.end,
                tag: s.tag,
                status: EntityStatus::Pending,
            })
            .collect();
        SentenceReview { sentence, entities, confirmed: false }
    }

    pub fn status(&self) -> SentenceStatus {
        let all_decided = !self.entities.is_empty() && self.entities.iter().all(|e| e.status != EntityStatus::Pending);
        if self.confirmed || all_decided {
            SentenceStatus::Done
        } else {
            SentenceStatus::Pending
        }
    }

    pub fn gold_spans(&self) -> Vec<EntitySpan> {
        let mut spans: Vec<EntitySpan> = self.entities.iter().filter(|e| e.is_live()).map(ReviewEntity::span).collect();
        spans.sort_by_key(|s| s.start);
        spans
    }

    fn entity_mut(&mut self, id: &str) -> Result<&mut ReviewEntity, ReviewError> {
        let sentence = self.sentence.sentence_id.clone();
        self.entities
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| ReviewError::UnknownEntity { sentence, entity: id.to_string() })
    }

    fn check_free(&self, span: &EntitySpan, except: Option<&str>) -> Result<(), ReviewError> {
        let n = self.sentence.tokens.len();
        if span.start >= span.end || span.end > n {
            return Err(ReviewError::Invalid(format!(
                "span {}..{} is outside the sentence's {n} tokens",
                span.start, span.end
            )));
        }
        match self.entities.iter().find(|e| e.is_live() && Some(e.id.as_str()) != except && e.span().overlap(span) > 0) {
            Some(other) => Err(ReviewError::Overlap { start: span.start, end: span.end, other: other.id.clone() }),
            None => Ok(()),
        }
    }

    fn apply(&mut self, d: &ReviewDecision) -> Result<(), ReviewError> {
        let target = || d.target.as_deref().ok_or_else(|| ReviewError::Invalid(format!("{:?} needs a target", d.action)));
        let span = || d.span.as_ref().ok_or_else(|| ReviewError::Invalid(format!("{:?} needs a span", d.action)));
        match d.action {
            Action::Confirm => match d.target.as_deref() {
                None => {
                    for e in self.entities.iter_mut().filter(|e| e.status == EntityStatus::Pending) {
                        e.status = EntityStatus::Confirmed;
                    }
                    self.confirmed = true;
                }
                Some(id) => {
                    let e = self.entity_mut(id)?.clone();
                    if !e.is_live() {
                        self.check_free(&e.span(), Some(id))?;
                    }
                    self.entity_mut(id)?.status = EntityStatus::Confirmed;
                }
            },
            Action::Reject => {
                self.entity_mut(target()?)?.status = EntityStatus::Rejected;
            }
            Action::Correct => {
                let id = target()?;
                self.entity_mut(id)?;
                let s = span()?;
                if s.tag.eq_ignore_ascii_case("O") {
                    self.entity_mut(id)?.status = EntityStatus::Rejected;
                    return Ok(());
                }
                let tag = parse_tag(&s.tag)?;
                let new = EntitySpan::new(s.start, s.end, tag);
                self.check_free(&new, Some(id))?;
                let e = self.entity_mut(id)?;
                (e.start, e.end, e.tag, e.status) = (new.start, new.end, tag, EntityStatus::Corrected);
            }
            Action::Add => {
                if d.target.is_some() {
                    return Err(ReviewError::Invalid("ADD takes no target".into()));
                }
                let s = span()?;
                let tag = parse_tag(&s.tag)?;
                let new = EntitySpan::new(s.start, s.end, tag);
                self.check_free(&new, None)?;
                let id = format!("a{}", d.decision_id);
                if self.entities.iter().any(|e| e.id == id) {
                    return Err(ReviewError::Invalid(format!("decision id {} was already used", d.decision_id)));
                }
                self.entities.push(ReviewEntity {
                    id,
                    origin: Origin::Added,
                    start: new.start,
                    end: new.end,
                    tag,
                    status: EntityStatus::Confirmed,
                });
            }
        }
        Ok(())
    }
}

fn parse_tag(s: &str) -> Result<TagClass, ReviewError> {
    s.parse().map_err(|_| ReviewError::Invalid(format!("unknown tag {s:?}")))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub sentences: usize,
    pub done: usize,
    pub pending: usize,
    pub decisions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewState {
    pub name: String,
    sentences: Vec<SentenceReview>,
    index: HashMap<String, usize>,
    records: HashMap<String, PiiRecord>,
    /// Sentence indices in serving order.
    order: Vec<usize>,
    decisions: usize,
}

impl ReviewState {
    /// Pages are served in descending order of machine entity count, ties
    /// in corpus order.
    pub fn new(machine: &Corpus, records: &[PiiRecord]) -> Self {
        let sentences: Vec<SentenceReview> = machine.sentences.iter().cloned().map(SentenceReview::new).collect();
        let index = sentences.iter().enumerate().map(|(i, s)| (s.sentence.sentence_id.clone(), i)).collect();
        let mut per_page: BTreeMap<usize, (String, usize, Vec<usize>)> = BTreeMap::new();
        let mut page_rank: HashMap<&str, usize> = HashMap::new();
        for (i, s) in sentences.iter().enumerate() {
            let next = page_rank.len();
            let rank = *page_rank.entry(s.sentence.page_id.as_str()).or_insert(next);
            let entry = per_page.entry(rank).or_insert_with(|| (s.sentence.page_id.clone(), 0, Vec::new()));
            entry.1 += s.entities.len();
            entry.2.push(i);
        }
        let mut pages: Vec<(usize, usize, Vec<usize>)> =
            per_page.into_iter().map(|(rank, (_, count, idx))| (rank, count, idx)).collect();
        pages.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let order = pages.into_iter().flat_map(|(_, _, idx)| idx).collect();
        let records = records.iter().map(|r| (r.page_id.clone(), r.clone())).collect();
        ReviewState { name: machine.name.clone(), sentences, index, records, order, decisions: 0 }
    }

    pub fn sentence(&self, id: &str) -> Option<&SentenceReview> {
        self.index.get(id).map(|&i| &self.sentences[i])
    }

    pub fn sentences(&self) -> impl Iterator<Item = &SentenceReview> {
        self.sentences.iter()
    }

    pub fn record(&self, page_id: &str) -> Option<&PiiRecord> {
        self.records.get(page_id)
    }

    pub fn decisions_applied(&self) -> usize {
        self.decisions
    }

    pub fn next_pending(&self) -> Option<&SentenceReview> {
        self.order.iter().map(|&i| &self.sentences[i]).find(|s| s.status() == SentenceStatus::Pending)
    }

    pub fn progress(&self) -> Progress {
        let done = self.sentences.iter().filter(|s| s.status() == SentenceStatus::Done).count();
        Progress { sentences: self.sentences.len(), done, pending: self.sentences.len() - done, decisions: self.decisions }
    }

    /// Checks `d` without changing anything.
    pub fn validate(&self, d: &ReviewDecision) -> Result<(), ReviewError> {
        let i = *self.index.get(&d.sentence_id).ok_or_else(|| ReviewError::UnknownSentence(d.sentence_id.clone()))?;
        self.sentences[i].clone().apply(d)
    }

    /// Applies `d` atomically: on error the state is unchanged.
    pub fn apply(&mut self, d: &ReviewDecision) -> Result<(), ReviewError> {
        let i = *self.index.get(&d.sentence_id).ok_or_else(|| ReviewError::UnknownSentence(d.sentence_id.clone()))?;
        let mut next = self.sentences[i].clone();
        next.apply(d)?;
        self.sentences[i] = next;
        self.decisions += 1;
        Ok(())
    }

    /// Gold corpus in machine-corpus order. Pending sentences keep their
    /// undecided machine entities unless `only_done` drops them.
    pub fn export_gold(&self, only_done: bool) -> Corpus {
        let sentences = self
            .sentences
            .iter()
            .filter(|s| !only_done || s.status() == SentenceStatus::Done)
            .map(|s| {
                let labels = spans_to_labels(s.sentence.tokens.len(), &s.gold_spans())
                    .expect("accepted decisions never produce overlapping spans");
                AnnotatedSentence { labels, ..s.sentence.clone() }
            })
            .collect();
        Corpus { name: format!("{}-gold", self.name), sentences }
    }
}

/// Append-only JSONL decision log.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Opens (creating if needed) the log and returns every decision in it.
    pub fn open(path: impl AsRef<Path>) -> Result<(DecisionLog, Vec<ReviewDecision>), ReviewError> {
        let path = path.as_ref().to_path_buf();
        let decisions = if path.exists() { read_log(&path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((DecisionLog { path, file }, decisions))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and syncs it to disk before returning.
    pub fn append(&mut self, d: &ReviewDecision) -> Result<(), ReviewError> {
        let mut line = serde_json::to_string(d).map_err(|e| ReviewError::Invalid(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<ReviewDecision>, ReviewError> {
    let text = fs::read(path)?;
    parse_log(&text).map_err(|(offset, message)| ReviewError::CorruptLog { path: path.to_path_buf(), offset, message })
}

/// Parses JSONL decisions; on failure returns the byte offset where the last
/// intact record ends.
pub fn parse_log(bytes: &[u8]) -> Result<Vec<ReviewDecision>, (u64, String)> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err((offset as u64, "unterminated final record".into()));
        };
        let line = &rest[..nl];
        if !line.iter().all(u8::is_ascii_whitespace) {
            let d: ReviewDecision = serde_json::from_slice(line).map_err(|e| (offset as u64, e.to_string()))?;
            out.push(d);
        }
        offset += nl + 1;
    }
    Ok(out)
}

/// Rebuilds state from the machine corpus and a decision sequence.
pub fn replay(machine: &Corpus, records: &[PiiRecord], decisions: &[ReviewDecision]) -> Result<ReviewState, (u64, ReviewError)> {
    let mut state = ReviewState::new(machine, records);
    for d in decisions {
        state.apply(d).map_err(|e| (d.decision_id, e))?;
    }
    Ok(state)
}

/// Review state backed by a durable log.
#[derive(Debug)]
pub struct ReviewSession {
    pub state: ReviewState,
    log: DecisionLog,
    next_id: u64,
}

impl ReviewSession {
    pub fn open(machine: &Corpus, records: &[PiiRecord], log_path: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let (log, decisions) = DecisionLog::open(log_path)?;
        let state = replay(machine, records, &decisions).map_err(|(decision_id, e)| ReviewError::Replay {
            path: log.path().to_path_buf(),
            decision_id,
            message: e.to_string(),
        })?;
        let next_id = decisions.iter().map(|d| d.decision_id).max().map_or(1, |m| m + 1);
        Ok(ReviewSession { state, log, next_id })
    }

    /// Assigns the next decision id, validates, logs, then applies.
    pub fn submit(&mut self, mut d: ReviewDecision) -> Result<ReviewDecision, ReviewError> {
        d.decision_id = self.next_id;
        self.state.validate(&d)?;
        self.log.append(&d)?;
        self.state.apply(&d)?;
        self.next_id += 1;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TagClass::*;

    fn machine() -> Corpus {
        let s = |id: &str, page: &str, text: &str, spans: &[EntitySpan]| {
            AnnotatedSentence::from_spans(id, page, text, spans).unwrap()
        };
        Corpus::new(
            "m",
            vec![
                s("a-0", "a", "Her son Troy lives there.", &[EntitySpan::new(2, 3, CH)]),
                s("b-0", "b", "Jane Doe married Bob Ray in 2001.", &[EntitySpan::new(0, 2, SP), EntitySpan::new(3, 5, SP)]),
                s("b-1", "b", "Nothing here.", &[]),
            ],
        )
        .unwrap()
    }

    fn dec(id: u64, sentence: &str, action: Action, target: Option<&str>, span: Option<(usize, usize, &str)>) -> ReviewDecision {
        ReviewDecision {
            decision_id: id,
            sentence_id: sentence.into(),
            action,
            target: target.map(Into::into),
            span: span.map(|(start, end, tag)| SpanInput { start, end, tag: tag.into() }),
            annotator: "t".into(),
            timestamp: String::new(),
        }
    }

    #[test]
    fn serving_order_prefers_dense_pages() {
        let st = ReviewState::new(&machine(), &[]);
        assert_eq!(st.next_pending().unwrap().sentence.sentence_id, "b-0");
    }

    #[test]
    fn correct_to_o_rejects() {
        let mut st = ReviewState::new(&machine(), &[]);
        st.apply(&dec(1, "a-0", Action::Correct, Some("m0"), Some((2, 3, "O")))).unwrap();
        let s = st.sentence("a-0").unwrap();
        assert!(s.gold_spans().is_empty());
        assert_eq!(s.status(), SentenceStatus::Done);
    }

    #[test]
    fn overlap_and_bounds_are_rejected_atomically() {
        let mut st = ReviewState::new(&machine(), &[]);
        let before = st.clone();
        let e = st.apply(&dec(1, "b-0", Action::Add, None, Some((1, 4, "CH")))).unwrap_err();
        assert!(matches!(e, ReviewError::Overlap { .. }));
        assert!(matches!(st.apply(&dec(2, "b-0", Action::Add, None, Some((7, 9, "BD")))), Err(ReviewError::Invalid(_))));
        assert!(matches!(st.apply(&dec(3, "zz", Action::Confirm, None, None)), Err(ReviewError::UnknownSentence(_))));
        assert!(matches!(st.apply(&dec(4, "b-0", Action::Reject, Some("m9"), None)), Err(ReviewError::UnknownEntity { .. })));
        assert_eq!(st, before);
        // after a reject the tokens are free again
        st.apply(&dec(5, "b-0", Action::Reject, Some("m1"), None)).unwrap();
        st.apply(&dec(6, "b-0", Action::Add, None, Some((3, 5, "PR")))).unwrap();
        // reinstating m1 would now overlap a6
        assert!(matches!(st.apply(&dec(7, "b-0", Action::Confirm, Some("m1"), None)), Err(ReviewError::Overlap { .. })));
    }

    #[test]
    fn export_rules() {
        let mut st = ReviewState::new(&machine(), &[]);
        assert_eq!(st.export_gold(false).sentences, machine().sentences);
        assert!(st.export_gold(true).sentences.is_empty());
        st.apply(&dec(1, "b-0", Action::Reject, Some("m0"), None)).unwrap();
        st.apply(&dec(2, "b-0", Action::Confirm, None, None)).unwrap();
        let gold = st.export_gold(true);
        assert_eq!(gold.sentences.len(), 1);
        assert_eq!(gold.sentences[0].spans(), [EntitySpan::new(3, 5, SP)]);
    }

    #[test]
    fn later_decisions_supersede() {
        let mut st = ReviewState::new(&machine(), &[]);
        st.apply(&dec(1, "a-0", Action::Reject, Some("m0"), None)).unwrap();
        st.apply(&dec(2, "a-0", Action::Confirm, Some("m0"), None)).unwrap();
        assert_eq!(st.sentence("a-0").unwrap().gold_spans(), [EntitySpan::new(2, 3, CH)]);
    }

    #[test]
    fn log_parse_reports_last_good_offset() {
        let d = serde_json::to_string(&dec(1, "a-0", Action::Confirm, None, None)).unwrap();
        let text = format!("{d}\n{{\"decision_id\":2,\"sent");
        let (offset, _) = parse_log(text.as_bytes()).unwrap_err();
        assert_eq!(offset as usize, d.len() + 1);
        assert_eq!(parse_log(format!("{d}\n\n").as_bytes()).unwrap().len(), 1);
    }

    #[test]
    fn session_persists_decisions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut s = ReviewSession::open(&machine(), &[], &path).unwrap();
        let d = s.submit(dec(0, "a-0", Action::Reject, Some("m0"), None)).unwrap();
        assert_eq!(d.decision_id, 1);
        assert!(s.submit(dec(0, "a-0", Action::Add, None, Some((0, 9, "CH")))).is_err());
        let state = s.state.clone();
        drop(s);
        let s = ReviewSession::open(&machine(), &[], &path).unwrap();
        assert_eq!(s.state, state);
        assert_eq!(s.next_id, 2);
    }
}
