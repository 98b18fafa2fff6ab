//! Four-scheme NER scoring with half credit for partial matches.
//!
//! | scheme  | full credit              | half credit                 |
//! |---------|--------------------------|-----------------------------|
//! | strict  | same tag, same bounds    | -                           |
//! | exact   | same bounds              | -                           |
//! | type    | same tag, same bounds    | same tag, overlapping       |
//! | partial | same tag, same bounds    | overlapping (tag ignored)   |
//!
//! Predictions are paired one-to-one with gold entities per sentence, greedily
//! by token overlap. Unpaired predictions are spurious (count toward
//! precision's denominator); unpaired gold entities are missed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{bio_to_spans, Corpus, EntitySpan, TagClass};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpora are not aligned: {0}")]
    Alignment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Strict,
    Exact,
    Type,
    Partial,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Strict, Scheme::Exact, Scheme::Type, Scheme::Partial];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Strict => "strict",
            Scheme::Exact => "exact",
            Scheme::Type => "type",
            Scheme::Partial => "partial",
        }
    }

    /// Whether credit ignores the entity tag.
    pub fn tag_agnostic(self) -> bool {
        matches!(self, Scheme::Exact | Scheme::Partial)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme {s:?}"))
    }
}

/// Credit in {0, 0.5, 1} for a prediction against one gold entity.
pub fn pair_credit(pred: &EntitySpan, gold: &EntitySpan, scheme: Scheme) -> f64 {
    let same_tag = pred.tag == gold.tag;
    let same_bounds = pred.same_bounds(gold);
    let overlaps = pred.overlap(gold) > 0;
    match scheme {
        Scheme::Strict => f64::from(u8::from(same_tag && same_bounds)),
        Scheme::Exact => f64::from(u8::from(same_bounds)),
        Scheme::Type if same_tag && same_bounds => 1.0,
        Scheme::Type if same_tag && overlaps => 0.5,
        Scheme::Partial if same_tag && same_bounds => 1.0,
        Scheme::Partial if overlaps => 0.5,
        Scheme::Type | Scheme::Partial => 0.0,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pairing {
    /// (pred index, gold index)
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_golds: Vec<usize>,
}

/// Greedy one-to-one pairing within a sentence: largest token overlap first,
/// then earlier gold start, then equal tags, then input order. Pairs without
/// overlap are never formed.
pub fn match_entities(preds: &[EntitySpan], golds: &[EntitySpan]) -> Pairing {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in golds.iter().enumerate() {
            let ov = p.overlap(g);
            if ov > 0 {
                candidates.push((ov, pi, gi));
            }
        }
    }
    candidates.sort_by(|&(ova, pa, ga), &(ovb, pb, gb)| {
        ovb.cmp(&ova)
            .then(golds[ga].start.cmp(&golds[gb].start))
            .then((preds[pb].tag == golds[gb].tag).cmp(&(preds[pa].tag == golds[ga].tag)))
            .then(ga.cmp(&gb))
            .then(preds[pa].start.cmp(&preds[pb].start))
            .then(pa.cmp(&pb))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut gold_used = vec![false; golds.len()];
    let mut pairs = Vec::new();
    for (_, pi, gi) in candidates {
        if !pred_used[pi] && !gold_used[gi] {
            pred_used[pi] = true;
            gold_used[gi] = true;
            pairs.push((pi, gi));
        }
    }
    pairs.sort();
    Pairing {
        pairs,
        unmatched_preds: (0..preds.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_golds: (0..golds.len()).filter(|&i| !gold_used[i]).collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub n_pred: usize,
    pub n_gold: usize,
    pub credit: f64,
}

impl Counts {
    fn add(&mut self, other: &Counts) {
        self.n_pred += other.n_pred;
        self.n_gold += other.n_gold;
        self.credit += other.credit;
    }
}

/// Raw counts per scheme and class.
///
/// Under the tag-agnostic schemes (exact, partial) a paired prediction is
/// counted under its gold entity's class, so per-class credit never exceeds
/// either count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub table: BTreeMap<Scheme, BTreeMap<TagClass, Counts>>,
}

impl Default for EvalCounts {
    fn default() -> Self {
        let per_class: BTreeMap<TagClass, Counts> = TagClass::ALL.iter().map(|t| (*t, Counts::default())).collect();
        EvalCounts { table: Scheme::ALL.iter().map(|s| (*s, per_class.clone())).collect() }
    }
}

impl EvalCounts {
    pub fn add_sentence(&mut self, preds: &[EntitySpan], golds: &[EntitySpan]) {
        let pairing = match_entities(preds, golds);
        for scheme in Scheme::ALL {
            let table = self.table.get_mut(&scheme).unwrap();
            for g in golds {
                table.get_mut(&g.tag).unwrap().n_gold += 1;
            }
            for &(pi, gi) in &pairing.pairs {
                let (p, g) = (&preds[pi], &golds[gi]);
                let class = if scheme.tag_agnostic() { g.tag } else { p.tag };
                table.get_mut(&class).unwrap().n_pred += 1;
                table.get_mut(&g.tag).unwrap().credit += pair_credit(p, g, scheme);
            }
            for &pi in &pairing.unmatched_preds {
                table.get_mut(&preds[pi].tag).unwrap().n_pred += 1;
            }
        }
    }

    pub fn micro(&self, scheme: Scheme) -> Counts {
        let mut total = Counts::default();
        for c in self.table[&scheme].values() {
            total.add(c);
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
    pub n_pred: usize,
    pub n_gold: usize,
}

impl Metrics {
    pub fn from_counts(c: &Counts) -> Self {
        let (precision, recall) = match (c.n_pred, c.n_gold) {
            (0, 0) => (1.0, 1.0),
            (0, _) | (_, 0) => (0.0, 0.0),
            (np, ng) => (c.credit / np as f64, c.credit / ng as f64),
        };
        Metrics { precision, recall, f1: f1(precision, recall), n_pred: c.n_pred, n_gold: c.n_gold }
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub classes: BTreeMap<TagClass, Metrics>,
    pub micro: Metrics,
    /// Unweighted mean over classes that occur in predictions or gold.
    pub macro_avg: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schemes: BTreeMap<Scheme, SchemeReport>,
    pub counts: EvalCounts,
    pub sentences: usize,
}

impl EvalReport {
    pub fn from_counts(counts: EvalCounts, sentences: usize) -> Self {
        let schemes = Scheme::ALL.iter().map(|&s| (s, scheme_report(&counts, s))).collect();
        EvalReport { schemes, counts, sentences }
    }

    pub fn micro(&self, scheme: Scheme) -> Metrics {
        self.schemes[&scheme].micro
    }

    /// `{scheme: {class | "micro" | "macro": {p, r, f1, n_pred, n_gold}}}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (scheme, rep) in &self.schemes {
            let mut per = serde_json::Map::new();
            for (tag, m) in &rep.classes {
                per.insert(tag.to_string(), serde_json::to_value(m).unwrap());
            }
            per.insert("micro".into(), serde_json::to_value(rep.micro).unwrap());
            per.insert("macro".into(), serde_json::to_value(rep.macro_avg).unwrap());
            out.insert(scheme.to_string(), serde_json::Value::Object(per));
        }
        serde_json::Value::Object(out)
    }

    /// Micro-averaged table with one column per scheme, followed by per-class F1.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for s in Scheme::ALL {
            let _ = write!(out, "{:>9}", s.as_str());
        }
        out.push('\n');
        type Getter = fn(&Metrics) -> f64;
        let rows: [(&str, Getter); 3] = [("precision", |m| m.precision), ("recall", |m| m.recall), ("F1-score", |m| m.f1)];
        for (name, get) in rows {
            let _ = write!(out, "{name:<10}");
            for s in Scheme::ALL {
                let _ = write!(out, "{:>9.4}", get(&self.schemes[&s].micro));
            }
            out.push('\n');
        }
        out.push('\n');
        let _ = writeln!(out, "{:<10}{:>9}{:>9}{:>9}{:>9}{:>8}{:>8}", "class F1", "strict", "exact", "type", "partial", "pred", "gold");
        for t in TagClass::ALL {
            let _ = write!(out, "{:<10}", t.as_str());
            for s in Scheme::ALL {
                let _ = write!(out, "{:>9.4}", self.schemes[&s].classes[&t].f1);
            }
            let strict = &self.schemes[&Scheme::Strict].classes[&t];
            let _ = writeln!(out, "{:>8}{:>8}", strict.n_pred, strict.n_gold);
        }
        let _ = write!(out, "{:<10}", "macro");
        for s in Scheme::ALL {
            let _ = write!(out, "{:>9.4}", self.schemes[&s].macro_avg.f1);
        }
        out.push('\n');
        out
    }
}

fn scheme_report(counts: &EvalCounts, scheme: Scheme) -> SchemeReport {
    let classes: BTreeMap<TagClass, Metrics> =
        counts.table[&scheme].iter().map(|(t, c)| (*t, Metrics::from_counts(c))).collect();
    let micro_counts = counts.micro(scheme);
    let present: Vec<&Metrics> = classes.values().filter(|m| m.n_pred + m.n_gold > 0).collect();
    let macro_avg = if present.is_empty() {
        Metrics::from_counts(&Counts::default())
    } else {
        let n = present.len() as f64;
        Metrics {
            precision: present.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: present.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: present.iter().map(|m| m.f1).sum::<f64>() / n,
            n_pred: micro_counts.n_pred,
            n_gold: micro_counts.n_gold,
        }
    };
    SchemeReport { classes, micro: Metrics::from_counts(&micro_counts), macro_avg }
}

/// Scores grouped spans; `preds[i]` and `golds[i]` belong to the same sentence.
pub fn score(preds: &[Vec<EntitySpan>], golds: &[Vec<EntitySpan>], scheme: Scheme) -> SchemeReport {
    assert_eq!(preds.len(), golds.len(), "one prediction group per gold sentence");
    let mut counts = EvalCounts::default();
    for (p, g) in preds.iter().zip(golds) {
        counts.add_sentence(p, g);
    }
    scheme_report(&counts, scheme)
}

/// Scores a predicted corpus against gold, pairing sentences by id.
pub fn full_report(pred: &Corpus, gold: &Corpus) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &crate::corpus::AnnotatedSentence> =
        pred.sentences.iter().map(|s| (s.sentence_id.as_str(), s)).collect();
    if by_id.len() != gold.sentences.len() || pred.sentences.len() != gold.sentences.len() {
        return Err(EvalError::Alignment(format!(
            "{} predicted sentences vs {} gold sentences",
            pred.sentences.len(),
            gold.sentences.len()
        )));
    }
    let mut counts = EvalCounts::default();
    for g in &gold.sentences {
        let p = by_id
            .get(g.sentence_id.as_str())
            .ok_or_else(|| EvalError::Alignment(format!("sentence {:?} missing from predictions", g.sentence_id)))?;
        if p.labels.len() != g.labels.len() {
            return Err(EvalError::Alignment(format!(
                "sentence {:?} has {} predicted labels for {} gold tokens",
                g.sentence_id,
                p.labels.len(),
                g.labels.len()
            )));
        }
        counts.add_sentence(&bio_to_spans(&p.labels).spans, &bio_to_spans(&g.labels).spans);
    }
    Ok(EvalReport::from_counts(counts, gold.sentences.len()))
}
