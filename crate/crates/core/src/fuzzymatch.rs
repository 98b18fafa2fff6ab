//! Character n-gram cosine matching.
//!
//! Strings are normalized (lowercase, letters/digits/spaces only, single
//! spaces), padded with a boundary marker, and compared as trigram count
//! vectors. When either side normalizes to fewer than three characters both
//! sides use bigrams instead.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.6;

/// Scores closer than this are treated as tied in [`best_match`].
pub const TIE_EPSILON: f64 = 1e-6;

const BOUNDARY: char = '#';

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub candidate_index: usize,
    pub score: f64,
}

pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if c.is_whitespace() && !out.is_empty() && !out.ends_with(' ') {
            out.push(' ');
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Pre-computed gram counts for one string.
#[derive(Debug, Clone)]
pub struct GramProfile {
    normalized: String,
    trigrams: HashMap<String, u64>,
    bigrams: HashMap<String, u64>,
}

impl GramProfile {
    pub fn new(s: &str) -> Self {
        let normalized = normalize(s);
        let padded: Vec<char> =
            std::iter::once(BOUNDARY).chain(normalized.chars()).chain(std::iter::once(BOUNDARY)).collect();
        GramProfile { trigrams: grams(&padded, 3), bigrams: grams(&padded, 2), normalized }
    }

    pub fn normalized(&self) -> &str {
        &self.normalized
    }

    fn short(&self) -> bool {
        self.normalized.chars().count() < 3
    }

    pub fn similarity(&self, other: &GramProfile) -> f64 {
        match (self.normalized.is_empty(), other.normalized.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let (a, b) = if self.short() || other.short() {
            (&self.bigrams, &other.bigrams)
        } else {
            (&self.trigrams, &other.trigrams)
        };
        cosine(a, b)
    }
}

fn grams(chars: &[char], n: usize) -> HashMap<String, u64> {
    let mut out = HashMap::new();
    for w in chars.windows(n) {
        *out.entry(w.iter().collect()).or_insert(0) += 1;
    }
    out
}

// Integer dot products keep the score exactly symmetric and make
// self-similarity exactly 1.0.
fn cosine(a: &HashMap<String, u64>, b: &HashMap<String, u64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: u64 = small.iter().filter_map(|(g, x)| large.get(g).map(|y| x * y)).sum();
    if dot == 0 {
        return 0.0;
    }
    let na: u64 = a.values().map(|x| x * x).sum();
    let nb: u64 = b.values().map(|x| x * x).sum();
    let score = dot as f64 / ((na as f64) * (nb as f64)).sqrt();
    score.clamp(0.0, 1.0)
}

pub fn similarity(a: &str, b: &str) -> f64 {
    GramProfile::new(a).similarity(&GramProfile::new(b))
}

/// Normalized Levenshtein similarity on the normalized strings.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(&normalize(a), &normalize(b))
}

/// Highest-scoring candidate at or above `threshold`.
///
/// The winner is chosen independently of the threshold: candidates within
/// [`TIE_EPSILON`] of the best cosine score are re-ranked by edit similarity
/// and then by index, and the threshold only gates whether it is returned.
pub fn best_match<S: AsRef<str>>(target: &str, candidates: &[S], threshold: f64) -> Option<MatchResult> {
    let profiles: Vec<GramProfile> = candidates.iter().map(|c| GramProfile::new(c.as_ref())).collect();
    best_match_profiles(&GramProfile::new(target), &profiles, threshold)
}

pub fn best_match_profiles(target: &GramProfile, candidates: &[GramProfile], threshold: f64) -> Option<MatchResult> {
    let scores: Vec<f64> = candidates.iter().map(|c| target.similarity(c)).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let mut winner: Option<(usize, f64)> = None;
    for (i, &score) in scores.iter().enumerate() {
        if score < top - TIE_EPSILON {
            continue;
        }
        let edit = strsim::normalized_levenshtein(target.normalized(), candidates[i].normalized());
        // strictly greater keeps the earliest index on equal edit similarity
        if winner.is_none_or(|(_, best)| edit > best) {
            winner = Some((i, edit));
        }
    }
    let (index, _) = winner?;
    let score = scores[index];
    (score >= threshold).then_some(MatchResult { candidate_index: index, score })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_identity() {
        assert_eq!(similarity("Harvard University", "harvard  university"), 1.0);
        assert_eq!(normalize("  St. John's,  College "), "st johns college");
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(similarity("", ""), 1.0);
        assert_eq!(similarity("...", "?"), 1.0);
        assert_eq!(similarity("abc", ""), 0.0);
        assert_eq!(similarity("", "abc"), 0.0);
    }

    #[test]
    fn short_strings_use_bigrams() {
        // "jo" vs "joe": bigram vectors {#j, jo, o#} and {#j, jo, oe, e#}
        let expected = 2.0 / (3.0f64 * 4.0).sqrt();
        assert!((similarity("Jo", "Joe") - expected).abs() < 1e-12);
    }

    #[test]
    fn best_match_examples() {
        let cands = ["Yale", "Harvard University", "MIT"];
        let m = best_match("Harvard University", &cands, 0.6).unwrap();
        assert_eq!(m.candidate_index, 1);
        assert_eq!(m.score, 1.0);
        assert!(best_match::<&str>("x", &[], 0.0).is_none());
        assert!(best_match("Zanzibar", &cands, 0.6).is_none());
    }

    #[test]
    fn ties_prefer_edit_similarity_then_index() {
        // both candidates score exactly 0.6 against the target
        let cands = ["aabab", "abaaa"];
        assert_eq!(similarity("abaab", cands[0]), similarity("abaab", cands[1]));
        let m = best_match("abaab", &cands, 0.5).unwrap();
        assert_eq!(m.candidate_index, 1);
        let cands = ["Harvard University", "harvard university"];
        assert_eq!(best_match("Harvard University", &cands, 0.5).unwrap().candidate_index, 0);
    }
}
