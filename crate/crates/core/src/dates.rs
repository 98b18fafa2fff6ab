//! Date patterns shared by birth-date extraction and DATE candidates.
//!
//! Patterns, in priority order: `D Month YYYY`, `Month D, YYYY`,
//! `YYYY-MM-DD`, and a bare `YYYY`.

use std::ops::Range;

use once_cell::sync::Lazy;
use regex::Regex;

const MONTHS: &str = "January|February|March|April|May|June|July|August|September|October|November|December|Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sep|Sept|Oct|Nov|Dec";

static RICH_PATTERNS: Lazy<[Regex; 3]> = Lazy::new(|| {
    [
        Regex::new(&format!(r"\b(?:0?[1-9]|[12][0-9]|3[01])\s+(?:{MONTHS})\.?\s+\d{{4}}\b")).unwrap(),
        Regex::new(&format!(r"\b(?:{MONTHS})\.?\s+(?:0?[1-9]|[12][0-9]|3[01]),\s*\d{{4}}\b")).unwrap(),
        Regex::new(r"\b\d{4}-(?:0[1-9]|1[0-2])-(?:0[1-9]|[12][0-9]|3[01])\b").unwrap(),
    ]
});

static BARE_YEAR: Lazy<Regex> = Lazy::new(|| Regex::new(r"\b(?:1[0-9]{3}|20[0-9]{2})\b").unwrap());

fn push_disjoint(found: &mut Vec<Range<usize>>, m: Range<usize>) {
    if found.iter().all(|r| m.end <= r.start || m.start >= r.end) {
        found.push(m);
    }
}

fn rich_matches(text: &str) -> Vec<Range<usize>> {
    let mut found = Vec::new();
    for re in RICH_PATTERNS.iter() {
        for m in re.find_iter(text) {
            push_disjoint(&mut found, m.range());
        }
    }
    found
}

/// Byte ranges of dates in `text`, sorted by position. Bare years are only
/// reported when no richer pattern matched anywhere in `text`.
pub fn find_dates(text: &str) -> Vec<Range<usize>> {
    let mut found = rich_matches(text);
    if found.is_empty() {
        found = BARE_YEAR.find_iter(text).map(|m| m.range()).collect();
    }
    found.sort_by_key(|r| r.start);
    found
}

/// Byte ranges of every date mention: rich patterns plus any bare year not
/// already inside a richer match.
pub fn find_date_mentions(text: &str) -> Vec<Range<usize>> {
    let mut found = rich_matches(text);
    for m in BARE_YEAR.find_iter(text) {
        push_disjoint(&mut found, m.range());
    }
    found.sort_by_key(|r| r.start);
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(text: &str) -> Vec<&str> {
        find_dates(text).into_iter().map(|r| &text[r]).collect()
    }

    #[test]
    fn patterns_in_priority_order() {
        assert_eq!(strs("12 April 1980 London, England"), ["12 April 1980"]);
        assert_eq!(strs("April 12, 1980"), ["April 12, 1980"]);
        assert_eq!(strs("1980-04-12"), ["1980-04-12"]);
        assert_eq!(strs("c. 1955"), ["1955"]);
        assert!(strs("(age 41)").is_empty());
        // bare year suppressed once a rich pattern matched
        assert_eq!(strs("3 May 1970, graduated 1992"), ["3 May 1970"]);
    }

    #[test]
    fn mentions_include_free_years() {
        let text = "Born 3 May 1970, she graduated in 1992.";
        let found: Vec<&str> = find_date_mentions(text).into_iter().map(|r| &text[r]).collect();
        assert_eq!(found, ["3 May 1970", "1992"]);
    }

    #[test]
    fn rejects_impossible_days() {
        assert!(strs("45 April 1980").iter().all(|s| *s == "1980"));
        assert_eq!(strs("1980-13-01"), ["1980"]);
    }
}
