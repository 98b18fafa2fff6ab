//! Scores frozen from an independent Python implementation of the padded
//! trigram cosine (Counter-based, bigram fallback under three characters).

use pii_forge::fuzzymatch::{best_match, similarity, DEFAULT_THRESHOLD};

const FROZEN: &[(&str, &str, f64)] = &[
    ("Harvard Univ", "Harvard University", 0.7484551991837488),
    ("Univ. of Michigan", "University of Michigan", 0.7462025072446364),
    ("Yale", "Yale University", 0.3872983346207417),
    ("May 3, 1950", "3 May 1950", 0.6),
    ("Jo", "Joe", 0.5773502691896258),
    ("Mary Smith", "mary  SMITH!", 1.0),
    ("Stanford", "Oxford", 0.43301270189221935),
    ("", "", 1.0),
    ("a", "", 0.0),
];

#[test]
fn matches_python_oracle() {
    for &(a, b, want) in FROZEN {
        let got = similarity(a, b);
        assert!((got - want).abs() < 1e-12, "sim({a:?}, {b:?}) = {got}, oracle {want}");
    }
}

#[test]
fn abbreviated_institutions_clear_default_threshold() {
    let cands = ["Harvard Law School", "Harvard University", "Harvard"];
    let m = best_match("Harvard Univ", &cands, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(m.candidate_index, 1);
    assert!(best_match("Yale", &["Yale University"], DEFAULT_THRESHOLD).is_none());
}
