//! Automatic PII annotation of biographical text from infobox records,
//! partial-credit NER scoring, a small hashed-feature tagger, and a
//! federated training simulator around it.

pub mod annotator;
pub mod corpus;
pub mod dates;
pub mod fuzzymatch;
pub mod infobox;
pub mod nereval;
pub mod tagger;
pub mod fedsim;
pub mod review;
pub mod synth;
