//! Infobox parsing and normalization into a PII record.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ego_tree::NodeRef;
use once_cell::sync::Lazy;
use regex::Regex;
use scraper::{ElementRef, Html, Node, Selector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TagClass;
use crate::dates;

#[derive(Debug, Error)]
pub enum InfoboxError {
    #[error("page {0:?} has no infobox table")]
    NoInfobox(String),
    #[error("{path}: {message}")]
    Record { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoboxEntry {
    pub key: String,
    pub values: Vec<String>,
}

/// Key/value rows of an infobox, keys verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInfobox {
    pub page_id: String,
    pub entries: Vec<InfoboxEntry>,
}

/// Located-phrase dictionary for one page.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PiiRecord {
    pub page_id: String,
    pub phrases: BTreeMap<TagClass, Vec<String>>,
}

impl PiiRecord {
    pub fn new(page_id: impl Into<String>) -> Self {
        PiiRecord { page_id: page_id.into(), phrases: BTreeMap::new() }
    }

    pub fn phrases(&self, tag: TagClass) -> &[String] {
        self.phrases.get(&tag).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Adds a phrase unless it is empty or already present (case-insensitive).
    pub fn push(&mut self, tag: TagClass, phrase: &str) {
        let phrase = phrase.trim();
        if phrase.is_empty() {
            return;
        }
        let list = self.phrases.entry(tag).or_default();
        let lower = phrase.to_lowercase();
        if !list.iter().any(|p| p.to_lowercase() == lower) {
            list.push(phrase.to_string());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.values().all(Vec::is_empty)
    }

    pub fn phrase_count(&self) -> usize {
        self.phrases.values().map(Vec::len).sum()
    }

    /// Renders the record back as an infobox with canonical keys.
    pub fn to_raw(&self) -> RawInfobox {
        let key = |t: TagClass| match t {
            TagClass::BD => "Born",
            TagClass::PR => "Parents",
            TagClass::SP => "Spouse(s)",
            TagClass::CH => "Children",
            TagClass::ED => "Education",
        };
        RawInfobox {
            page_id: self.page_id.clone(),
            entries: self
                .phrases
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(t, v)| InfoboxEntry { key: key(*t).into(), values: v.clone() })
                .collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct RecordJson {
    page_id: String,
    #[serde(default)]
    BD: Vec<String>,
    #[serde(default)]
    PR: Vec<String>,
    #[serde(default)]
    SP: Vec<String>,
    #[serde(default)]
    CH: Vec<String>,
    #[serde(default)]
    ED: Vec<String>,
}

impl Serialize for PiiRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let get = |t| self.phrases(t).to_vec();
        RecordJson {
            page_id: self.page_id.clone(),
            BD: get(TagClass::BD),
            PR: get(TagClass::PR),
            SP: get(TagClass::SP),
            CH: get(TagClass::CH),
            ED: get(TagClass::ED),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PiiRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = RecordJson::deserialize(d)?;
        let mut rec = PiiRecord::new(j.page_id);
        for (tag, list) in [(TagClass::BD, j.BD), (TagClass::PR, j.PR), (TagClass::SP, j.SP), (TagClass::CH, j.CH), (TagClass::ED, j.ED)] {
            for p in list {
                rec.push(tag, &p);
            }
        }
        Ok(rec)
    }
}

// ---------------------------------------------------------------------------
// HTML parsing
// ---------------------------------------------------------------------------

static TABLE: Lazy<Selector> = Lazy::new(|| Selector::parse("table").unwrap());
static PARAGRAPH: Lazy<Selector> = Lazy::new(|| Selector::parse("p").unwrap());
static CITATION: Lazy<Regex> = Lazy::new(|| Regex::new(r"\[\s*(?:\d+|[a-z]|note \d+|citation needed)\s*\]").unwrap());
static SPACES: Lazy<Regex> = Lazy::new(|| Regex::new(r"\s+").unwrap());

fn first_infobox(doc: &Html) -> Option<ElementRef<'_>> {
    doc.select(&TABLE).find(|t| t.value().attr("class").is_some_and(|c| c.contains("infobox")))
}

fn is_hidden(el: &scraper::node::Element) -> bool {
    if matches!(el.name(), "style" | "script" | "noscript" | "template") {
        return true;
    }
    if let Some(style) = el.attr("style") {
        let compact: String = style.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
        if compact.contains("display:none") || compact.contains("visibility:hidden") {
            return true;
        }
    }
    if el.attr("hidden").is_some() {
        return true;
    }
    el.classes().any(|c| matches!(c, "reference" | "noprint" | "sortkey" | "mw-ref" | "hidden" | "mw-editsection"))
}

fn clean_text(s: &str) -> String {
    let s = s.replace('\u{a0}', " ");
    let s = CITATION.replace_all(&s, "");
    SPACES.replace_all(s.trim(), " ").into_owned()
}

/// Collects the visible text of a cell, splitting at line breaks, list items
/// and block elements.
fn cell_values(cell: ElementRef<'_>) -> Vec<String> {
    fn walk(node: NodeRef<'_, Node>, segments: &mut Vec<String>) {
        match node.value() {
            Node::Text(t) => segments.last_mut().unwrap().push_str(t),
            Node::Element(el) => {
                if is_hidden(el) {
                    return;
                }
                let block = matches!(el.name(), "br" | "li" | "p" | "div" | "tr" | "ul" | "ol" | "dd" | "dt");
                if block {
                    segments.push(String::new());
                }
                for child in node.children() {
                    walk(child, segments);
                }
                if block {
                    segments.push(String::new());
                }
            }
            _ => {}
        }
    }
    let mut segments = vec![String::new()];
    for child in cell.children() {
        walk(child, &mut segments);
    }
    segments.iter().map(|s| clean_text(s)).filter(|s| !s.is_empty()).collect()
}

fn belongs_to(row: ElementRef<'_>, table: ElementRef<'_>) -> bool {
    row.ancestors()
        .filter_map(ElementRef::wrap)
        .find(|a| a.value().name() == "table")
        .is_some_and(|t| t.id() == table.id())
}

/// Reads the first infobox table of a page.
pub fn parse_infobox(html: &str, page_id: &str) -> Result<RawInfobox, InfoboxError> {
    let doc = Html::parse_document(html);
    let table = first_infobox(&doc).ok_or_else(|| InfoboxError::NoInfobox(page_id.to_string()))?;
    let mut entries = Vec::new();
    for row in table.descendants().filter_map(ElementRef::wrap) {
        if row.value().name() != "tr" || !belongs_to(row, table) {
            continue;
        }
        let cells: Vec<ElementRef<'_>> = row.children().filter_map(ElementRef::wrap).collect();
        let header = cells.iter().find(|c| c.value().name() == "th");
        let value = cells.iter().find(|c| c.value().name() == "td");
        let (Some(header), Some(value)) = (header, value) else { continue };
        let key = cell_values(*header).join(" ");
        if key.is_empty() {
            continue;
        }
        entries.push(InfoboxEntry { key, values: cell_values(*value) });
    }
    Ok(RawInfobox { page_id: page_id.to_string(), entries })
}

/// Body text of a page: the text of every `<p>` outside tables, one paragraph
/// per blank-line-separated block.
pub fn extract_body_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut paragraphs = Vec::new();
    for p in doc.select(&PARAGRAPH) {
        if p.ancestors().filter_map(ElementRef::wrap).any(|a| a.value().name() == "table") {
            continue;
        }
        let mut text = String::new();
        fn collect(node: NodeRef<'_, Node>, out: &mut String) {
            match node.value() {
                Node::Text(t) => out.push_str(t),
                Node::Element(el) if matches!(el.name(), "style" | "script") => {}
                Node::Element(_) => node.children().for_each(|c| collect(c, out)),
                _ => {}
            }
        }
        p.children().for_each(|c| collect(c, &mut text));
        let text = SPACES.replace_all(text.replace('\u{a0}', " ").trim(), " ").into_owned();
        if !text.is_empty() {
            paragraphs.push(text);
        }
    }
    paragraphs.join("\n\n")
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

const KEY_TABLE: &[(TagClass, &[&str])] = &[
    (TagClass::BD, &["Born", "Born:"]),
    (TagClass::PR, &["Parent", "Parent(s)", "Parents", "Father", "Father's name", "Mother", "Mother's name"]),
    (TagClass::SP, &["Spouse", "Spouse(s)", "Spouses"]),
    (TagClass::CH, &["Children"]),
    (
        TagClass::ED,
        &[
            "Education",
            "High school",
            "High school:",
            "Law School",
            "School",
            "Schools",
            "College",
            "College(s)",
            "Colleges",
            "Alma mater",
            "Almat mater",
        ],
    ),
];

fn canonical_key(key: &str) -> String {
    let key = key.replace(['\u{2019}', '\u{2018}'], "'");
    SPACES.replace_all(key.trim(), " ").to_lowercase()
}

/// Tag for an infobox key, if it is one of the recognized keys.
pub fn tag_for_key(key: &str) -> Option<TagClass> {
    let key = canonical_key(key);
    KEY_TABLE
        .iter()
        .find(|(_, keys)| keys.iter().any(|k| k.to_lowercase() == key))
        .map(|(t, _)| *t)
}

/// Every recognized infobox key.
pub fn known_keys() -> impl Iterator<Item = (TagClass, &'static str)> {
    KEY_TABLE.iter().flat_map(|(t, keys)| keys.iter().map(move |k| (*t, *k)))
}

static PARENTHETICAL: Lazy<Regex> = Lazy::new(|| Regex::new(r"\([^()]*\)").unwrap());

fn clean_name(value: &str) -> Option<String> {
    let mut v = value.to_string();
    // nested parentheses peel from the inside out
    while PARENTHETICAL.is_match(&v) {
        v = PARENTHETICAL.replace_all(&v, " ").into_owned();
    }
    let v = SPACES.replace_all(v.trim(), " ");
    let v = v.trim_matches(|c: char| c == ',' || c == ';' || c == ':' || c.is_whitespace());
    v.chars().any(char::is_alphabetic).then(|| v.to_string())
}

pub fn normalize_keys(raw: &RawInfobox) -> PiiRecord {
    let mut rec = PiiRecord::new(raw.page_id.clone());
    for entry in &raw.entries {
        let Some(tag) = tag_for_key(&entry.key) else { continue };
        match tag {
            TagClass::BD => extract_birth_date(&entry.values).iter().for_each(|d| rec.push(tag, d)),
            TagClass::PR | TagClass::SP | TagClass::CH => {
                entry.values.iter().filter_map(|v| clean_name(v)).for_each(|v| rec.push(tag, &v))
            }
            TagClass::ED => entry
                .values
                .iter()
                .map(|v| SPACES.replace_all(v.trim(), " ").into_owned())
                .filter(|v| v.chars().any(char::is_alphabetic))
                .for_each(|v| rec.push(tag, &v)),
        }
    }
    rec
}

/// Date substrings of `Born` values; any remaining text (birthplace, age,
/// birth name) is dropped.
pub fn extract_birth_date<S: AsRef<str>>(values: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        let v = v.as_ref();
        for r in dates::find_dates(v) {
            let d = v[r].to_string();
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Page files
// ---------------------------------------------------------------------------

/// A saved page: id from the file stem, body text, and raw HTML when the
/// file was HTML.
#[derive(Debug, Clone)]
pub struct PageFile {
    pub page_id: String,
    pub text: String,
    pub html: Option<String>,
}

pub fn read_page(path: &Path) -> Result<PageFile, InfoboxError> {
    let raw = fs::read_to_string(path)?;
    let page_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let is_html = path.extension().is_some_and(|e| e == "html" || e == "htm");
    Ok(if is_html {
        PageFile { page_id, text: extract_body_text(&raw), html: Some(raw) }
    } else {
        PageFile { page_id, text: raw, html: None }
    })
}

/// Page files (`.html`, `.htm`, `.txt`) in a directory, sorted by name, or the
/// path itself when it is a file.
pub fn page_paths(path: &Path) -> Result<Vec<PathBuf>, InfoboxError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "html" || e == "htm" || e == "txt"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<PiiRecord>, InfoboxError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            PiiRecord::from_json_line(l)
                .map_err(|e| InfoboxError::Record { path: format!("{}:{}", path.display(), i + 1), message: e.to_string() })
        })
        .collect()
}
