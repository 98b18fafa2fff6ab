//! Deterministic synthetic biography pages with known entity mentions.
//!
//! Each page is an HTML document with an infobox and a few paragraphs of
//! prose. The prose mentions the infobox entities, sometimes verbatim and
//! sometimes as a variant (first name only, abbreviation, reordered date,
//! title prefix), and carries citation markers. The generator records every
//! true mention, which gives a gold corpus aligned with what the annotator
//! produces from the same HTML.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{spans_to_bio, tokenize, write_conll, AnnotatedSentence, Corpus, CorpusError, EntitySpan, TagClass};

const MALE: &[&str] = &[
    "James", "Robert", "Michael", "William", "David", "Richard", "Joseph", "Thomas", "Charles", "Daniel", "Matthew",
    "Anthony", "Mark", "Paul", "Steven", "Andrew", "Kenneth", "George", "Edward", "Henry", "Walter", "Arthur",
];
const FEMALE: &[&str] = &[
    "Mary", "Patricia", "Jennifer", "Linda", "Elizabeth", "Barbara", "Susan", "Jessica", "Sarah", "Karen", "Nancy",
    "Margaret", "Dorothy", "Helen", "Alice", "Ruth", "Emma", "Grace", "Clara", "Rose", "Evelyn", "Julia",
];
const CHILD: &[&str] = &[
    "Troy", "Troy", "Lucas", "Oliver", "Henry", "Mia", "Sophie", "Ella", "Jack", "Leo", "Ava", "Noah", "Ivy",
    "Owen", "Ruby", "Max", "Lily", "Sam", "Zoe", "Eli",
];
const LAST: &[&str] = &[
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Miller", "Davis", "Wilson", "Anderson", "Taylor", "Moore",
    "Jackson", "Martin", "Thompson", "Harris", "Clark", "Lewis", "Walker", "Hall", "Young", "King", "Wright",
    "Hill", "Green", "Baker", "Nelson", "Carter", "Mitchell", "Roberts", "Turner", "Phillips", "Campbell",
    "Parker", "Evans", "Edwards", "Collins", "Stewart", "Morris", "Murphy", "Cook", "Rogers", "Morgan", "Cooper",
];
const CITIES: &[(&str, &str)] = &[
    ("Troy", "New York"),
    ("Troy", "Ohio"),
    ("Boston", "Massachusetts"),
    ("Chicago", "Illinois"),
    ("Denver", "Colorado"),
    ("Portland", "Oregon"),
    ("Austin", "Texas"),
    ("Dayton", "Ohio"),
    ("Savannah", "Georgia"),
    ("Madison", "Wisconsin"),
];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];
const OCCUPATIONS: &[&str] = &[
    "singer", "novelist", "politician", "physicist", "architect", "journalist", "painter", "lawyer", "actor",
    "economist", "chemist", "engineer",
];
const FIELDS: &[&str] = &["law", "chemistry", "history", "music", "economics", "medicine", "physics", "architecture"];
const TITLES: &[&str] = &["Senator", "Judge", "Professor", "Captain", "Reverend"];
/// Canonical name plus textual variants.
const INSTITUTIONS: &[(&str, &[&str])] = &[
    ("Harvard University", &["Harvard", "Harvard Univ."]),
    ("Yale University", &["Yale"]),
    ("University of Michigan", &["Univ. of Michigan", "the Michigan university"]),
    ("Stanford University", &["Stanford"]),
    ("Columbia University", &["Columbia"]),
    ("Princeton University", &["Princeton"]),
    ("Boston College", &["the college in Boston"]),
    ("Juilliard School", &["Juilliard"]),
    ("Massachusetts Institute of Technology", &["MIT", "the Massachusetts Institute"]),
    ("University of Chicago", &["Chicago University", "Univ. of Chicago"]),
    ("Oberlin College", &["Oberlin"]),
    ("Royal Academy of Music", &["the Royal Academy"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPage {
    pub page_id: String,
    pub html: String,
    /// Every sentence of the body in order, labeled with true mentions.
    pub gold: Vec<AnnotatedSentence>,
}

#[derive(Default)]
struct Sentence {
    text: String,
    html: String,
    mentions: Vec<(usize, usize, TagClass)>,
}

impl Sentence {
    fn say(&mut self, s: &str) -> &mut Self {
        self.text.push_str(s);
        self.html.push_str(&escape(s));
        self
    }

    fn mention(&mut self, s: &str, tag: TagClass) -> &mut Self {
        let start = self.text.chars().count();
        self.say(s);
        self.mentions.push((start, start + s.chars().count(), tag));
        self
    }

    fn cite(&mut self, marker: &str) -> &mut Self {
        let _ = write!(self.html, "<sup class=\"reference\"><a href=\"#cite\">[{marker}]</a></sup>");
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Person {
    first: &'static str,
    last: &'static str,
    male: bool,
}

impl Person {
    fn full(&self) -> String {
        format!("{} {}", self.first, self.last)
    }
}

fn person(rng: &mut ChaCha8Rng, male: bool, last: Option<&'static str>) -> Person {
    let first = *(if male { MALE } else { FEMALE }).choose(rng).unwrap();
    Person { first, last: last.unwrap_or_else(|| LAST.choose(rng).unwrap()), male }
}

fn gold_sentence(page_id: &str, index: usize, s: &Sentence) -> AnnotatedSentence {
    let tokens = tokenize(&s.text);
    let spans: Vec<EntitySpan> = s
        .mentions
        .iter()
        .map(|&(cs, ce, tag)| {
            let start = tokens.iter().position(|t| t.start == cs).expect("mention starts on a token");
            let end = tokens.iter().position(|t| t.end == ce).expect("mention ends on a token") + 1;
            EntitySpan::new(start, end, tag)
        })
        .collect();
    let labels = spans_to_bio(&tokens, &spans).expect("mentions are disjoint");
    AnnotatedSentence {
        sentence_id: format!("{page_id}-{index}"),
        page_id: page_id.to_string(),
        text: s.text.clone(),
        tokens,
        labels,
    }
}

fn list_cell(items: &[String]) -> String {
    let mut out = String::from("<div class=\"plainlist\"><ul>");
    for i in items {
        let _ = write!(out, "<li>{}</li>", escape(i));
    }
    out.push_str("</ul></div>");
    out
}

fn page(rng: &mut ChaCha8Rng, index: usize) -> SynthPage {
    let male = rng.random_bool(0.5);
    let subject = person(rng, male, None);
    let page_id = format!("{:03}_{}_{}", index, subject.first, subject.last);
    let (he, his) = if subject.male { ("He", "his") } else { ("She", "her") };
    let day = rng.random_range(1..=28);
    let month = *MONTHS.choose(rng).unwrap();
    let year: u32 = rng.random_range(1900..=1990);
    let birth_date = format!("{day} {month} {year}");
    let (city, region) = *CITIES.choose(rng).unwrap();
    let occupation = *OCCUPATIONS.choose(rng).unwrap();

    let father = person(rng, true, Some(subject.last));
    let mother = person(rng, false, None);
    let has_parents = rng.random_bool(0.8);
    let n_spouses = [0, 1, 1, 1, 2].choose(rng).copied().unwrap();
    let spouses: Vec<Person> = (0..n_spouses).map(|_| person(rng, !subject.male, None)).collect();
    let n_children = if n_spouses == 0 { 0 } else { rng.random_range(0..=3) };
    let mut children: Vec<&str> = Vec::new();
    while children.len() < n_children {
        let c = *CHILD.choose(rng).unwrap();
        if !children.contains(&c) {
            children.push(c);
        }
    }
    let children_named_in_box = rng.random_bool(0.6);
    let n_edu = rng.random_range(1..=2);
    let mut edu: Vec<usize> = Vec::new();
    while edu.len() < n_edu {
        let e = rng.random_range(0..INSTITUTIONS.len());
        if !edu.contains(&e) {
            edu.push(e);
        }
    }

    let mut cite_n = 0;
    let mut next_cite = || {
        cite_n += 1;
        cite_n.to_string()
    };

    // --- prose -------------------------------------------------------------
    let mut paragraphs: Vec<Vec<Sentence>> = vec![Vec::new(), Vec::new(), Vec::new()];

    let mut s = Sentence::default();
    let date_text = if rng.random_bool(0.7) { birth_date.clone() } else { format!("{month} {day}, {year}") };
    s.say(&subject.full()).say(" (born ").mention(&date_text, TagClass::BD).say(") is ");
    s.say(if occupation.starts_with(['a', 'e', 'i', 'o', 'u']) { "an " } else { "a " });
    s.say(&format!("American {occupation}."));
    if rng.random_bool(0.6) {
        s.cite(&next_cite());
    }
    paragraphs[0].push(s);

    if has_parents {
        let mut s = Sentence::default();
        s.say(&format!("{he} was born in {city}, {region}, to "));
        if rng.random_bool(0.2) {
            s.say(TITLES.choose(rng).unwrap()).say(" ");
        }
        s.mention(&father.full(), TagClass::PR).say(" and ").mention(&mother.full(), TagClass::PR).say(".");
        if rng.random_bool(0.4) {
            s.cite(&next_cite());
        }
        paragraphs[0].push(s);
    } else {
        let mut s = Sentence::default();
        s.say(&format!("{he} grew up in {city}, {region}."));
        paragraphs[0].push(s);
    }

    let field = *FIELDS.choose(rng).unwrap();
    let grad_year = year + rng.random_range(20..=26);
    let mut s = Sentence::default();
    s.say(&format!("{he} studied {field} at "));
    for (k, &e) in edu.iter().enumerate() {
        if k > 0 {
            s.say(" and later at ");
        }
        let (canonical, variants) = INSTITUTIONS[e];
        let text = if rng.random_bool(0.65) { canonical } else { variants.choose(rng).unwrap() };
        let (lead, name) = match text.strip_prefix("the ") {
            Some(rest) => ("the ", rest),
            None => ("", text),
        };
        s.say(lead).mention(name, TagClass::ED);
        if rng.random_bool(0.25) {
            s.cite(&next_cite());
        }
    }
    s.say(&format!(", graduating in {grad_year}."));
    paragraphs[1].push(s);

    let mut married_years = Vec::new();
    for (k, sp) in spouses.iter().enumerate() {
        let married = grad_year + rng.random_range(1..=8) + 10 * k as u32;
        married_years.push(married);
        let mut s = Sentence::default();
        if k == 0 {
            s.say(&format!("In {married}, {} married ", he.to_lowercase()));
        } else {
            s.say(&format!("{he} later married "));
        }
        if rng.random_bool(0.15) {
            s.say(TITLES.choose(rng).unwrap()).say(" ");
        }
        s.mention(&sp.full(), TagClass::SP);
        if k > 0 {
            s.say(&format!(" in {married}"));
        }
        s.say(".");
        if rng.random_bool(0.4) {
            s.cite(&next_cite());
        }
        paragraphs[1].push(s);
        if k == 0 && n_spouses == 2 {
            let mut s = Sentence::default();
            s.say("The marriage to ").mention(sp.first, TagClass::SP).say(&format!(" ended in {}.", married + 6));
            paragraphs[1].push(s);
        }
    }

    if !children.is_empty() {
        let mut s = Sentence::default();
        if children.len() == 1 {
            s.say(&format!("{} son ", if n_spouses > 0 { "Their" } else { "Her" }));
            s.mention(children[0], TagClass::CH).say(&format!(" was born in {}.", grad_year + 9));
        } else {
            let words = ["zero", "one", "two", "three"];
            s.say(&format!("They have {} children, ", words[children.len()]));
            for (k, c) in children.iter().enumerate() {
                if k > 0 {
                    s.say(if k + 1 == children.len() { " and " } else { ", " });
                }
                s.mention(c, TagClass::CH);
            }
            s.say(".");
        }
        if rng.random_bool(0.3) {
            s.cite("citation needed");
        }
        paragraphs[2].push(s);
    }

    let (city2, _) = *CITIES.choose(rng).unwrap();
    let mut s = Sentence::default();
    s.say(&format!("The family lived in {city2} for many years."));
    paragraphs[2].push(s);

    let mut s = Sentence::default();
    let colleague = LAST.choose(rng).unwrap();
    s.say(&format!("{he} worked with Dr. {colleague} on {his} later projects."));
    if rng.random_bool(0.5) {
        s.cite(&next_cite());
    }
    paragraphs[2].push(s);

    // --- infobox -----------------------------------------------------------
    let mut html = String::new();
    let full = escape(&subject.full());
    let _ = write!(html, "<!DOCTYPE html>\n<html><head><title>{full}</title></head><body>\n<h1>{full}</h1>\n");
    html.push_str("<table class=\"infobox biography vcard\">\n");
    let _ = writeln!(html, "<tr><th colspan=\"2\">{full}</th></tr>");
    let month_no = MONTHS.iter().position(|m| *m == month).unwrap() + 1;
    let _ = writeln!(
        html,
        "<tr><th scope=\"row\">Born</th><td>{full}<br/><span style=\"display:none\">(<span class=\"bday\">{year}-{month_no:02}-{day:02}</span>)</span>{birth_date}<br/>{city}, {region}</td></tr>"
    );
    if has_parents {
        let key = ["Parents", "Parent(s)"].choose(rng).unwrap();
        let _ = writeln!(html, "<tr><th scope=\"row\">{key}</th><td>{}</td></tr>", list_cell(&[father.full(), mother.full()]));
    }
    if !spouses.is_empty() {
        let key = ["Spouse(s)", "Spouse"].choose(rng).unwrap();
        let items: Vec<String> = spouses.iter().zip(&married_years).map(|(p, y)| format!("{} (m. {y})", p.full())).collect();
        let _ = writeln!(html, "<tr><th scope=\"row\">{key}</th><td>{}</td></tr>", list_cell(&items));
    }
    if !children.is_empty() {
        let cell = if children_named_in_box {
            list_cell(&children.iter().map(|c| c.to_string()).collect::<Vec<_>>())
        } else {
            children.len().to_string()
        };
        let _ = writeln!(html, "<tr><th scope=\"row\">Children</th><td>{cell}</td></tr>");
    }
    let key = ["Alma mater", "Education"].choose(rng).unwrap();
    let edu_names: Vec<String> = edu.iter().map(|&e| INSTITUTIONS[e].0.to_string()).collect();
    let _ = writeln!(html, "<tr><th scope=\"row\">{key}</th><td>{}</td></tr>", list_cell(&edu_names));
    let _ = writeln!(html, "<tr><th scope=\"row\">Occupation</th><td>{occupation}<sup class=\"reference\">[1]</sup></td></tr>");
    html.push_str("</table>\n");

    let mut gold = Vec::new();
    for para in &paragraphs {
        if para.is_empty() {
            continue;
        }
        html.push_str("<p>");
        for (k, s) in para.iter().enumerate() {
            if k > 0 {
                html.push(' ');
            }
            html.push_str(&s.html);
            gold.push(gold_sentence(&page_id, gold.len(), s));
        }
        html.push_str("</p>\n");
    }
    html.push_str("</body></html>\n");
    SynthPage { page_id, html, gold }
}

/// `n_pages` pages; the same seed always yields the same bytes.
pub fn generate(n_pages: usize, seed: u64) -> Vec<SynthPage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pages).map(|i| page(&mut rng, i)).collect()
}

pub fn gold_corpus(pages: &[SynthPage], name: impl Into<String>) -> Corpus {
    Corpus { name: name.into(), sentences: pages.iter().flat_map(|p| p.gold.iter().cloned()).collect() }
}

/// Writes `<dir>/pages/<page_id>.html` and `<dir>/gold.conll`.
pub fn write_pages(pages: &[SynthPage], dir: &Path) -> Result<(), CorpusError> {
    let page_dir = dir.join("pages");
    fs::create_dir_all(&page_dir)?;
    for p in pages {
        fs::write(page_dir.join(format!("{}.html", p.page_id)), &p.html)?;
    }
    write_conll(&gold_corpus(pages, "gold"), dir.join("gold.conll"))
}
