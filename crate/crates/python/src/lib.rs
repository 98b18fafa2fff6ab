//! Python bindings. Structured results (reports, statistics, records) cross
//! the boundary as plain dicts and lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use pii_forge::annotator::{annotate_pages, AnnotationConfig, HeuristicCandidates};
use pii_forge::corpus::{self, Corpus, EntitySpan, TagClass};
use pii_forge::fedsim::{self, FedRunConfig, Scenario};
use pii_forge::fuzzymatch;
use pii_forge::infobox::{self, PiiRecord};
use pii_forge::nereval::{self, Scheme};
use pii_forge::review::{self, Action, ReviewDecision, SpanInput};
use pii_forge::synth;
use pii_forge::tagger::{self, TrainConfig, DEFAULT_HASH_SEED};

create_exception!(pii_forge, PiiForgeError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    PiiForgeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize + ?Sized>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn span(t: (usize, usize, String)) -> PyResult<EntitySpan> {
    let tag: TagClass = t.2.parse().map_err(|_| err(format!("unknown tag {:?}", t.2)))?;
    Ok(EntitySpan::new(t.0, t.1, tag))
}

fn scheme(s: &str) -> PyResult<Scheme> {
    s.parse().map_err(|_| err(format!("unknown scheme {s:?}")))
}

/// A labelled corpus (CoNLL on disk).
#[pyclass(name = "Corpus", module = "pii_forge", skip_from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus { inner: corpus::read_conll(&path).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (text, name = "corpus"))]
    fn parse(text: &str, name: &str) -> PyResult<Self> {
        Ok(PyCorpus { inner: corpus::parse_conll(text, name).map_err(err)? })
    }

    fn to_conll(&self) -> PyResult<String> {
        corpus::conll_to_string(&self.inner).map_err(err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        corpus::write_conll(&self.inner, path).map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus(name={:?}, sentences={})", self.inner.name, self.inner.len())
    }

    fn sentence_ids(&self) -> Vec<String> {
        self.inner.sentences.iter().map(|s| s.sentence_id.clone()).collect()
    }

    fn page_ids(&self) -> Vec<String> {
        self.inner.page_ids()
    }

    /// `{sentence_id, page_id, text, tokens, labels, spans}` for sentence `i`.
    fn sentence<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyAny>> {
        let s = self.inner.sentences.get(i).ok_or_else(|| err(format!("sentence index {i} out of range")))?;
        let labels: Vec<String> = s.labels.iter().map(ToString::to_string).collect();
        to_py(
            py,
            &serde_json::json!({
                "sentence_id": s.sentence_id,
                "page_id": s.page_id,
                "text": s.text,
                "tokens": s.tokens,
                "labels": labels,
                "spans": s.spans(),
            }),
        )
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &corpus::corpus_stats(&self.inner))
    }

    #[pyo3(signature = (ratios = (0.8, 0.1, 0.1), seed = 0))]
    fn split(&self, ratios: (f64, f64, f64), seed: u64) -> PyResult<(PyCorpus, PyCorpus, PyCorpus)> {
        let (a, b, c) = corpus::split_corpus(&self.inner, [ratios.0, ratios.1, ratios.2], seed).map_err(err)?;
        Ok((PyCorpus { inner: a }, PyCorpus { inner: b }, PyCorpus { inner: c }))
    }
}

/// Hashed-feature linear tagger.
#[pyclass(name = "TaggerModel", module = "pii_forge")]
struct PyTaggerModel {
    inner: tagger::TaggerModel,
}

#[pymethods]
impl PyTaggerModel {
    #[new]
    #[pyo3(signature = (feature_bits = 18, hash_seed = DEFAULT_HASH_SEED))]
    fn new(feature_bits: u32, hash_seed: u64) -> PyResult<Self> {
        if !(1..=30).contains(&feature_bits) {
            return Err(err("feature_bits must be in 1..=30"));
        }
        Ok(PyTaggerModel { inner: tagger::TaggerModel::new(1 << feature_bits, hash_seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTaggerModel { inner: tagger::TaggerModel::load(path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    fn predict(&self, tokens: Vec<String>) -> Vec<String> {
        tagger::predict(&self.inner, &tokens).iter().map(ToString::to_string).collect()
    }

    #[pyo3(signature = (corpus, name = "pred"))]
    fn tag(&self, corpus: &PyCorpus, name: &str) -> PyCorpus {
        PyCorpus { inner: tagger::tag_corpus(&self.inner, &corpus.inner, name) }
    }

    /// Trains in place; returns the per-batch losses.
    #[pyo3(signature = (corpus, learning_rate = None, batch_size = None, max_tokens = None, epochs = None, seed = 0))]
    fn train(
        &mut self,
        corpus: &PyCorpus,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        max_tokens: Option<usize>,
        epochs: Option<usize>,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let config = train_config(learning_rate, batch_size, max_tokens, epochs, seed);
        let log = tagger::train(&mut self.inner, &corpus.inner, &config).map_err(err)?;
        Ok(log.entries.iter().map(|e| e.loss).collect())
    }
}

fn train_config(
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_tokens: Option<usize>,
    epochs: Option<usize>,
    seed: u64,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        learning_rate: learning_rate.unwrap_or(d.learning_rate),
        batch_size: batch_size.unwrap_or(d.batch_size),
        max_sentence_tokens: max_tokens.unwrap_or(d.max_sentence_tokens),
        epochs: epochs.unwrap_or(d.epochs),
        seed,
    }
}

/// Review state backed by a decision log file.
#[pyclass(name = "ReviewSession", module = "pii_forge")]
struct PyReviewSession {
    inner: review::ReviewSession,
}

#[pymethods]
impl PyReviewSession {
    #[new]
    #[pyo3(signature = (corpus, records, log_path))]
    fn new(corpus: &PyCorpus, records: &Bound<'_, PyAny>, log_path: PathBuf) -> PyResult<Self> {
        let records: Vec<PiiRecord> = from_py(records)?;
        Ok(PyReviewSession { inner: review::ReviewSession::open(&corpus.inner, &records, log_path).map_err(err)? })
    }

    /// Validates, logs and applies one decision; returns its id.
    #[pyo3(signature = (sentence_id, action, target = None, span = None, annotator = ""))]
    fn submit(
        &mut self,
        sentence_id: String,
        action: &str,
        target: Option<String>,
        span: Option<(usize, usize, String)>,
        annotator: &str,
    ) -> PyResult<u64> {
        let action: Action = serde_json::from_value(serde_json::Value::String(action.to_ascii_uppercase()))
            .map_err(|_| err(format!("unknown action {action:?}")))?;
        let d = ReviewDecision {
            decision_id: 0,
            sentence_id,
            action,
            target,
            span: span.map(|(start, end, tag)| SpanInput { start, end, tag }),
            annotator: annotator.to_string(),
            timestamp: String::new(),
        };
        Ok(self.inner.submit(d).map_err(err)?.decision_id)
    }

    fn progress<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.state.progress())
    }

    fn next_pending(&self) -> Option<String> {
        self.inner.state.next_pending().map(|s| s.sentence.sentence_id.clone())
    }

    fn entities<'py>(&self, py: Python<'py>, sentence_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let s = self.inner.state.sentence(sentence_id).ok_or_else(|| err(format!("unknown sentence {sentence_id:?}")))?;
        to_py(py, &s.entities)
    }

    #[pyo3(signature = (only_done = false))]
    fn export_gold(&self, only_done: bool) -> PyCorpus {
        PyCorpus { inner: self.inner.state.export_gold(only_done) }
    }
}

#[pyfunction]
fn similarity(a: &str, b: &str) -> f64 {
    fuzzymatch::similarity(a, b)
}

/// `(index, score)` of the best candidate at or above `threshold`.
#[pyfunction]
#[pyo3(signature = (target, candidates, threshold = fuzzymatch::DEFAULT_THRESHOLD))]
fn best_match(target: &str, candidates: Vec<String>, threshold: f64) -> Option<(usize, f64)> {
    fuzzymatch::best_match(target, &candidates, threshold).map(|m| (m.candidate_index, m.score))
}

/// `(text, start, end)` per token, character offsets.
#[pyfunction]
fn tokenize(text: &str) -> Vec<(String, usize, usize)> {
    corpus::tokenize(text).into_iter().map(|t| (t.text, t.start, t.end)).collect()
}

#[pyfunction]
fn clean_and_split(text: &str) -> Vec<String> {
    corpus::clean_and_split(text).into_iter().map(|s| s.text).collect()
}

/// Normalized PII record of an HTML page's infobox.
#[pyfunction]
fn parse_infobox<'py>(py: Python<'py>, html: &str, page_id: &str) -> PyResult<Bound<'py, PyAny>> {
    let raw = infobox::parse_infobox(html, page_id).map_err(err)?;
    to_py(py, &infobox::normalize_keys(&raw))
}

#[pyfunction]
fn extract_body_text(html: &str) -> String {
    infobox::extract_body_text(html)
}

/// Annotates `(text, record)` pages; returns the corpus and statistics.
#[pyfunction]
#[pyo3(signature = (pages, fuzzy_threshold = fuzzymatch::DEFAULT_THRESHOLD, keep_empty = false, name = "auto"))]
fn annotate<'py>(
    py: Python<'py>,
    pages: Vec<(String, Bound<'py, PyAny>)>,
    fuzzy_threshold: f64,
    keep_empty: bool,
    name: &str,
) -> PyResult<(PyCorpus, Bound<'py, PyAny>)> {
    let config = AnnotationConfig { keep_empty_sentences: keep_empty, ..AnnotationConfig::with_threshold(fuzzy_threshold) };
    config.validate().map_err(err)?;
    let pages: Vec<(String, PiiRecord)> =
        pages.into_iter().map(|(t, r)| Ok((t, from_py(&r)?))).collect::<PyResult<_>>()?;
    let (corpus, stats) = annotate_pages(name, &pages, &config, &HeuristicCandidates);
    Ok((PyCorpus { inner: corpus }, to_py(py, &stats)?))
}

#[pyfunction]
fn pair_credit(pred: (usize, usize, String), gold: (usize, usize, String), scheme_name: &str) -> PyResult<f64> {
    Ok(nereval::pair_credit(&span(pred)?, &span(gold)?, scheme(scheme_name)?))
}

/// Scheme report for span lists, one list per sentence.
#[pyfunction]
fn score<'py>(
    py: Python<'py>,
    preds: Vec<Vec<(usize, usize, String)>>,
    golds: Vec<Vec<(usize, usize, String)>>,
    scheme_name: &str,
) -> PyResult<Bound<'py, PyAny>> {
    if preds.len() != golds.len() {
        return Err(err("one prediction list per gold sentence"));
    }
    let conv = |v: Vec<Vec<(usize, usize, String)>>| -> PyResult<Vec<Vec<EntitySpan>>> {
        v.into_iter().map(|s| s.into_iter().map(span).collect()).collect()
    };
    to_py(py, &nereval::score(&conv(preds)?, &conv(golds)?, scheme(scheme_name)?))
}

/// Four-scheme report: `{scheme: {class | "micro" | "macro": {p, r, f1, n_pred, n_gold}}}`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: &PyCorpus, gold: &PyCorpus) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &nereval::full_report(&pred.inner, &gold.inner).map_err(err)?.to_json())
}

#[allow(clippy::too_many_arguments)]
fn fed_config(
    scenario: &str,
    workers: usize,
    bits: Option<u32>,
    seed: u64,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    feature_bits: u32,
) -> PyResult<FedRunConfig> {
    let scenario: Scenario = scenario.parse().map_err(err)?;
    if !(1..=30).contains(&feature_bits) {
        return Err(err("feature_bits must be in 1..=30"));
    }
    Ok(FedRunConfig {
        scenario,
        n_workers: workers,
        compression_bits: bits,
        train: train_config(learning_rate, batch_size, None, epochs, seed),
        seed,
        feature_dim: 1 << feature_bits,
        hash_seed: DEFAULT_HASH_SEED,
    })
}

/// Trains under a scenario; returns `(model, {report, losses, mean_loss, transfers})`.
#[pyfunction]
#[pyo3(signature = (train, test, scenario = "central", workers = 1, bits = None, seed = 0,
                    learning_rate = None, batch_size = None, epochs = None, feature_bits = 18))]
#[allow(clippy::too_many_arguments)]
fn fed_run<'py>(
    py: Python<'py>,
    train: &PyCorpus,
    test: &PyCorpus,
    scenario: &str,
    workers: usize,
    bits: Option<u32>,
    seed: u64,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    feature_bits: u32,
) -> PyResult<(PyTaggerModel, Bound<'py, PyAny>)> {
    let config = fed_config(scenario, workers, bits, seed, learning_rate, batch_size, epochs, feature_bits)?;
    let out = fedsim::run(&config, &train.inner, &test.inner).map_err(err)?;
    let losses: Vec<f64> = out.log.entries.iter().map(|e| e.loss).collect();
    let summary = serde_json::json!({
        "report": out.report.to_json(),
        "losses": losses,
        "mean_loss": out.mean_loss(),
        "transfers": out.transfers,
    });
    Ok((PyTaggerModel { inner: out.model }, to_py(py, &summary)?))
}

/// Mean/std F1 rows for k = k_min..=k_max shards of `shards`.
#[pyfunction]
#[pyo3(signature = (train, test, shards = 10, k_min = 2, k_max = 10, reps = 10, seed = 0, feature_bits = 18))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    train: &PyCorpus,
    test: &PyCorpus,
    shards: usize,
    k_min: usize,
    k_max: usize,
    reps: usize,
    seed: u64,
    feature_bits: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let base = fed_config("fed-central", 1, None, seed, None, None, None, feature_bits)?;
    let result = fedsim::sweep_workers(&base, &train.inner, &test.inner, shards, k_min..=k_max, reps).map_err(err)?;
    to_py(py, &result.rows)
}

/// Gold corpus of `n` synthetic pages; writes pages and labels when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (n, seed = 0, out_dir = None))]
fn synth_pages(n: usize, seed: u64, out_dir: Option<PathBuf>) -> PyResult<PyCorpus> {
    let pages = synth::generate(n, seed);
    if let Some(dir) = out_dir {
        synth::write_pages(&pages, &dir).map_err(err)?;
    }
    Ok(PyCorpus { inner: synth::gold_corpus(&pages, "gold") })
}

#[pymodule]
#[pyo3(name = "pii_forge")]
fn pii_forge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PiiForgeError", m.py().get_type::<PiiForgeError>())?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyTaggerModel>()?;
    m.add_class::<PyReviewSession>()?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(best_match, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(clean_and_split, m)?)?;
    m.add_function(wrap_pyfunction!(parse_infobox, m)?)?;
    m.add_function(wrap_pyfunction!(extract_body_text, m)?)?;
    m.add_function(wrap_pyfunction!(annotate, m)?)?;
    m.add_function(wrap_pyfunction!(pair_credit, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fed_run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(synth_pages, m)?)?;
    Ok(())
}
