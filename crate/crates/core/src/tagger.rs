//! Per-token multinomial logistic tagger over hashed lexical features.
//!
//! Weights are stored row-major as `feature_dim × 11` f32 values, one row per
//! hashed feature. Training is plain minibatch gradient descent, so the
//! weights are the complete optimizer state.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::{bio_to_spans, spans_to_labels, AnnotatedSentence, BioLabel, Corpus};

pub const MODEL_MAGIC: &[u8; 6] = b"PIITAG";
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_FEATURE_DIM: usize = 1 << 18;
pub const DEFAULT_HASH_SEED: u64 = 0x5049_4954_4147;

const N_LABELS: usize = BioLabel::COUNT;

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("model version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub weights: Vec<f32>,
    pub feature_dim: usize,
    pub hash_seed: u64,
    pub version: u32,
}

impl TaggerModel {
    pub fn new(feature_dim: usize, hash_seed: u64) -> Result<Self, TaggerError> {
        if !feature_dim.is_power_of_two() || feature_dim > u32::MAX as usize {
            return Err(TaggerError::Config(format!("feature_dim {feature_dim} must be a power of two below 2^32")));
        }
        Ok(TaggerModel { weights: vec![0.0; feature_dim * N_LABELS], feature_dim, hash_seed, version: MODEL_VERSION })
    }

    #[inline]
    pub fn weight_index(&self, feature: u32, label: usize) -> usize {
        feature as usize * N_LABELS + label
    }

    pub fn featurize<S: AsRef<str>>(&self, tokens: &[S], position: usize) -> Vec<u32> {
        featurize(tokens, position, self.feature_dim, self.hash_seed)
    }

    fn logits(&self, feats: &[u32]) -> [f64; N_LABELS] {
        let mut z = [0f64; N_LABELS];
        for &f in feats {
            let row = &self.weights[self.weight_index(f, 0)..][..N_LABELS];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += f64::from(*w);
            }
        }
        z
    }

    /// Model file contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.weights.len() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.hash_seed.to_le_bytes());
        out.extend_from_slice(&(N_LABELS as u32).to_le_bytes());
        for label in BioLabel::all() {
            let s = label.to_string();
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TaggerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(TaggerError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(TaggerError::Version { found: version, expected: MODEL_VERSION });
        }
        let feature_dim = r.u32()? as usize;
        let hash_seed = r.u64()?;
        let n_labels = r.u32()? as usize;
        if n_labels != N_LABELS {
            return Err(TaggerError::Corrupt(format!("{n_labels} labels, expected {N_LABELS}")));
        }
        for expected in BioLabel::all() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| TaggerError::Corrupt("label is not utf-8".into()))?;
            if name != expected.to_string() {
                return Err(TaggerError::Corrupt(format!("label {name:?} where {expected} was expected")));
            }
        }
        let mut model =
            TaggerModel::new(feature_dim, hash_seed).map_err(|e| TaggerError::Corrupt(e.to_string()))?;
        let body = r.take(model.weights.len() * 4)?;
        for (w, chunk) in model.weights.iter_mut().zip(body.chunks_exact(4)) {
            *w = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        if r.pos != bytes.len() {
            return Err(TaggerError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaggerError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaggerError> {
        TaggerModel::from_bytes(&fs::read(path)?)
    }
}

impl Default for TaggerModel {
    fn default() -> Self {
        TaggerModel::new(DEFAULT_FEATURE_DIM, DEFAULT_HASH_SEED).unwrap()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TaggerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TaggerError::Corrupt(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TaggerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TaggerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Collapsed character classes: `Jean-Luc` -> `Xx-Xx`, `1980` -> `9`.
pub fn word_shape(token: &str) -> String {
    let mut out = String::new();
    for c in token.chars() {
        let k = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            '9'
        } else {
            c
        };
        if !out.ends_with(k) {
            out.push(k);
        }
    }
    out
}

fn affix(lower: &str, n: usize, prefix: bool) -> Option<String> {
    let chars: Vec<char> = lower.chars().collect();
    if chars.len() < n {
        return None;
    }
    Some(if prefix { chars[..n].iter().collect() } else { chars[chars.len() - n..].iter().collect() })
}

/// Hashed feature indices for the token at `position`.
pub fn featurize<S: AsRef<str>>(tokens: &[S], position: usize, feature_dim: usize, hash_seed: u64) -> Vec<u32> {
    assert!(position < tokens.len(), "position {position} out of range");
    let lower = tokens[position].as_ref().to_lowercase();
    let mut names = vec![format!("w={lower}"), format!("shape={}", word_shape(tokens[position].as_ref()))];
    for n in [2, 3] {
        if let Some(p) = affix(&lower, n, true) {
            names.push(format!("p{n}={p}"));
        }
        if let Some(s) = affix(&lower, n, false) {
            names.push(format!("s{n}={s}"));
        }
    }
    for offset in [-2isize, -1, 1, 2] {
        let j = position as isize + offset;
        let word = if j < 0 {
            "<s>".to_string()
        } else if j as usize >= tokens.len() {
            "</s>".to_string()
        } else {
            tokens[j as usize].as_ref().to_lowercase()
        };
        names.push(format!("w{offset:+}={word}"));
    }
    names.push("bias".into());
    let mask = (feature_dim - 1) as u64;
    names.iter().map(|n| (xxh3_64_with_seed(n.as_bytes(), hash_seed) & mask) as u32).collect()
}

pub fn predict<S: AsRef<str>>(model: &TaggerModel, tokens: &[S]) -> Vec<BioLabel> {
    (0..tokens.len())
        .map(|i| {
            let z = model.logits(&model.featurize(tokens, i));
            let mut best = 0;
            for c in 1..N_LABELS {
                if z[c] > z[best] {
                    best = c;
                }
            }
            BioLabel::from_index(best).unwrap()
        })
        .collect()
}

/// Predicted copy of `corpus`; invalid BIO output is repaired so every
/// sentence holds a valid label sequence.
pub fn tag_corpus(model: &TaggerModel, corpus: &Corpus, name: impl Into<String>) -> Corpus {
    let sentences = corpus
        .sentences
        .iter()
        .map(|s| {
            let raw = predict(model, &s.token_texts());
            let spans = bio_to_spans(&raw).spans;
            AnnotatedSentence { labels: spans_to_labels(raw.len(), &spans).unwrap(), ..s.clone() }
        })
        .collect();
    Corpus { name: name.into(), sentences }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_sentence_tokens: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 40.0, batch_size: 128, max_sentence_tokens: 50, epochs: 1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TaggerError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, v) in
            [("batch_size", self.batch_size), ("max_sentence_tokens", self.max_sentence_tokens), ("epochs", self.epochs)]
        {
            if v == 0 {
                return Err(TaggerError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub worker_id: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn push(&mut self, epoch: usize, worker_id: usize, loss: f64) {
        let step = self.entries.len();
        self.entries.push(LogEntry { step, epoch, worker_id, loss });
    }

    pub fn mean_loss(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.loss).sum::<f64>() / self.entries.len() as f64
    }

    /// `step,worker_id,loss`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,worker_id,loss\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.step, e.worker_id, e.loss));
        }
        out
    }
}

/// A truncated sentence with its features precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub features: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
}

pub fn encode_sentence(model: &TaggerModel, sentence: &AnnotatedSentence, max_tokens: usize) -> EncodedSentence {
    let n = sentence.tokens.len().min(max_tokens);
    let texts = &sentence.token_texts()[..n];
    EncodedSentence {
        features: (0..n).map(|i| model.featurize(texts, i)).collect(),
        labels: sentence.labels[..n].iter().map(|l| l.index() as u8).collect(),
    }
}

pub fn encode_corpus(model: &TaggerModel, corpus: &Corpus, max_tokens: usize) -> Vec<EncodedSentence> {
    corpus.sentences.iter().map(|s| encode_sentence(model, s, max_tokens)).collect()
}

/// Sentence indices for each epoch, chunked into batches. Each data stream
/// has its own ChaCha8 stream so independent shards never share draws.
pub fn batch_schedule(n_sentences: usize, config: &TrainConfig, stream: u64) -> Vec<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    (0..config.epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n_sentences).collect();
            order.shuffle(&mut rng);
            order.chunks(config.batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect()
}

/// Sparse gradient of the batch loss, keyed by feature row.
#[derive(Debug, Clone, Default)]
pub struct Gradient {
    pub rows: HashMap<u32, [f64; N_LABELS]>,
}

impl Gradient {
    pub fn get(&self, feature: u32, label: usize) -> f64 {
        self.rows.get(&feature).map_or(0.0, |r| r[label])
    }
}

fn softmax(z: &[f64; N_LABELS]) -> [f64; N_LABELS] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = z.map(|x| (x - m).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

fn log_softmax_at(z: &[f64; N_LABELS], y: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z[y] - lse
}

fn token_count(batch: &[&EncodedSentence]) -> usize {
    batch.iter().map(|s| s.labels.len()).sum()
}

/// Mean cross-entropy over all tokens in the batch.
pub fn batch_loss(model: &TaggerModel, batch: &[&EncodedSentence]) -> f64 {
    let n = token_count(batch);
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for s in batch {
        for (feats, &y) in s.features.iter().zip(&s.labels) {
            total -= log_softmax_at(&model.logits(feats), y as usize);
        }
    }
    total / n as f64
}

pub fn loss_and_gradient(model: &TaggerModel, batch: &[&EncodedSentence]) -> (f64, Gradient) {
    let n = token_count(batch);
    let mut grad = Gradient::default();
    if n == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for s in batch {
        for (feats, &y) in s.features.iter().zip(&s.labels) {
            let z = model.logits(feats);
            total -= log_softmax_at(&z, y as usize);
            let mut d = softmax(&z);
            d[y as usize] -= 1.0;
            for &f in feats {
                let row = grad.rows.entry(f).or_insert([0.0; N_LABELS]);
                for c in 0..N_LABELS {
                    row[c] += d[c] * inv;
                }
            }
        }
    }
    (total * inv, grad)
}

/// One gradient-descent update; returns the batch loss before the update.
pub fn train_step(model: &mut TaggerModel, batch: &[&EncodedSentence], learning_rate: f64) -> f64 {
    let (loss, grad) = loss_and_gradient(model, batch);
    for (f, row) in grad.rows {
        let base = model.weight_index(f, 0);
        for (c, g) in row.iter().enumerate() {
            let w = &mut model.weights[base + c];
            *w = (f64::from(*w) - learning_rate * g) as f32;
        }
    }
    loss
}

/// Trains in place on `corpus`, logging every batch under worker 0.
pub fn train(model: &mut TaggerModel, corpus: &Corpus, config: &TrainConfig) -> Result<TrainLog, TaggerError> {
    config.validate()?;
    if corpus.sentences.is_empty() {
        return Err(TaggerError::EmptyCorpus);
    }
    let data = encode_corpus(model, corpus, config.max_sentence_tokens);
    let mut log = TrainLog::default();
    for (epoch, batches) in batch_schedule(data.len(), config, 0).into_iter().enumerate() {
        for batch in batches {
            let refs: Vec<&EncodedSentence> = batch.iter().map(|&i| &data[i]).collect();
            let loss = train_step(model, &refs, config.learning_rate);
            log.push(epoch, 0, loss);
        }
    }
    Ok(log)
}
