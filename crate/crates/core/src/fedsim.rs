//! Federated training simulation over page-disjoint worker shards.
//!
//! * `Central`: ordinary training on the whole corpus.
//! * `FedCentral`: batches are pulled to the center from each worker in
//!   round-robin order; each worker shuffles only its own data.
//! * `FedRemote`: the model travels worker to worker and trains on each
//!   worker's batches in turn. Every transfer goes through a quantizing
//!   channel.
//!
//! Everything runs on one thread in a fixed order, so a run is a pure
//! function of its configuration and corpora.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::nereval::{full_report, EvalError, EvalReport, Scheme};
use crate::tagger::{
    batch_schedule, encode_corpus, tag_corpus, train, train_step, EncodedSentence, TaggerError, TaggerModel,
    TrainConfig, TrainLog, DEFAULT_FEATURE_DIM, DEFAULT_HASH_SEED,
};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("cannot split {pages} pages across {workers} workers")]
    Shard { pages: usize, workers: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Central,
    FedCentral,
    FedRemote,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Central => "central",
            Scenario::FedCentral => "fed-central",
            Scenario::FedRemote => "fed-remote",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "central" => Ok(Scenario::Central),
            "fed-central" => Ok(Scenario::FedCentral),
            "fed-remote" => Ok(Scenario::FedRemote),
            _ => Err(format!("unknown scenario {s:?} (expected central, fed-central or fed-remote)")),
        }
    }
}

pub const ALLOWED_BITS: [u32; 2] = [16, 8];

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerShard {
    pub worker_id: usize,
    pub corpus: Corpus,
}

/// Deals shuffled pages round-robin to `k` workers. Sentences keep their
/// corpus order inside each shard.
pub fn shard(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<WorkerShard>, FedError> {
    let mut pages = corpus.page_ids();
    if k == 0 || k > pages.len() {
        return Err(FedError::Shard { pages: pages.len(), workers: k });
    }
    pages.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut owned: Vec<HashSet<String>> = vec![HashSet::new(); k];
    for (i, p) in pages.into_iter().enumerate() {
        owned[i % k].insert(p);
    }
    Ok(owned
        .iter()
        .enumerate()
        .map(|(worker_id, pages)| WorkerShard {
            worker_id,
            corpus: corpus.select_pages(format!("{}-w{worker_id}", corpus.name), pages),
        })
        .collect())
}

/// Per-tensor affine quantization round trip. The weight matrix is the only
/// tensor; a constant tensor passes through unchanged.
pub fn quantize_weights(model: &TaggerModel, bits: Option<u32>) -> TaggerModel {
    let Some(bits) = bits else { return model.clone() };
    let mut out = model.clone();
    quantize_in_place(&mut out.weights, bits);
    out
}

pub fn quantize_in_place(weights: &mut [f32], bits: u32) {
    assert!((1..=32).contains(&bits), "bits must be in 1..=32");
    let (lo, hi) = weights
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(f64::from(w)), hi.max(f64::from(w))));
    // also catches an empty slice (lo = +inf) and NaN
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return;
    }
    let levels = (2f64).powi(bits as i32) - 1.0;
    let range = hi - lo;
    let scale = range / levels;
    for w in weights.iter_mut() {
        let q = ((f64::from(*w) - lo) / range * levels).round();
        *w = (lo + q * scale) as f32;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRunConfig {
    pub scenario: Scenario,
    pub n_workers: usize,
    pub compression_bits: Option<u32>,
    pub train: TrainConfig,
    /// Seeds the page-to-worker assignment.
    pub seed: u64,
    pub feature_dim: usize,
    pub hash_seed: u64,
}

impl Default for FedRunConfig {
    fn default() -> Self {
        FedRunConfig {
            scenario: Scenario::Central,
            n_workers: 1,
            compression_bits: None,
            train: TrainConfig::default(),
            seed: 0,
            feature_dim: DEFAULT_FEATURE_DIM,
            hash_seed: DEFAULT_HASH_SEED,
        }
    }
}

impl FedRunConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        self.train.validate()?;
        if self.n_workers == 0 {
            return Err(FedError::Config("n_workers must be at least 1".into()));
        }
        if let Some(b) = self.compression_bits {
            if !ALLOWED_BITS.contains(&b) {
                return Err(FedError::Config(format!("compression_bits must be none, 16 or 8, got {b}")));
            }
        }
        if self.compression_bits.is_some() && self.scenario != Scenario::FedRemote {
            return Err(FedError::Config("compression applies only to the fed-remote scenario".into()));
        }
        TaggerModel::new(self.feature_dim, self.hash_seed)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub model: TaggerModel,
    pub log: TrainLog,
    pub report: EvalReport,
    /// Number of quantized model transfers performed.
    pub transfers: usize,
}

impl FedOutcome {
    pub fn mean_loss(&self) -> f64 {
        self.log.mean_loss()
    }
}

/// The round-robin interleaving of per-worker batch lists used by
/// `FedCentral`: first batch of every worker, then every second batch, ...
pub fn interleave<T: Clone>(per_worker: &[Vec<T>]) -> Vec<(usize, T)> {
    let longest = per_worker.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for round in 0..longest {
        for (w, batches) in per_worker.iter().enumerate() {
            if let Some(b) = batches.get(round) {
                out.push((w, b.clone()));
            }
        }
    }
    out
}

/// Trains and evaluates one scenario. Shards are drawn from `train_corpus`
/// with `config.seed`.
pub fn run(config: &FedRunConfig, train_corpus: &Corpus, test: &Corpus) -> Result<FedOutcome, FedError> {
    config.validate()?;
    if train_corpus.sentences.is_empty() {
        return Err(TaggerError::EmptyCorpus.into());
    }
    if config.scenario == Scenario::Central {
        let mut model = TaggerModel::new(config.feature_dim, config.hash_seed)?;
        let log = train(&mut model, train_corpus, &config.train)?;
        return finish(model, log, test, 0);
    }
    let shards = shard(train_corpus, config.n_workers, config.seed)?;
    run_on_shards(config, &shards, test)
}

/// Like [`run`] with an explicit partition; `config.n_workers` is ignored.
pub fn run_on_shards(config: &FedRunConfig, shards: &[WorkerShard], test: &Corpus) -> Result<FedOutcome, FedError> {
    config.validate()?;
    if shards.is_empty() {
        return Err(FedError::Config("no shards".into()));
    }
    let mut model = TaggerModel::new(config.feature_dim, config.hash_seed)?;
    let tc = &config.train;
    let data: Vec<Vec<EncodedSentence>> =
        shards.iter().map(|s| encode_corpus(&model, &s.corpus, tc.max_sentence_tokens)).collect();
    if data.iter().all(Vec::is_empty) {
        return Err(TaggerError::EmptyCorpus.into());
    }
    let schedules: Vec<Vec<Vec<Vec<usize>>>> =
        data.iter().enumerate().map(|(w, d)| batch_schedule(d.len(), tc, w as u64)).collect();
    let mut log = TrainLog::default();
    let mut transfers = 0;
    match config.scenario {
        Scenario::Central | Scenario::FedCentral => {
            for epoch in 0..tc.epochs {
                let per_worker: Vec<Vec<Vec<usize>>> = schedules.iter().map(|s| s[epoch].clone()).collect();
                for (w, batch) in interleave(&per_worker) {
                    let refs: Vec<&EncodedSentence> = batch.iter().map(|&i| &data[w][i]).collect();
                    log.push(epoch, w, train_step(&mut model, &refs, tc.learning_rate));
                }
            }
        }
        Scenario::FedRemote => {
            let bits = config.compression_bits;
            for epoch in 0..tc.epochs {
                for (w, schedule) in schedules.iter().enumerate() {
                    // center -> first worker, then worker -> next worker
                    model = quantize_weights(&model, bits);
                    transfers += 1;
                    for batch in &schedule[epoch] {
                        let refs: Vec<&EncodedSentence> = batch.iter().map(|&i| &data[w][i]).collect();
                        log.push(epoch, w, train_step(&mut model, &refs, tc.learning_rate));
                    }
                }
                // last worker -> center
                model = quantize_weights(&model, bits);
                transfers += 1;
            }
        }
    }
    finish(model, log, test, transfers)
}

fn finish(model: TaggerModel, log: TrainLog, test: &Corpus, transfers: usize) -> Result<FedOutcome, FedError> {
    let pred = tag_corpus(&model, test, format!("{}-pred", test.name));
    let report = full_report(&pred, test)?;
    Ok(FedOutcome { model, log, report, transfers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_workers: usize,
    pub scheme: Scheme,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, k: usize, scheme: Scheme) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n_workers == k && r.scheme == scheme)
    }

    /// `k,scheme,mean_f1,std_f1,reps`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,scheme,mean_f1,std_f1,reps\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6},{:.6},{}\n", r.n_workers, r.scheme, r.mean_f1, r.std_f1, r.repetitions));
        }
        out
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For each k, trains `FedCentral` on the first k of `n_shards` shards,
/// `repetitions` times. Repetition r shifts both the shard seed and the
/// shuffling seed by r.
pub fn sweep_workers(
    base: &FedRunConfig,
    train_corpus: &Corpus,
    test: &Corpus,
    n_shards: usize,
    k_range: std::ops::RangeInclusive<usize>,
    repetitions: usize,
) -> Result<SweepResult, FedError> {
    if repetitions == 0 {
        return Err(FedError::Config("repetitions must be at least 1".into()));
    }
    if *k_range.start() == 0 || *k_range.end() > n_shards {
        return Err(FedError::Config(format!("k range {k_range:?} must lie within 1..={n_shards}")));
    }
    let ks: Vec<usize> = k_range.collect();
    let jobs: Vec<(usize, usize)> = ks.iter().flat_map(|&k| (0..repetitions).map(move |r| (k, r))).collect();
    let results: Vec<Result<(usize, EvalReport), FedError>> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let mut cfg = base.clone();
            cfg.scenario = Scenario::FedCentral;
            cfg.compression_bits = None;
            cfg.seed = base.seed.wrapping_add(r as u64);
            cfg.train.seed = base.train.seed.wrapping_add(r as u64);
            cfg.n_workers = k;
            let shards = shard(train_corpus, n_shards, cfg.seed)?;
            let outcome = run_on_shards(&cfg, &shards[..k], test)?;
            Ok((k, outcome.report))
        })
        .collect();
    let reports: Vec<(usize, EvalReport)> = results.into_iter().collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for &k in &ks {
        for scheme in Scheme::ALL {
            let f1s: Vec<f64> =
                reports.iter().filter(|(kk, _)| *kk == k).map(|(_, rep)| rep.micro(scheme).f1).collect();
            let (mean_f1, std_f1) = mean_std(&f1s);
            rows.push(SweepRow { n_workers: k, scheme, mean_f1, std_f1, repetitions });
        }
    }
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedSentence, EntitySpan, TagClass};

    fn corpus(pages: usize) -> Corpus {
        let mut sentences = Vec::new();
        for p in 0..pages {
            for s in 0..2 {
                let text = format!("Page {p} married Jane Doe in line {s}.");
                sentences.push(
                    AnnotatedSentence::from_spans(
                        format!("p{p}-{s}"),
                        format!("p{p}"),
                        text,
                        &[EntitySpan::new(3, 5, TagClass::SP)],
                    )
                    .unwrap(),
                );
            }
        }
        Corpus::new("c", sentences).unwrap()
    }

    #[test]
    fn shards_balance_pages() {
        let c = corpus(10);
        let shards = shard(&c, 2, 3).unwrap();
        assert_eq!(shards.iter().map(|s| s.corpus.page_ids().len()).collect::<Vec<_>>(), [5, 5]);
        assert_eq!(shard(&c, 2, 3).unwrap(), shards);
        assert!(matches!(shard(&c, 11, 0), Err(FedError::Shard { pages: 10, workers: 11 })));
        assert!(shard(&c, 0, 0).is_err());
    }

    #[test]
    fn quantizer_midpoint() {
        let mut w = [0.0f32, 1.0, 0.5];
        quantize_in_place(&mut w, 8);
        assert_eq!(w[2], (128.0f64 / 255.0) as f32);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[1], 1.0);
        let mut c = [0.25f32; 4];
        quantize_in_place(&mut c, 8);
        assert_eq!(c, [0.25; 4]);
    }

    #[test]
    fn interleave_round_robin() {
        let v = interleave(&[vec!['a', 'b', 'c'], vec!['x']]);
        assert_eq!(v, [(0, 'a'), (1, 'x'), (0, 'b'), (0, 'c')]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FedRunConfig { feature_dim: 1 << 8, ..Default::default() };
        assert!(cfg.validate().is_ok());
        cfg.compression_bits = Some(8);
        assert!(cfg.validate().is_err());
        cfg.scenario = Scenario::FedRemote;
        assert!(cfg.validate().is_ok());
        cfg.compression_bits = Some(4);
        assert!(cfg.validate().is_err());
        cfg.compression_bits = None;
        cfg.n_workers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn remote_epoch_accounting() {
        let c = corpus(6);
        let cfg = FedRunConfig {
            scenario: Scenario::FedRemote,
            n_workers: 3,
            feature_dim: 1 << 10,
            train: TrainConfig { batch_size: 3, epochs: 2, ..Default::default() },
            ..Default::default()
        };
        let out = run(&cfg, &c, &c).unwrap();
        // each worker holds 2 pages = 4 sentences = 2 batches of at most 3
        assert_eq!(out.log.entries.len(), 2 * 3 * 2);
        assert_eq!(out.transfers, 2 * 4);
        let workers: Vec<usize> = out.log.entries.iter().map(|e| e.worker_id).collect();
        assert_eq!(&workers[..6], [0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn sweep_single_rep_has_zero_std() {
        let c = corpus(4);
        let base = FedRunConfig { feature_dim: 1 << 10, ..Default::default() };
        let res = sweep_workers(&base, &c, &c, 4, 2..=4, 1).unwrap();
        assert_eq!(res.rows.len(), 3 * 4);
        assert!(res.rows.iter().all(|r| r.std_f1 == 0.0 && r.repetitions == 1));
        assert!(res.to_csv().starts_with("k,scheme,mean_f1,std_f1,reps\n2,strict,"));
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
