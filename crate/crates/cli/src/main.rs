use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pii_forge::annotator::{annotate_pages, AnnotationConfig, CandidateProvider, HeuristicCandidates, SidecarCandidates};
use pii_forge::corpus::{corpus_stats, read_conll, split_corpus, write_conll, Corpus};
use pii_forge::fedsim::{run, sweep_workers, FedRunConfig, Scenario};
use pii_forge::fuzzymatch::DEFAULT_THRESHOLD;
use pii_forge::infobox::{normalize_keys, page_paths, parse_infobox, read_page, read_records, InfoboxError};
use pii_forge::nereval::full_report;
use pii_forge::review::{read_log, replay, ReviewSession};
use pii_forge::synth;
use pii_forge::tagger::{tag_corpus, train, TaggerModel, TrainConfig, DEFAULT_HASH_SEED};

mod config;

/// Automatic PII annotation, partial-credit NER scoring and federated
/// training simulation.
#[derive(Parser, Debug)]
#[command(name = "pii-forge", version, args_override_self = true)]
struct Cli {
    /// TOML file with one table per subcommand; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Extract normalized PII records from saved HTML pages.
    Infobox(InfoboxArgs),
    /// Label page text with record phrases and write CoNLL.
    Annotate(AnnotateArgs),
    /// Page, sentence and mention counts for a CoNLL corpus.
    Stats(StatsArgs),
    /// Page-level train/validation/test split.
    Split(SplitArgs),
    /// Train the tagger centrally.
    Train(TrainArgs),
    /// Tag a corpus with a trained model.
    Tag(TagArgs),
    /// Train under a federated scenario and evaluate.
    Fedtrain(FedtrainArgs),
    /// Mean and spread of F1 as the number of data shards grows.
    Sweep(SweepArgs),
    /// Four-scheme evaluation of predictions against gold.
    Evaluate(EvaluateArgs),
    /// Human review service.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Replay a decision log and write the gold corpus.
    ExportGold(ExportGoldArgs),
    /// Write synthetic biography pages and their gold labels.
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ReviewCommand {
    /// Serve the review HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Serialize)]
struct InfoboxArgs {
    /// Directory of .html pages (or a single page).
    #[arg(long)]
    pages: PathBuf,
    /// Output JSONL, one record per page.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AnnotateArgs {
    /// Directory of .html/.txt pages (or a single page).
    #[arg(long)]
    pages: PathBuf,
    /// Record JSONL from `infobox`.
    #[arg(long)]
    records: PathBuf,
    /// Output CoNLL file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the statistics JSON here.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Minimum n-gram cosine for a phrase to claim a candidate span.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    fuzzy_threshold: f64,
    /// Keep sentences without any located entity.
    #[arg(long)]
    keep_empty: bool,
    /// Candidate spans from an external extractor (JSONL) instead of the built-in heuristics.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for <name>-{train,validation,test}.conll.
    #[arg(long)]
    out_dir: PathBuf,
    /// Three comma-separated fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    #[arg(long, env = "PII_FORGE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().max_sentence_tokens)]
    max_tokens: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    /// log2 of the hashed feature space size.
    #[arg(long, default_value_t = 18, value_parser = clap::value_parser!(u32).range(1..=30))]
    feature_bits: u32,
    #[arg(long, default_value_t = DEFAULT_HASH_SEED)]
    hash_seed: u64,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_sentence_tokens: self.max_tokens,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    /// Per-batch loss CSV (step,worker_id,loss).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, env = "PII_FORGE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScenarioArg {
    Central,
    FedCentral,
    FedRemote,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum Compress {
    #[value(name = "none")]
    None,
    #[value(name = "16")]
    B16,
    #[value(name = "8")]
    B8,
}

#[derive(Args, Debug, Serialize)]
struct FedtrainArgs {
    /// Training corpus (typically automatic annotations).
    #[arg(long)]
    train: PathBuf,
    /// Gold test corpus.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = ScenarioArg::Central)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Weight quantization on fed-remote model transfers.
    #[arg(long, value_enum, default_value_t = Compress::None)]
    compress: Compress,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, env = "PII_FORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Evaluation report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 10)]
    shards: usize,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, env = "PII_FORGE_SEED", default_value_t = 0)]
    seed: u64,
    /// CSV output (k,scheme,mean_f1,std_f1,reps); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ServeArgs {
    /// Machine-annotated CoNLL corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    records: PathBuf,
    /// Decision log (JSONL); created if missing.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

#[derive(Args, Debug, Serialize)]
struct ExportGoldArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop sentences that are still pending review.
    #[arg(long)]
    only_done: bool,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pages: usize,
    #[arg(long, env = "PII_FORGE_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory; receives pages/ and gold.conll.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let resolved = serde_json::json!({ "config_file": cli.config, "command": &cli.command });
    eprintln!("{resolved}");
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Infobox(a) => infobox(a),
        Command::Annotate(a) => annotate(a),
        Command::Stats(a) => {
            let corpus = load(&a.corpus)?;
            println!("{}", serde_json::to_string_pretty(&corpus_stats(&corpus))?);
            Ok(())
        }
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Tag(a) => {
            let model = TaggerModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
            let corpus = load(&a.corpus)?;
            write_conll(&tag_corpus(&model, &corpus, "pred"), &a.out)?;
            Ok(())
        }
        Command::Fedtrain(a) => fedtrain(a),
        Command::Sweep(a) => sweep(a),
        Command::Evaluate(a) => {
            let report = full_report(&load(&a.pred)?, &load(&a.gold)?)?;
            if let Some(path) = &a.json {
                fs::write(path, serde_json::to_string_pretty(&report.to_json())? + "\n")?;
            }
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Review(ReviewCommand::Serve(a)) => serve(a),
        Command::ExportGold(a) => {
            let machine = load(&a.corpus)?;
            let decisions = read_log(&a.log)?;
            let state = replay(&machine, &[], &decisions)
                .map_err(|(id, e)| anyhow::anyhow!("decision {id} does not apply: {e}"))?;
            write_conll(&state.export_gold(a.only_done), &a.out)?;
            println!("{}", serde_json::to_string(&state.progress())?);
            Ok(())
        }
        Command::Synth(a) => {
            let pages = synth::generate(a.pages, a.seed);
            synth::write_pages(&pages, &a.out)?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Corpus> {
    read_conll(path).with_context(|| format!("reading {}", path.display()))
}

fn infobox(a: InfoboxArgs) -> Result<()> {
    let mut lines = String::new();
    let (mut written, mut missing) = (0, 0);
    for path in page_paths(&a.pages)? {
        let page = read_page(&path)?;
        let Some(html) = page.html else { continue };
        match parse_infobox(&html, &page.page_id) {
            Ok(raw) => {
                lines.push_str(&normalize_keys(&raw).to_json_line());
                lines.push('\n');
                written += 1;
            }
            Err(InfoboxError::NoInfobox(id)) => {
                eprintln!("warning: {id}: no infobox");
                missing += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    fs::write(&a.out, lines).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}", serde_json::json!({ "records": written, "pages_without_infobox": missing }));
    Ok(())
}

fn annotate(a: AnnotateArgs) -> Result<()> {
    let config = AnnotationConfig { keep_empty_sentences: a.keep_empty, ..AnnotationConfig::with_threshold(a.fuzzy_threshold) };
    config.validate()?;
    let records: HashMap<String, _> =
        read_records(&a.records)?.into_iter().map(|r| (r.page_id.clone(), r)).collect();
    let mut pages = Vec::new();
    for path in page_paths(&a.pages)? {
        let page = read_page(&path)?;
        match records.get(&page.page_id) {
            Some(rec) => pages.push((page.text, rec.clone())),
            None => eprintln!("warning: {}: no record", page.page_id),
        }
    }
    let sidecar;
    let provider: &dyn CandidateProvider = match &a.candidates {
        Some(p) => {
            sidecar = SidecarCandidates::load(p)?;
            &sidecar
        }
        None => &HeuristicCandidates,
    };
    let name = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (corpus, stats) = annotate_pages(&name, &pages, &config, provider);
    write_conll(&corpus, &a.out)?;
    let json = serde_json::to_string_pretty(&stats)?;
    if let Some(path) = &a.stats {
        fs::write(path, json.clone() + "\n")?;
    }
    println!("{json}");
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let ratios: [f64; 3] = a.ratios.as_slice().try_into().context("--ratios takes exactly three values")?;
    let corpus = load(&a.corpus)?;
    let (tr, va, te) = split_corpus(&corpus, ratios, a.seed)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut sizes = serde_json::Map::new();
    for part in [&tr, &va, &te] {
        write_conll(part, a.out_dir.join(format!("{}.conll", part.name)))?;
        sizes.insert(part.name.clone(), part.len().into());
    }
    println!("{}", serde_json::Value::Object(sizes));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let mut model = TaggerModel::new(1 << a.opts.feature_bits, a.opts.hash_seed)?;
    let log = train(&mut model, &corpus, &a.opts.config(a.seed))?;
    model.save(&a.model_out)?;
    if let Some(p) = &a.loss_log {
        fs::write(p, log.to_csv())?;
    }
    let last = log.entries.last().map_or(0.0, |e| e.loss);
    println!("{}", serde_json::json!({ "steps": log.entries.len(), "final_loss": last }));
    Ok(())
}

fn fedtrain(a: FedtrainArgs) -> Result<()> {
    let config = FedRunConfig {
        scenario: match a.scenario {
            ScenarioArg::Central => Scenario::Central,
            ScenarioArg::FedCentral => Scenario::FedCentral,
            ScenarioArg::FedRemote => Scenario::FedRemote,
        },
        n_workers: a.workers,
        compression_bits: match a.compress {
            Compress::None => None,
            Compress::B16 => Some(16),
            Compress::B8 => Some(8),
        },
        train: a.opts.config(a.seed),
        seed: a.seed,
        feature_dim: 1 << a.opts.feature_bits,
        hash_seed: a.opts.hash_seed,
    };
    let out = run(&config, &load(&a.train)?, &load(&a.test)?)?;
    if let Some(p) = &a.model_out {
        out.model.save(p)?;
    }
    if let Some(p) = &a.loss_log {
        fs::write(p, out.log.to_csv())?;
    }
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_string_pretty(&out.report.to_json())? + "\n")?;
    }
    print!("{}", out.report.to_table());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    if a.k_min > a.k_max {
        bail!("--k-min must not exceed --k-max");
    }
    let base = FedRunConfig {
        train: a.opts.config(a.seed),
        seed: a.seed,
        feature_dim: 1 << a.opts.feature_bits,
        hash_seed: a.opts.hash_seed,
        ..Default::default()
    };
    let result = sweep_workers(&base, &load(&a.train)?, &load(&a.test)?, a.shards, a.k_min..=a.k_max, a.reps)?;
    match &a.out {
        Some(p) => fs::write(p, result.to_csv())?,
        None => print!("{}", result.to_csv()),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let machine = load(&a.corpus)?;
    let records = read_records(&a.records)?;
    let session = ReviewSession::open(&machine, &records, &a.log)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("invalid --host/--port")?;
    let progress = session.state.progress();
    eprintln!("serving {} sentences ({} done) on http://{addr}", progress.sentences, progress.done);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(pii_forge::review::server::serve(session, addr)).with_context(|| format!("serving on {addr}"))?;
    Ok(())
}
