//! Command-line driver.
//!
//! Exit codes: 0 success, 1 other failure (unreadable or malformed input),
//! 2 invalid flags, 3 write failure, 4 non-finite loss during training,
//! 5 K mismatch between corpus and checkpoint, 6 unresolvable ids in eval.
//!
//! Output records are JSON lines:
//!
//! * `train --trace`: one header record
//!   `{"record":"header","epochs","batch_size","lr0","seed","k","pairs","lambda","mu","temperature","transform","diversity"}`
//!   then one `{"record":"epoch","epoch","learning_rate","sim_loss","conf_loss","div_loss","total"}`
//!   per epoch, starting with epoch 0 (before any update).
//! * `rank`: one record per query, in query-id order:
//!   `{"direction","query","candidates":[{"id","initial","confidence","final"}]}`;
//!   `confidence` and `final` are `null` for candidates that were not re-ranked.
//! * `eval`: one row per (direction, metric, K, mode):
//!   `{"direction","metric","k","mode","value","queries"}`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceTransform;
use crate::error::Error;
use crate::eval::{evaluate_rankings, Metric, RelevanceMap};
use crate::io::{self, LoadOptions, SyntheticSpec};
use crate::losses::{self, CosineAnnealing, DiversityMode, LossConfig, TrainConfig};
use crate::ranking::{RankOptions, RankingEngine};
use crate::types::{Corpus, PrototypeSet, WeightVector};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_WRITE: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_K_MISMATCH: i32 = 5;
pub const EXIT_UNRESOLVED: i32 = 6;

#[derive(Debug, Parser)]
#[command(
    name = "pecm",
    version,
    about = "Prototype retrieval with confidence re-ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Learn prototype weights on a corpus.
    Train(TrainArgs),
    /// Rank candidates for every query.
    Rank(RankArgs),
    /// Score ranking records against the ground-truth pairing.
    Eval(EvalArgs),
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err("must be a finite number >= 0".into())
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err("must be a finite number > 0".into())
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must be in [0, 1]".into())
    }
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        Ok(_) => Err("must be at least 1".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_parser = at_least_one)]
    pairs: usize,
    #[arg(long, value_parser = at_least_one)]
    classes: usize,
    #[arg(long, value_parser = at_least_one)]
    dim: usize,
    #[arg(long, value_parser = at_least_one)]
    k: usize,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true, value_parser = non_negative)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, value_parser = unit_interval)]
    ambiguity_fraction: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true, value_parser = non_negative)]
    ambiguity_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving images.pecm, reports.pecm and pairing.tsv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write `id<TAB>class<TAB>ambiguous` for every item.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    pairing: PathBuf,
    /// Patch block side for raw image grids.
    #[arg(long, default_value_t = 3, value_parser = at_least_one)]
    group_size: usize,
    /// Prototype count for raw report sentences (defaults to the image K).
    #[arg(long, value_parser = at_least_one)]
    report_k: Option<usize>,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus, Error> {
        io::load_corpus(
            &self.images,
            &self.reports,
            &self.pairing,
            &LoadOptions {
                group_size: self.group_size,
                report_k: self.report_k,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransformArg {
    Raw,
    Shifted,
}

impl From<TransformArg> for ConfidenceTransform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Raw => ConfidenceTransform::Raw,
            TransformArg::Shifted => ConfidenceTransform::Shifted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DiversityArg {
    Verbatim,
    Repulsive,
}

impl From<DiversityArg> for DiversityMode {
    fn from(d: DiversityArg) -> Self {
        match d {
            DiversityArg::Verbatim => DiversityMode::Verbatim,
            DiversityArg::Repulsive => DiversityMode::Repulsive,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true, value_parser = non_negative)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true, value_parser = non_negative)]
    mu: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true, value_parser = positive)]
    temperature: f64,
    #[arg(long, value_enum, default_value = "shifted")]
    transform: TransformArg,
    #[arg(long, value_enum, default_value = "verbatim")]
    diversity: DiversityArg,
    #[arg(long, default_value_t = 30, value_parser = at_least_one)]
    epochs: usize,
    #[arg(long, default_value_t = 32, value_parser = at_least_one)]
    batch_size: usize,
    /// Initial learning rate, cosine-annealed to zero over the epochs.
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true, value_parser = non_negative)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Trace destination (JSON lines); standard output when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Direction {
    /// Image queries against report candidates.
    I2r,
    /// Report queries against image candidates.
    R2i,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Weight checkpoint; uniform weights when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "i2r")]
    direction: Direction,
    /// Stop after the initial global-similarity ranking.
    #[arg(long)]
    no_rerank: bool,
    #[arg(long, value_enum, default_value = "shifted")]
    transform: TransformArg,
    /// Re-rank only the top M initial candidates.
    #[arg(long, value_parser = at_least_one)]
    shortlist: Option<usize>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ranking records produced by `rank`.
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    pairing: PathBuf,
    /// `id<TAB>label` file enabling class-averaged (macro) rows.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10", value_parser = at_least_one)]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "recall")]
    metrics: Vec<Metric>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            Error::KMismatch { .. } => EXIT_K_MISMATCH,
            Error::InvalidSpec(_) => EXIT_USAGE,
            _ => EXIT_OTHER,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn write_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_WRITE, format!("cannot write {}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| write_failure(path, e))
}

/// Standard output or a file.
enum Sink<'a> {
    Stdout(&'a mut (dyn Write + Send)),
    File(PathBuf, BufWriter<File>),
}

impl<'a> Sink<'a> {
    fn open(path: Option<&Path>, stdout: &'a mut (dyn Write + Send)) -> CliResult<Self> {
        match path {
            None => Ok(Sink::Stdout(stdout)),
            Some(p) => {
                let f = File::create(p).map_err(|e| write_failure(p, e))?;
                Ok(Sink::File(p.to_path_buf(), BufWriter::new(f)))
            }
        }
    }

    fn record<T: Serialize>(&mut self, value: &T) -> CliResult {
        let mut line = serde_json::to_string(value)
            .map_err(|e| Failure::new(EXIT_OTHER, format!("serialization failed: {e}")))?;
        line.push('\n');
        let (target, w): (String, &mut dyn Write) = match self {
            Sink::Stdout(w) => ("standard output".into(), &mut **w),
            Sink::File(p, w) => (p.display().to_string(), w),
        };
        w.write_all(line.as_bytes())
            .map_err(|e| Failure::new(EXIT_WRITE, format!("cannot write {target}: {e}")))
    }

    fn finish(self) -> CliResult {
        match self {
            Sink::Stdout(w) => w.flush().map_err(|e| {
                Failure::new(EXIT_WRITE, format!("cannot write standard output: {e}"))
            }),
            Sink::File(p, mut w) => w.flush().map_err(|e| write_failure(&p, e)),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let pool = match crate::thread_pool() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, stdout),
        Command::Rank(a) => rank(a, stdout),
        Command::Eval(a) => eval(a, stdout),
    });
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn synth(a: SynthArgs) -> CliResult {
    let spec = SyntheticSpec {
        n_pairs: a.pairs,
        n_classes: a.classes,
        dim: a.dim,
        k: a.k,
        noise_sigma: a.noise_sigma,
        ambiguity_fraction: a.ambiguity_fraction,
        ambiguity_sigma: a.ambiguity_sigma,
        seed: a.seed,
    };
    let generated = io::generate_synthetic(&spec)?;
    let corpus = &generated.corpus;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| write_failure(&a.out_dir, e))?;
    let images = io::binary::encode_prototype_sets(corpus.images().values())?;
    let reports = io::binary::encode_prototype_sets(corpus.reports().values())?;
    write_file(&a.out_dir.join("images.pecm"), &images)?;
    write_file(&a.out_dir.join("reports.pecm"), &reports)?;
    write_file(
        &a.out_dir.join("pairing.tsv"),
        io::format_pairing(corpus.pairing()).as_bytes(),
    )?;

    if let Some(path) = &a.labels_out {
        let mut text = String::from("# id\tclass\tambiguous\n");
        for (id, class) in &generated.classes {
            let amb = generated.ambiguous.contains(id);
            text.push_str(&format!("{id}\t{class}\t{amb}\n"));
        }
        write_file(path, text.as_bytes())?;
    }
    log::info!(
        "wrote {} pairs ({} ambiguous) to {}",
        spec.n_pairs,
        generated.ambiguous.len() / 2,
        a.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TraceHeader {
    record: &'static str,
    epochs: usize,
    batch_size: usize,
    lr0: f64,
    seed: u64,
    k: usize,
    pairs: usize,
    lambda: f64,
    mu: f64,
    temperature: f64,
    transform: String,
    diversity: String,
}

#[derive(Serialize)]
struct TraceEpoch<'a> {
    record: &'static str,
    #[serde(flatten)]
    values: &'a losses::EpochRecord,
}

fn train(a: TrainArgs, stdout: &mut (dyn Write + Send)) -> CliResult {
    let corpus = a.corpus.load()?;
    let cfg = LossConfig {
        lambda: a.lambda,
        mu: a.mu,
        temperature: a.temperature,
        transform: a.transform.into(),
        diversity: a.diversity.into(),
    };
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        initial_theta: None,
    };
    let outcome = losses::train(&corpus, &cfg, &tc, &CosineAnnealing::new(a.lr))?;

    let checkpoint = io::checkpoint::encode_weights(&outcome.weights);
    write_file(&a.out, checkpoint.as_bytes())?;

    let mut sink = Sink::open(a.trace.as_deref(), stdout)?;
    sink.record(&TraceHeader {
        record: "header",
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr0: a.lr,
        seed: a.seed,
        k: corpus.k(),
        pairs: corpus.matched_pairs().len(),
        lambda: cfg.lambda,
        mu: cfg.mu,
        temperature: cfg.temperature,
        transform: cfg.transform.to_string(),
        diversity: cfg.diversity.to_string(),
    })?;
    for r in &outcome.trace {
        sink.record(&TraceEpoch {
            record: "epoch",
            values: r,
        })?;
    }
    sink.finish()
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRecord {
    id: String,
    initial: f64,
    confidence: Option<f64>,
    #[serde(rename = "final")]
    final_score: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RankRecord {
    direction: Direction,
    query: String,
    candidates: Vec<CandidateRecord>,
}

fn rank(a: RankArgs, stdout: &mut (dyn Write + Send)) -> CliResult {
    let corpus = a.corpus.load().map_err(|e| match e {
        Error::MismatchedK { .. } => Failure::new(EXIT_K_MISMATCH, e.to_string()),
        other => other.into(),
    })?;
    let weights = match &a.checkpoint {
        Some(p) => io::load_weights(p, Some(corpus.k()))?,
        None => WeightVector::uniform(corpus.k())?,
    };
    let (queries, candidates): (Vec<&PrototypeSet>, Vec<&PrototypeSet>) = match a.direction {
        Direction::I2r => (
            corpus.images().values().collect(),
            corpus.reports().values().collect(),
        ),
        Direction::R2i => (
            corpus.reports().values().collect(),
            corpus.images().values().collect(),
        ),
    };
    let engine = RankingEngine::new(candidates, &weights)?;
    let opts = RankOptions {
        rerank: !a.no_rerank,
        transform: a.transform.into(),
        shortlist: a.shortlist,
    };
    let results = engine.rank_all(&queries, &opts)?;

    let mut sink = Sink::open(a.out.as_deref(), stdout)?;
    for r in results {
        let candidates = r
            .reranked
            .into_iter()
            .map(|(id, s)| CandidateRecord {
                id,
                initial: s.initial,
                confidence: Some(s.confidence),
                final_score: Some(s.final_score),
            })
            .chain(
                r.remainder
                    .into_iter()
                    .map(|(id, initial)| CandidateRecord {
                        id,
                        initial,
                        confidence: None,
                        final_score: None,
                    }),
            )
            .collect();
        sink.record(&RankRecord {
            direction: a.direction,
            query: r.query_id,
            candidates,
        })?;
    }
    sink.finish()
}

#[derive(Serialize)]
struct EvalRow {
    direction: Direction,
    metric: Metric,
    k: usize,
    mode: crate::eval::Aggregation,
    value: f64,
    queries: usize,
}

type QueryRanking = (String, Vec<String>);

fn eval(a: EvalArgs, stdout: &mut (dyn Write + Send)) -> CliResult {
    let pairing_edges = io::read_pairing(&a.pairing)?;
    let mut r2i: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut i2r: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in &pairing_edges {
        r2i.entry(e.report_id.clone())
            .or_default()
            .insert(e.image_id.clone());
        i2r.entry(e.image_id.clone())
            .or_default()
            .insert(e.report_id.clone());
    }
    let labels = a.labels.as_ref().map(io::read_labels).transpose()?;

    let file = File::open(&a.ranking).map_err(|e| {
        Failure::new(
            EXIT_OTHER,
            format!("cannot read {}: {e}", a.ranking.display()),
        )
    })?;
    let mut by_direction: BTreeMap<&'static str, (Direction, Vec<QueryRanking>)> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| {
            Failure::new(
                EXIT_OTHER,
                format!("cannot read {}: {e}", a.ranking.display()),
            )
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RankRecord = serde_json::from_str(&line).map_err(|e| {
            Failure::new(
                EXIT_OTHER,
                format!("{} line {}: {e}", a.ranking.display(), idx + 1),
            )
        })?;
        let key = match rec.direction {
            Direction::I2r => "i2r",
            Direction::R2i => "r2i",
        };
        let ids = rec.candidates.into_iter().map(|c| c.id).collect();
        by_direction
            .entry(key)
            .or_insert_with(|| (rec.direction, Vec::new()))
            .1
            .push((rec.query, ids));
    }
    if by_direction.is_empty() {
        return Err(Failure::new(EXIT_OTHER, "ranking file contains no records"));
    }

    let mut sink = Sink::open(a.out.as_deref(), stdout)?;
    for (direction, rankings) in by_direction.into_values() {
        let truth = match direction {
            Direction::I2r => &i2r,
            Direction::R2i => &r2i,
        };
        let mut relevant = BTreeMap::new();
        for (q, _) in &rankings {
            let set = truth.get(q).ok_or_else(|| {
                Failure::new(
                    EXIT_UNRESOLVED,
                    format!("query {q:?} does not appear in {}", a.pairing.display()),
                )
            })?;
            relevant.insert(q.clone(), set.clone());
        }
        let mut map = RelevanceMap::new(relevant)?;
        if let Some(labels) = &labels {
            map = map.with_labels(labels.clone());
        }
        let rows = evaluate_rankings(&rankings, &map, &a.metrics, &a.k).map_err(|e| match e {
            Error::InvalidInput(m) => Failure::new(EXIT_UNRESOLVED, m),
            other => other.into(),
        })?;
        for row in rows {
            sink.record(&EvalRow {
                direction,
                metric: row.metric,
                k: row.k,
                mode: row.mode,
                value: row.value,
                queries: row.queries,
            })?;
        }
    }
    sink.finish()
}
