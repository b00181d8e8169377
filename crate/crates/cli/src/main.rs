//! `erkit`: extraction, indexing, search, evaluation and test-collection building.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use erkit::collection::{
    collection_stats, load_tables_dir, read_qrels, read_queries, write_qrels, write_queries, CollectionError,
};
use erkit::corpus::{CorpusError, OnError};
use erkit::erindex::{build_index, load_index, save_index, IndexError};
use erkit::evaluation::{evaluate, read_run, relevant_sets, EvalError, MatchMode};
use erkit::pipeline::{
    extract_corpus, generate_collection, parse_queries, read_unit_dump, search_to_run, write_unit_dump, EngineConfig,
};
use erkit::retrieval::{Model, Orientation};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "erkit",
    version,
    about = "Entity-relationship retrieval and test-collection toolkit"
)]
struct Cli {
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON engine config; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment an annotated corpus and dump its extraction units.
    Extract(ExtractArgs),
    /// Build a persisted E-R index from a corpus or an extraction dump.
    Index(IndexArgs),
    /// Answer relational queries and write a run file.
    Search(SearchArgs),
    /// Score a run file against tuple judgments.
    Eval(EvalArgs),
    /// Sample relational tables and generate query stubs with judgments.
    GenCollection(GenArgs),
    /// Report query-collection statistics.
    Stats(StatsArgs),
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Skip malformed records instead of failing.
    #[arg(long)]
    skip_errors: bool,
    /// Drop pairs separated by more than this many tokens.
    #[arg(long)]
    max_separation: Option<usize>,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "input")]
struct IndexInput {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Extraction dump (units.jsonl) written by `extract`.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    input: IndexInput,
    #[arg(long)]
    index_dir: PathBuf,
    #[arg(long)]
    skip_errors: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Lm,
    Sdm,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    Strict,
    Either,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Ordered,
    Unordered,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    mu: Option<f64>,
    /// SDM weights, e.g. 0.85,0.1,0.05.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Unordered window width in tokens.
    #[arg(long)]
    window: Option<usize>,
    /// Groups kept per sub-query.
    #[arg(long)]
    depth: Option<usize>,
    /// Tuples written per query.
    #[arg(long)]
    run_depth: Option<usize>,
    #[arg(long, value_enum)]
    orientation: Option<OrientationArg>,
    /// Tuple scoring weights, one per sub-query.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value = "erkit")]
    tag: String,
    /// Write LETOR features to features.txt.
    #[arg(long)]
    features: bool,
    /// Judgments used to label feature lines.
    #[arg(long)]
    qrels: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value = "ordered")]
    mode: MatchArg,
    /// Write the TSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    tables: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    target: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Entities per generated tuple (2 or 3).
    #[arg(long)]
    arity: Option<usize>,
    #[arg(long)]
    max_similarity: Option<f64>,
    #[arg(long)]
    min_linked_ratio: Option<f64>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Print JSON instead of TSV.
    #[arg(long)]
    json: bool,
}

/// Error with its exit status: 1 for invalid input, 2 for I/O or usage problems.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn io_failure(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => io_failure(e),
            _ => invalid(e),
        }
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Io { .. } => io_failure(e),
            _ => invalid(e),
        }
    }
}

impl From<CollectionError> for Failure {
    fn from(e: CollectionError) -> Self {
        match e {
            CollectionError::Io { .. } => io_failure(e),
            _ => invalid(e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => io_failure(e),
            _ => invalid(e),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, Failure> {
    let Some(path) = path else {
        return Ok(EngineConfig::default());
    };
    let raw = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(io_failure)?;
    serde_json::from_str(&raw)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(invalid)
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(io_failure)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io_failure)
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text)
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(io_failure)
}

fn record_path(config: &mut EngineConfig, name: &str, path: &Path) {
    config.paths.insert(name.into(), path.display().to_string());
}

fn cmd_extract(args: ExtractArgs, mut config: EngineConfig) -> CmdResult {
    if args.skip_errors {
        config.ingest.on_error = OnError::Skip;
    }
    if args.max_separation.is_some() {
        config.extraction.max_separation = args.max_separation;
    }
    record_path(&mut config, "corpus", &args.corpus);
    let ext = extract_corpus(&args.corpus, &config.ingest, &config.extraction)?;
    for e in &ext.skipped {
        eprintln!("warning: skipped {e}");
    }
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("units.jsonl");
    let file = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(io_failure)?;
    let mut w = BufWriter::new(file);
    write_unit_dump(&mut w, &ext.units)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io_failure)?;
    write_json(&args.out_dir.join("extraction_stats.json"), &ext.stats)?;
    write_json(&args.out_dir.join("effective_config.json"), &config)?;
    println!("documents\t{}", ext.documents);
    println!("sentences\t{}", ext.stats.sentences);
    println!("ENTITY\t{}", ext.stats.entity_units);
    println!("PAIR\t{}", ext.stats.pair_units);
    Ok(())
}

fn cmd_index(args: IndexArgs, mut config: EngineConfig) -> CmdResult {
    if args.skip_errors {
        config.ingest.on_error = OnError::Skip;
    }
    let units = match (&args.input.corpus, &args.input.dump) {
        (Some(corpus), _) => {
            record_path(&mut config, "corpus", corpus);
            let ext = extract_corpus(corpus, &config.ingest, &config.extraction)?;
            for e in &ext.skipped {
                eprintln!("warning: skipped {e}");
            }
            ext.units
        }
        (None, Some(dump)) => {
            record_path(&mut config, "dump", dump);
            read_unit_dump(open(dump)?)
                .with_context(|| format!("reading {}", dump.display()))
                .map_err(invalid)?
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let index = build_index(units, &config.index)?;
    let manifest = save_index(&index, &args.index_dir)?;
    write_json(&args.index_dir.join("effective_config.json"), &config)?;
    println!(
        "ENTITY\t{} units\t{} groups",
        manifest.entity.units, manifest.entity.groups
    );
    println!("PAIR\t{} units\t{} groups", manifest.pair.units, manifest.pair.groups);
    Ok(())
}

fn cmd_search(args: SearchArgs, mut config: EngineConfig) -> CmdResult {
    let s = &mut config.scoring;
    if let Some(m) = args.model {
        s.model = match m {
            ModelArg::Lm => Model::Lm,
            ModelArg::Sdm => Model::Sdm,
        };
    }
    if let Some(mu) = args.mu {
        s.mu = mu;
    }
    if let Some(l) = &args.lambda {
        s.sdm_weights = l
            .as_slice()
            .try_into()
            .map_err(|_| invalid(anyhow!("--lambda takes 3 weights, got {}", l.len())))?;
    }
    if let Some(w) = args.window {
        s.unordered_window = w;
    }
    if let Some(d) = args.depth {
        s.candidate_depth = d;
    }
    if let Some(d) = args.run_depth {
        s.run_depth = d;
    }
    if let Some(o) = args.orientation {
        s.orientation = match o {
            OrientationArg::Strict => Orientation::Strict,
            OrientationArg::Either => Orientation::Either,
        };
    }
    if args.weights.is_some() {
        s.rerank_weights = args.weights.clone();
    }
    s.validate().map_err(invalid)?;
    record_path(&mut config, "index", &args.index);
    record_path(&mut config, "queries", &args.queries);

    let index = load_index(&args.index)?;
    let records = read_queries(open(&args.queries)?, &args.queries.display().to_string())?;
    let (queries, bad) = parse_queries(&records, &config);
    if let Some(e) = bad.first() {
        return Err(invalid(anyhow!("{}: {e}", args.queries.display())));
    }
    let relevant = match &args.qrels {
        Some(p) => {
            record_path(&mut config, "qrels", p);
            Some(relevant_sets(&read_qrels(open(p)?, &p.display().to_string())?))
        }
        None => None,
    };
    let out = search_to_run(&index, &queries, &config.scoring, &args.tag, relevant.as_ref()).map_err(invalid)?;
    create_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("run.txt"), &out.run)?;
    if args.features || args.qrels.is_some() {
        write_file(&args.out_dir.join("features.txt"), &out.features)?;
    }
    write_json(&args.out_dir.join("effective_config.json"), &config)?;
    for (qid, n) in &out.tuples_per_query {
        println!("{qid}\t{n}");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let run = read_run(open(&args.run)?, &args.run.display().to_string())?;
    let qrels = read_qrels(open(&args.qrels)?, &args.qrels.display().to_string())?;
    let mode = match args.mode {
        MatchArg::Ordered => MatchMode::Ordered,
        MatchArg::Unordered => MatchMode::Unordered,
    };
    let report = evaluate(&run, &qrels, &args.k, mode)?;
    if !report.unjudged.is_empty() {
        eprintln!(
            "warning: run queries without judgments (excluded): {}",
            report.unjudged.join(", ")
        );
    }
    if !report.missing_from_run.is_empty() {
        eprintln!(
            "warning: judged queries missing from the run (scored 0): {}",
            report.missing_from_run.join(", ")
        );
    }
    let tsv = report.to_tsv();
    match &args.out {
        Some(p) => write_file(p, tsv),
        None => {
            print!("{tsv}");
            Ok(())
        }
    }
}

fn cmd_gen_collection(args: GenArgs, mut config: EngineConfig) -> CmdResult {
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let g = &mut config.generator;
    if let Some(a) = args.arity {
        g.arity = a;
    }
    if let Some(m) = args.max_similarity {
        g.max_similarity = m;
    }
    if let Some(r) = args.min_linked_ratio {
        g.min_linked_ratio = r;
    }
    if !(2..=3).contains(&config.generator.arity) {
        return Err(invalid(anyhow!("arity must be 2 or 3, got {}", config.generator.arity)));
    }
    record_path(&mut config, "tables", &args.tables);
    let tables = load_tables_dir(&args.tables)?;
    let out = generate_collection(&tables, args.target, config.seed, &config.generator).map_err(invalid)?;

    create_dir(&args.out_dir)?;
    let mut buf = Vec::new();
    write_queries(&mut buf, &out.queries).expect("in-memory write");
    write_file(&args.out_dir.join("queries.jsonl"), &buf)?;
    buf.clear();
    write_qrels(&mut buf, &out.qrels).expect("in-memory write");
    write_file(&args.out_dir.join("qrels.txt"), &buf)?;
    let stubs: String = out
        .stubs
        .iter()
        .map(|s| serde_json::to_string(s).expect("serializable") + "\n")
        .collect();
    write_file(&args.out_dir.join("annotation_stubs.jsonl"), stubs)?;
    write_json(&args.out_dir.join("sampling_report.json"), &out.report)?;
    write_json(&args.out_dir.join("effective_config.json"), &config)?;
    if out.report.shortfall > 0 {
        eprintln!(
            "warning: requested {} tables but only {} qualified ({} eligible, {} rejected as similar)",
            out.report.requested,
            out.report.selected.len(),
            out.report.eligible,
            out.report.rejected_similar
        );
    }
    println!("queries\t{}", out.queries.len());
    println!("judgments\t{}", out.qrels.len());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> CmdResult {
    let queries = read_queries(open(&args.queries)?, &args.queries.display().to_string())?;
    let qrels = read_qrels(open(&args.qrels)?, &args.qrels.display().to_string())?;
    let known: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    let unknown: HashSet<&str> = qrels
        .iter()
        .map(|r| r.query_id.as_str())
        .filter(|q| !known.contains(q))
        .collect();
    if !unknown.is_empty() {
        let mut ids: Vec<&str> = unknown.into_iter().collect();
        ids.sort_unstable();
        eprintln!("warning: judgments for unknown queries ignored: {}", ids.join(", "));
    }
    let report = collection_stats(&queries, &qrels);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    } else {
        print!("{}", report.to_tsv());
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        config.index.threads = t;
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(io_failure)?;
    }
    match cli.command {
        Command::Extract(a) => cmd_extract(a, config),
        Command::Index(a) => cmd_index(a, config),
        Command::Search(a) => cmd_search(a, config),
        Command::Eval(a) => cmd_eval(a),
        Command::GenCollection(a) => cmd_gen_collection(a, config),
        Command::Stats(a) => cmd_stats(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            // Library errors already embed their cause in the message.
            let mut msg = f.error.to_string();
            for cause in f.error.chain().skip(1) {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    msg.push_str(": ");
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(f.code)
        }
    }
}
