//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 partial (some turns or chunks failed), 2 usage or
//! input error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::agent::{run_sessions, Exchange, SessionRun, TurnResult};
use crate::chunker::{
    chunk_document_detailed, default_merge_grid, default_seg_grid, grid_search_thresholds, similarity_matrix,
};
use crate::corpus::{load_dev_documents, load_norm_docs, load_sessions, read_jsonl, write_jsonl, CorpusFormat, LabelMapping};
use crate::error::{Error, Result};
use crate::eval::{
    annotator_agreement, baseline_matrix, default_matrix, parse_matrix, run_ablation_suite, score_results, AccuracyMode,
    EvalReport, IndexChoice,
};
use crate::model::{DialogueSession, PipelineConfig};
use crate::providers::{build_models, MockScript, Models, ProviderKind};
use crate::retrieval::{index_documents, ChunkingMethod, NormIndex, NormStore};

const EXIT_OK: i32 = 0;
const EXIT_PARTIAL: i32 = 1;
const EXIT_INPUT: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "dialnorm", version, about = "Retrieval-grounded social norm classification for dialogue")]
struct Cli {
    /// Pipeline configuration file (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model backend; overrides `provider.kind` from the config file.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderArg>,
    /// Scripted replies for the mock chat model (JSON).
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Remote,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk norm documents, extract chunk attributes and write an index.
    Chunk(ChunkArgs),
    /// Classify every turn of a corpus.
    Classify(ClassifyArgs),
    /// Score a prediction file against corpus gold labels.
    Eval(EvalArgs),
    /// Run the ablation matrix over a corpus.
    Ablate(AblateArgs),
    /// Grid-search chunking thresholds on a dev set with gold boundaries.
    Tune(TuneArgs),
    /// Pairwise Cohen's kappa between corpus annotators.
    Agreement(AgreementArgs),
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Corpus file, one turn per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Input schema.
    #[arg(long, value_enum, default_value = "minds-jsonl")]
    format: FormatArg,
    /// Label mapping for socialdial input; defaults to the shipped table.
    #[arg(long)]
    mapping: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    MindsJsonl,
    SocialdialJsonl,
}

#[derive(Args, Debug)]
struct ChunkArgs {
    /// Directory of .txt / .md norm documents.
    #[arg(long)]
    docs: PathBuf,
    /// Index file to write.
    #[arg(long)]
    out: PathBuf,
    /// Join threshold for consecutive sentences.
    #[arg(long)]
    eps_seg: Option<f64>,
    /// Merge threshold for adjacent cluster means.
    #[arg(long)]
    eps_merge: Option<f64>,
    /// Uniform chunks of W sentences instead of similarity clustering.
    #[arg(long, value_name = "W", conflicts_with_all = ["eps_seg", "eps_merge"])]
    fixed_split: Option<usize>,
    /// Write each document's sentence similarity matrix as CSV here.
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Chunk index; required unless --no-docs.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Prediction file to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Classify without retrieved norm chunks.
    #[arg(long)]
    no_docs: bool,
    /// Do not thread feedback from one turn into the next.
    #[arg(long)]
    no_feedback: bool,
    /// Show the model only the latest utterance.
    #[arg(long)]
    no_history: bool,
    /// Retrieve by whole-window embedding instead of the four attributes.
    #[arg(long)]
    no_attributes: bool,
    /// Shortlist size after the mean-score filter.
    #[arg(long)]
    top_n: Option<usize>,
    /// Longest lookback in turns.
    #[arg(long)]
    l_max: Option<usize>,
    /// Enable positional weighting with this decay.
    #[arg(long)]
    decay: Option<f64>,
    /// Write every prompt and reply to this file (JSON lines).
    #[arg(long, value_name = "FILE")]
    dump_transcripts: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Score only the first predicted category of each turn.
    #[arg(long)]
    top1: bool,
    /// Append published reference results to the report.
    #[arg(long)]
    with_reference: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction file written by `classify`.
    #[arg(long)]
    predictions: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    report: ReportArgs,
    /// Also write the report as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Index built with similarity clustering.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Index built with --fixed-split, for the fixed-split row.
    #[arg(long)]
    fixed_index: Option<PathBuf>,
    /// Norm documents for building the fixed-split index when
    /// --fixed-index is not given.
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Custom matrix: JSON list of {"name", "config"} overrides.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Add the no-docs prompting baselines.
    #[arg(long)]
    with_baselines: bool,
    /// Directory for per-configuration predictions and the report.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    report_json: Option<PathBuf>,
    #[command(flatten)]
    report: ReportArgs,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct TuneArgs {
    /// Dev documents with gold boundaries (JSON lines).
    #[arg(long)]
    dev: PathBuf,
    /// Comma-separated segmentation thresholds.
    #[arg(long, value_delimiter = ',')]
    seg_grid: Option<Vec<f64>>,
    /// Comma-separated merge thresholds.
    #[arg(long, value_delimiter = ',')]
    merge_grid: Option<Vec<f64>>,
    /// Store the chosen thresholds in this config file.
    #[arg(long)]
    write_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AgreementArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(p) = cli.provider {
        cfg.provider.kind = match p {
            ProviderArg::Mock => ProviderKind::Mock,
            ProviderArg::Remote => ProviderKind::RemoteChatApi,
        };
    }
    match &cli.command {
        Command::Chunk(a) => cmd_chunk(cli, cfg, a),
        Command::Classify(a) => cmd_classify(cli, cfg, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(cli, cfg, a),
        Command::Tune(a) => cmd_tune(cfg, a),
        Command::Agreement(a) => cmd_agreement(a),
    }
}

/// Reads a config file; errors name the offending field.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let cfg: PipelineConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        Error::Config {
            field: if field == "." { "(root)".into() } else { field },
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_script(path: Option<&Path>) -> Result<Option<MockScript>> {
    path.map(|p| {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::input(p, Some(e.line()), e.to_string()))
    })
    .transpose()
}

fn load_corpus(a: &CorpusArgs) -> Result<Vec<DialogueSession>> {
    let format = match a.format {
        FormatArg::MindsJsonl => CorpusFormat::MindsJsonl,
        FormatArg::SocialdialJsonl => CorpusFormat::SocialdialJsonl,
    };
    let mapping = a.mapping.as_deref().map(LabelMapping::load).transpose()?;
    load_sessions(&a.corpus, format, mapping.as_ref())
}

/// Loads an index and checks it against the run's embedding dimension.
fn load_index(path: &Path, models: Models<'_>) -> Result<NormIndex> {
    let index = NormIndex::load(path)?;
    let found = index.dimension();
    let expected = models.embedder.dimension();
    if found != expected {
        return Err(Error::input(
            path,
            None,
            format!("index embeddings have dimension {found} but the configured embedder produces {expected}"),
        ));
    }
    Ok(index)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_chunk(cli: &Cli, mut cfg: PipelineConfig, a: &ChunkArgs) -> Result<i32> {
    if let Some(x) = a.eps_seg {
        cfg.eps_seg = x;
    }
    if let Some(x) = a.eps_merge {
        cfg.eps_merge = x;
    }
    if let Some(w) = a.fixed_split {
        cfg.fixed_window = w;
        cfg.use_semantic_chunking = false;
    }
    cfg.validate()?;
    let docs = load_norm_docs(&a.docs)?;
    let (chat, embedder) = build_models(&cfg.provider, load_script(cli.mock_script.as_deref())?)?;
    let models = Models::new(chat.as_ref(), embedder.as_ref());
    if let Some(dir) = &a.heatmap_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (doc_id, text) in &docs {
            let detailed = chunk_document_detailed(doc_id, text, models.embedder, cfg.eps_seg, cfg.eps_merge)?;
            let csv = similarity_matrix(&detailed.embeddings)?.to_csv();
            write_text(&dir.join(format!("{doc_id}.csv")), &csv)?;
        }
    }
    let chunking = if cfg.use_semantic_chunking {
        ChunkingMethod::Semantic {
            eps_seg: cfg.eps_seg,
            eps_merge: cfg.eps_merge,
        }
    } else {
        ChunkingMethod::Fixed {
            window_sentences: cfg.fixed_window,
        }
    };
    let built = index_documents(&docs, chunking, models, &cfg.call_options(), a.jobs)?;
    ensure_parent(&a.out)?;
    built.index.save(&a.out)?;
    println!(
        "indexed {} chunks from {} documents into {}",
        built.index.len(),
        docs.len(),
        a.out.display()
    );
    for (id, e) in &built.failures {
        eprintln!("chunk {id} skipped: {e}");
    }
    Ok(if built.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    session_id: &'a str,
    seq: usize,
    #[serde(flatten)]
    exchange: &'a Exchange,
}

fn write_transcripts(path: &Path, runs: &[SessionRun]) -> Result<()> {
    let lines: Vec<TranscriptLine<'_>> = runs
        .iter()
        .flat_map(|r| {
            r.transcript.iter().enumerate().map(|(seq, exchange)| TranscriptLine {
                session_id: &r.session_id,
                seq,
                exchange,
            })
        })
        .collect();
    ensure_parent(path)?;
    write_jsonl(path, &lines)
}

fn cmd_classify(cli: &Cli, mut cfg: PipelineConfig, a: &ClassifyArgs) -> Result<i32> {
    if a.no_docs {
        cfg.use_docs = false;
    }
    if a.no_feedback {
        cfg.use_feedback = false;
    }
    if a.no_history {
        cfg.use_history = false;
    }
    if a.no_attributes {
        cfg.use_attributes = false;
    }
    if let Some(n) = a.top_n {
        cfg.top_n = n;
    }
    if let Some(l) = a.l_max {
        cfg.l_max = l;
    }
    if let Some(d) = a.decay {
        cfg.decay_lambda = d;
        cfg.positional_weighting = true;
    }
    cfg.validate()?;
    let sessions = load_corpus(&a.corpus)?;
    let (chat, embedder) = build_models(&cfg.provider, load_script(cli.mock_script.as_deref())?)?;
    let models = Models::new(chat.as_ref(), embedder.as_ref());
    let index = match (&a.index, cfg.use_docs) {
        (Some(p), true) => Some(load_index(p, models)?),
        (None, true) => {
            return Err(Error::Config {
                field: "index".into(),
                message: "an --index is required unless --no-docs is given".into(),
            })
        }
        (_, false) => None,
    };
    let store = index.as_ref().map(|i| i as &dyn NormStore);
    let runs: Vec<SessionRun> = run_sessions(&sessions, store, &cfg, models, a.jobs, a.dump_transcripts.is_some())
        .into_iter()
        .collect::<Result<_>>()?;
    let results: Vec<&TurnResult> = runs.iter().flat_map(|r| &r.turns).collect();
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, results.iter().copied())?;
    if let Some(t) = &a.dump_transcripts {
        write_transcripts(t, &runs)?;
    }
    let failed: usize = runs.iter().map(SessionRun::failed_turns).sum();
    let complete = runs.iter().filter(|r| r.failed_turns() == 0).count();
    println!(
        "classified {} turns in {} sessions ({failed} failed) -> {}",
        results.len(),
        runs.len(),
        a.out.display()
    );
    Ok(if failed == 0 || complete > 0 { EXIT_OK } else { EXIT_PARTIAL })
}

fn accuracy_mode(r: &ReportArgs) -> AccuracyMode {
    if r.top1 {
        AccuracyMode::Top1
    } else {
        AccuracyMode::SetIntersection
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let sessions = load_corpus(&a.corpus)?;
    let results: Vec<TurnResult> = read_jsonl(&a.predictions)?.into_iter().map(|(_, r)| r).collect();
    if results.is_empty() {
        return Err(Error::input(&a.predictions, None, "prediction file is empty"));
    }
    let name = a
        .predictions
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("predictions");
    let row = score_results(name, &results, &sessions, accuracy_mode(&a.report))?;
    let mut report = EvalReport {
        mode: accuracy_mode(&a.report),
        rows: vec![row],
        reference: Vec::new(),
    };
    if a.report.with_reference {
        report = report.with_reference();
    }
    print!("{}", report.render_text());
    if let Some(p) = &a.json_out {
        write_text(p, &report.to_json()?)?;
    }
    Ok(EXIT_OK)
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

fn cmd_ablate(cli: &Cli, cfg: PipelineConfig, a: &AblateArgs) -> Result<i32> {
    let sessions = load_corpus(&a.corpus)?;
    let mut configs = match &a.matrix {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_matrix(&text, &cfg).map_err(|e| Error::input(p, None, e.to_string()))?
        }
        None => default_matrix(&cfg),
    };
    if a.with_baselines {
        configs.extend(baseline_matrix(&cfg));
    }
    let (chat, embedder) = build_models(&cfg.provider, load_script(cli.mock_script.as_deref())?)?;
    let models = Models::new(chat.as_ref(), embedder.as_ref());
    let semantic = a.index.as_deref().map(|p| load_index(p, models)).transpose()?;
    let fixed = match (&a.fixed_index, &a.docs) {
        (Some(p), _) => Some(load_index(p, models)?),
        (None, Some(dir)) if configs.iter().any(|c| c.index_choice() == IndexChoice::Fixed) => {
            let docs = load_norm_docs(dir)?;
            let method = ChunkingMethod::Fixed {
                window_sentences: cfg.fixed_window,
            };
            let built = index_documents(&docs, method, models, &cfg.call_options(), a.jobs)?;
            for (id, e) in &built.failures {
                eprintln!("fixed-split chunk {id} skipped: {e}");
            }
            Some(built.index)
        }
        _ => None,
    };
    let mode = accuracy_mode(&a.report);
    let (mut report, runs) = run_ablation_suite(
        &sessions,
        semantic.as_ref().map(|i| i as &dyn NormStore),
        fixed.as_ref().map(|i| i as &dyn NormStore),
        &configs,
        models,
        mode,
        a.jobs,
    )?;
    if a.report.with_reference {
        report = report.with_reference();
    }
    let text = report.render_text();
    print!("{text}");
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for run in &runs {
            let turns: Vec<&TurnResult> = run.sessions.iter().flat_map(|s| &s.turns).collect();
            write_jsonl(&dir.join(format!("{}.jsonl", slug(&run.config.name))), turns.iter().copied())?;
        }
        write_text(&dir.join("report.txt"), &text)?;
        write_text(&dir.join("report.json"), &report.to_json()?)?;
    }
    if let Some(p) = &a.report_json {
        write_text(p, &report.to_json()?)?;
    }
    let failed: usize = report.rows.iter().map(|r| r.failed_turns).sum();
    Ok(if failed == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

fn cmd_tune(cfg: PipelineConfig, a: &TuneArgs) -> Result<i32> {
    let seg = a.seg_grid.clone().unwrap_or_else(default_seg_grid);
    let merge = a.merge_grid.clone().unwrap_or_else(default_merge_grid);
    if seg.is_empty() || merge.is_empty() {
        return Err(Error::EmptyInput("threshold grid"));
    }
    let docs = load_dev_documents(&a.dev)?;
    if docs.iter().all(|d| d.boundaries.is_empty()) {
        return Err(Error::input(&a.dev, None, "dev set has no gold boundaries"));
    }
    let (_, embedder) = build_models(&cfg.provider, None)?;
    let best = grid_search_thresholds(&docs, embedder.as_ref(), &seg, &merge)?;
    println!(
        "eps_seg={} eps_merge={} boundary_f1={:.4}",
        best.eps_seg, best.eps_merge, best.boundary_f1
    );
    if let Some(p) = &a.write_config {
        let mut out = if p.exists() { load_config(Some(p))? } else { cfg };
        out.eps_seg = best.eps_seg;
        out.eps_merge = best.eps_merge;
        write_text(p, &(serde_json::to_string_pretty(&out)? + "\n"))?;
    }
    Ok(EXIT_OK)
}

fn cmd_agreement(a: &AgreementArgs) -> Result<i32> {
    let sessions = load_corpus(&a.corpus)?;
    let pairs = annotator_agreement(&sessions);
    if pairs.is_empty() {
        println!("no annotator pair shares a turn");
        return Ok(EXIT_OK);
    }
    for p in &pairs {
        println!("{} vs {}: kappa={:.4} over {} turns", p.annotator_a, p.annotator_b, p.kappa, p.turns);
    }
    let mean = pairs.iter().map(|p| p.kappa).sum::<f64>() / pairs.len() as f64;
    println!("mean kappa={mean:.4}");
    Ok(EXIT_OK)
}
