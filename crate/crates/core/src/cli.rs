//! Command-line front end. Every stage reads and writes files so any of them
//! can be replaced by an external tool.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{resolve, FlagOverrides, PipelineConfig, Preset, RetrieverKind};
use crate::corpus::{self, read_jsonl, write_jsonl, CollectionFormat, ConversationSession, ConversationTurn, Passage};
use crate::enhance::{enhance_all, EnhancementRecord, Enhancer};
use crate::error::{Error, Result};
use crate::fusion::fuse_runs;
use crate::gateway::ResponseCache;
use crate::metrics::evaluate_run;
use crate::prompts::PromptKind;
use crate::retrieval::{build_index, group_run, CachedEmbedder, DenseRetriever, Embedder, HashEmbedder, HttpEmbedder, RankedList, Retriever, SparseRetriever, StoredIndex, VectorIndex};
use crate::rewrite::{read_rewrites, rewrite_all, rewrite_query, write_rewrites, RewriteRecord};
use crate::supervision::{build_ft_dataset, write_ft_records, Ablation, InputHistory, SupervisionInputs};
use crate::text::truncate_back;

#[derive(Debug, Parser)]
#[command(name = "chiq", version, about = "Conversational search: enhance, rewrite, retrieve, fuse, evaluate")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML or JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub retriever: Option<RetrieverKind>,
    #[arg(long, global = true)]
    pub k1: Option<f64>,
    #[arg(long, global = true)]
    pub b: Option<f64>,
    /// Grade at or above which a document counts as relevant.
    #[arg(long, global = true)]
    pub threshold: Option<u32>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub llm_url: Option<String>,
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    #[arg(long, global = true)]
    pub llm_key: Option<String>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Mock rules file; selects the offline backend.
    #[arg(long, global = true)]
    pub mock_rules: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
}

impl GlobalArgs {
    fn overrides(&self) -> FlagOverrides {
        FlagOverrides {
            preset: self.preset,
            seed: self.seed,
            retriever: self.retriever,
            k1: self.k1,
            b: self.b,
            threshold: self.threshold,
            alpha: self.alpha,
            temperature: self.temperature,
            llm_url: self.llm_url.clone(),
            llm_model: self.llm_model.clone(),
            llm_key: self.llm_key.clone(),
            cache_dir: self.cache_dir.clone(),
            mock_rules: self.mock_rules.clone(),
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a BM25 index (and optionally a vector index) from a collection.
    Index {
        #[arg(long)]
        collection: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also embed every passage for dense retrieval.
        #[arg(long)]
        dense: bool,
    },
    /// Run history enhancement and write one record per session.
    Enhance {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Disable a step: QD, RE, PR, TS or HS. Repeatable.
        #[arg(long = "disable", value_parser = parse_step)]
        disable: Vec<PromptKind>,
    },
    /// Rewrite each session's question into a search query.
    Rewrite {
        #[arg(long)]
        sessions: PathBuf,
        /// Enhancement dump; computed on the fly when absent and needed.
        #[arg(long)]
        enhanced: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Configuration label, e.g. `H`, `H+QD+PR` or `all`.
        #[arg(long = "configuration")]
        configuration: Option<String>,
    },
    /// Search the index with rewritten queries and write a TREC run.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        /// Rewrite dump (json-lines) or `query_id<TAB>query` lines (.tsv).
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Fuse two TREC runs.
    Fuse {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value = "fused")]
        tag: String,
    },
    /// Score a TREC run against qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        ndcg_k: Option<usize>,
        #[arg(long)]
        recall_k: Option<usize>,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Build the fine-tuning dataset from LLM-proposed queries.
    Supervise {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        enhanced: Option<PathBuf>,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_enum)]
        history: Option<HistoryArg>,
        #[arg(long, value_parser = parse_ablation)]
        ablate: Option<Ablation>,
        /// Candidate sets with their scores, one per turn.
        #[arg(long)]
        audit_out: Option<PathBuf>,
    },
    /// Interactive session: one question per line, `:reset` or `:quit`.
    Repl {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Print the effective configuration as JSON.
    ConfigDump,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum HistoryArg {
    Original,
    Enhanced,
}

fn parse_step(s: &str) -> std::result::Result<PromptKind, String> {
    match s.to_ascii_uppercase().as_str() {
        "QD" => Ok(PromptKind::Qd),
        "RE" => Ok(PromptKind::Re),
        "PR" => Ok(PromptKind::Pr),
        "TS" => Ok(PromptKind::Ts),
        "HS" => Ok(PromptKind::Hs),
        _ => Err(format!("unknown step {s:?}; expected QD, RE, PR, TS or HS")),
    }
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// One JSON line on stderr.
pub fn error_line(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

/// Parses `argv` (including the program name), runs the command with the
/// process's stdin/stdout and returns the exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    run_with_io(argv, &mut stdin.lock(), &mut stdout.lock(), &mut std::io::stderr())
}

pub fn run_with_io<I, T>(argv: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            let _ = writeln!(err, "{}", error_line("usage", first));
            return 2;
        }
    };
    match execute(&cli, input, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}

fn resolve_config(global: &GlobalArgs) -> Result<PipelineConfig> {
    resolve(global.config.as_deref(), |k| std::env::var(k).ok(), &global.overrides())
}

pub fn execute(cli: &Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let mut config = resolve_config(&cli.global)?;
    let stdout_err = |e: std::io::Error| Error::io("<stdout>", e);
    match &cli.command {
        Command::ConfigDump => out.write_all(config.to_dump_json().as_bytes()).map_err(stdout_err),
        Command::Index { collection, out: dir, dense } => {
            let summary = cmd_index(&config, collection, dir, *dense || config.retriever == RetrieverKind::Dense)?;
            writeln!(out, "{summary}").map_err(stdout_err)
        }
        Command::Enhance { sessions, out: path, disable } => {
            for step in disable {
                config.enhance.steps = config.enhance.steps.without(*step);
            }
            let sessions = corpus::load_sessions(sessions)?;
            let gateway = config.build_gateway()?;
            let records = enhance_all(&gateway, &config.enhance_config(), &sessions)?;
            write_jsonl(&records, path)?;
            writeln!(out, "enhanced {} sessions ({} LLM calls)", records.len(), gateway.call_count()).map_err(stdout_err)
        }
        Command::Rewrite { sessions, enhanced, out: path, configuration } => {
            if let Some(label) = configuration {
                config.rewrite.configuration = label.clone();
            }
            let records = cmd_rewrite(&config, sessions, enhanced.as_deref())?;
            write_rewrites(&records, path)?;
            let fallbacks = records.iter().filter(|r| r.source == crate::rewrite::QuerySource::Fallback).count();
            writeln!(out, "rewrote {} questions ({} fallbacks)", records.len(), fallbacks).map_err(stdout_err)
        }
        Command::Retrieve { index, queries, out: path, k, tag } => {
            let depth = k.unwrap_or(config.retrieval_depth);
            let tag = tag.clone().unwrap_or_else(|| format!("chiq-{}", retriever_name(config.retriever)));
            let lists = cmd_retrieve(&config, index, queries, depth)?;
            let entries: Vec<_> = lists.iter().flat_map(|l| l.to_run_entries(&tag)).collect();
            corpus::write_run(&entries, path)?;
            writeln!(out, "retrieved {} queries", lists.len()).map_err(stdout_err)
        }
        Command::Fuse { run_a, run_b, out: path, depth, tag } => {
            if let Some(d) = depth {
                config.fusion.depth = *d;
            }
            let a = group_run(&corpus::read_run(run_a)?);
            let b = group_run(&corpus::read_run(run_b)?);
            let fused = fuse_runs(&a, &b, &config.fusion)?;
            let entries: Vec<_> = fused.iter().flat_map(|l| l.to_run_entries(tag)).collect();
            corpus::write_run(&entries, path)?;
            writeln!(out, "fused {} queries", fused.len()).map_err(stdout_err)
        }
        Command::Evaluate { run, qrels, ndcg_k, recall_k, json_out } => {
            if let Some(k) = ndcg_k {
                config.evaluation.ndcg_cutoff = *k;
            }
            if let Some(k) = recall_k {
                config.evaluation.recall_cutoff = *k;
            }
            let qrels = corpus::load_qrels(qrels, config.binary_threshold)?;
            let report = evaluate_run(&corpus::read_run(run)?, &qrels, &config.eval_config())?;
            if let Some(p) = json_out {
                std::fs::write(p, report.to_json()).map_err(|e| Error::io(p, e))?;
            }
            out.write_all(report.to_table().as_bytes()).map_err(stdout_err)
        }
        Command::Supervise { sessions, enhanced, index, qrels, out: path, m, history, ablate, audit_out } => {
            if let Some(m) = m {
                config.supervision.m = *m;
            }
            if let Some(h) = history {
                config.supervision.input_history = match h {
                    HistoryArg::Original => InputHistory::Original,
                    HistoryArg::Enhanced => InputHistory::Enhanced,
                };
            }
            if let Some(a) = ablate {
                config.supervision.ablation = *a;
            }
            config.validate()?;
            let stats = cmd_supervise(&config, sessions, enhanced.as_deref(), index, qrels, path, audit_out.as_deref())?;
            writeln!(out, "{}", serde_json::to_string(&stats).expect("stats serialize")).map_err(stdout_err)
        }
        Command::Repl { index, k } => run_repl(&config, index, *k, input, out),
    }
}

fn retriever_name(kind: RetrieverKind) -> &'static str {
    match kind {
        RetrieverKind::Sparse => "sparse",
        RetrieverKind::Dense => "dense",
    }
}

fn embedder(config: &PipelineConfig) -> Result<Box<dyn Embedder>> {
    let inner: Box<dyn Embedder> = match &config.dense.embedder_url {
        Some(url) => {
            let mut e = HttpEmbedder::new(url.clone());
            e.api_key = config.gateway.api_key.clone();
            e.retry = config.gateway.retry.clone();
            e.dim = Some(config.dense.dim);
            Box::new(e)
        }
        None => Box::new(HashEmbedder::new(config.dense.dim)),
    };
    Ok(match (&config.gateway.cache_dir, &config.dense.embedder_url) {
        (Some(dir), Some(_)) => Box::new(CachedEmbedder::new(inner, ResponseCache::new(dir)?)),
        _ => inner,
    })
}

fn cmd_index(config: &PipelineConfig, collection: &Path, dir: &Path, dense: bool) -> Result<String> {
    let passages = corpus::load_collection(collection, CollectionFormat::from_path(collection))?;
    let sparse = build_index(&passages, &config.analyzer, config.truncation.passage_tokens)?;
    let dense = if dense {
        let e = embedder(config)?;
        let entries = passages
            .par_iter()
            .map(|p| Ok((p.doc_id.clone(), e.embed(truncate_back(&p.text, config.truncation.passage_tokens))?)))
            .collect::<Result<Vec<_>>>()?;
        Some((VectorIndex::build(entries, config.dense.similarity)?, e.id()))
    } else {
        None
    };
    let stored = StoredIndex::new(sparse, dense, config.bm25);
    stored.save(dir)?;
    Ok(format!(
        "indexed {} passages, {} terms, avgdl {:.3}",
        stored.manifest.num_docs, stored.manifest.num_terms, stored.manifest.avgdl
    ))
}

struct OpenIndex {
    retriever: Box<dyn Retriever>,
    passages: HashMap<String, String>,
}

fn open_index(config: &PipelineConfig, dir: &Path) -> Result<OpenIndex> {
    let stored = StoredIndex::load(dir)?;
    let passages = (0..stored.sparse.num_docs())
        .map(|i| (stored.sparse.doc_id(i).to_string(), stored.sparse.text(i).to_string()))
        .collect();
    let retriever: Box<dyn Retriever> = match config.retriever {
        RetrieverKind::Sparse => Box::new(SparseRetriever::with_query_analyzer(stored.sparse, config.bm25, &config.analyzer)?),
        RetrieverKind::Dense => {
            let index = stored
                .dense
                .ok_or_else(|| Error::Config(format!("{} has no vector index; rebuild with --dense", dir.display())))?;
            Box::new(DenseRetriever::new(index, embedder(config)?))
        }
    };
    Ok(OpenIndex { retriever, passages })
}

fn load_enhanced(path: Option<&Path>) -> Result<HashMap<String, EnhancementRecord>> {
    let Some(path) = path else {
        return Ok(HashMap::new());
    };
    Ok(read_jsonl::<EnhancementRecord>(path)?
        .into_iter()
        .map(|r| (r.turn_id.clone(), r))
        .collect())
}

fn cmd_rewrite(config: &PipelineConfig, sessions: &Path, enhanced: Option<&Path>) -> Result<Vec<RewriteRecord>> {
    let sessions = corpus::load_sessions(sessions)?;
    let rewrite = config.rewrite_config()?;
    let gateway = config.build_gateway()?;
    let mut enhanced: HashMap<String, _> = load_enhanced(enhanced)?.into_iter().map(|(k, r)| (k, r.enhanced)).collect();
    if rewrite.flags.any() {
        let missing: Vec<ConversationSession> = sessions.iter().filter(|s| !enhanced.contains_key(&s.turn_id)).cloned().collect();
        if !missing.is_empty() {
            let mut ecfg = config.enhance_config();
            ecfg.steps = rewrite.flags.required_steps();
            for r in enhance_all(&gateway, &ecfg, &missing)? {
                enhanced.insert(r.turn_id, r.enhanced);
            }
        }
    }
    rewrite_all(&gateway, &sessions, |id| enhanced.get(id), &rewrite)
}

fn read_queries(path: &Path) -> Result<Vec<(String, String)>> {
    if path.extension().is_some_and(|e| e == "tsv") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.split_once('\t')
                    .map(|(q, t)| (q.to_string(), t.to_string()))
                    .ok_or_else(|| Error::parse(path, i + 1, "expected query_id<TAB>query"))
            })
            .collect();
    }
    Ok(read_rewrites(path)?.into_iter().map(|r| (r.turn_id, r.query)).collect())
}

fn cmd_retrieve(config: &PipelineConfig, index: &Path, queries: &Path, depth: usize) -> Result<Vec<RankedList>> {
    let open = open_index(config, index)?;
    read_queries(queries)?
        .par_iter()
        .map(|(qid, q)| open.retriever.search(qid, q, depth))
        .collect()
}

fn cmd_supervise(
    config: &PipelineConfig,
    sessions: &Path,
    enhanced: Option<&Path>,
    index: &Path,
    qrels: &Path,
    out: &Path,
    audit: Option<&Path>,
) -> Result<crate::supervision::FtStats> {
    let sessions = corpus::load_sessions(sessions)?;
    let qrels = corpus::load_qrels(qrels, config.binary_threshold)?;
    let open = open_index(config, index)?;
    let gateway = config.build_gateway()?;
    let enhanced = load_enhanced(enhanced)?.into_iter().map(|(k, r)| (k, r.enhanced)).collect();
    let lookup = |id: &str| open.passages.get(id).map(|t| Passage { doc_id: id.to_string(), text: t.clone() });
    let inputs = SupervisionInputs {
        gateway: &gateway,
        retriever: open.retriever.as_ref(),
        qrels: &qrels,
        passages: &lookup,
        enhanced: &enhanced,
    };
    let dataset = build_ft_dataset(&inputs, &sessions, &config.supervision_config())?;
    write_ft_records(&dataset.records, out)?;
    if let Some(p) = audit {
        write_jsonl(&dataset.sets, p)?;
    }
    Ok(dataset.stats)
}

/// Words of the top passage kept as the simulated system response.
const REPL_RESPONSE_TOKENS: usize = 64;

/// Line-oriented exploration. Each question is enhanced against the turns so
/// far, rewritten and searched; the top passage becomes the turn's response.
pub fn run_repl(config: &PipelineConfig, index: &Path, k: usize, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let open = open_index(config, index)?;
    let gateway = config.build_gateway()?;
    let enhance = config.enhance_config();
    let rewrite = config.rewrite_config()?;
    let mut turns: Vec<ConversationTurn> = Vec::new();
    let io = |e: std::io::Error| Error::io("<repl>", e);
    let mut line = String::new();
    writeln!(out, "chiq repl: one question per line, :reset clears the session, :quit exits").map_err(io)?;
    loop {
        write!(out, "> ").map_err(io)?;
        out.flush().map_err(io)?;
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            break;
        }
        let question = line.trim();
        match question {
            "" => continue,
            ":quit" | ":q" => break,
            ":reset" => {
                turns.clear();
                writeln!(out, "session cleared").map_err(io)?;
                continue;
            }
            _ => {}
        }
        let session = ConversationSession {
            session_id: "repl".into(),
            turn_id: format!("repl_{}", turns.len() + 1),
            turns: turns.clone(),
            current_question: question.to_string(),
        };
        let eh = Enhancer::new(&gateway, &enhance).enhance_history(&session)?;
        if eh.topic_switched {
            writeln!(out, "  TS: new topic, history truncated to the last turn").map_err(io)?;
        }
        if eh.disambiguated_question != question {
            writeln!(out, "  QD: {}", eh.disambiguated_question).map_err(io)?;
        }
        if let Some(r) = &eh.expanded_last_response {
            writeln!(out, "  RE: {r}").map_err(io)?;
        }
        if let Some(r) = &eh.pseudo_response {
            writeln!(out, "  PR: {r}").map_err(io)?;
        }
        if let Some(s) = &eh.summary {
            writeln!(out, "  HS: {s}").map_err(io)?;
        }
        let q = rewrite_query(&gateway, &session, Some(&eh), &rewrite)?;
        writeln!(out, "  query ({}): {}", if q.source == crate::rewrite::QuerySource::Llm { "llm" } else { "fallback" }, q.text).map_err(io)?;
        let hits = open.retriever.search(&session.turn_id, &q.text, k)?;
        for (rank, h) in hits.hits.iter().enumerate() {
            let text = open.passages.get(&h.doc_id).map_or("", |t| truncate_back(t, 16));
            writeln!(out, "  {:>2}. {} {:.4}  {}", rank + 1, h.doc_id, h.score, text).map_err(io)?;
        }
        let response = hits
            .hits
            .first()
            .and_then(|h| open.passages.get(&h.doc_id))
            .map(|t| truncate_back(t, REPL_RESPONSE_TOKENS).to_string())
            .unwrap_or_default();
        turns.push(ConversationTurn::new(question, response));
    }
    Ok(())
}
