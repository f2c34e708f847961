//! Command-line front end. [`run`] parses arguments, resolves the layered
//! configuration and dispatches; it returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde_json::{json, Value};
use toolverse_core::agent::{run_with_options, AgentConfig, Question, RunOptions, Services, ThoughtMode};
use toolverse_core::augment::{augment_registry, build_rephrase_pool, RephraseSidecar};
use toolverse_core::call::{FunctionCall, ResultStatus};
use toolverse_core::datagen::evaluate::TraceEvalConfig;
use toolverse_core::datagen::export::AugmentConfig;
use toolverse_core::datagen::questgen::{collect_chain, QuestionSource};
use toolverse_core::datagen::review::ReviewKind;
use toolverse_core::datagen::tracegen::{TraceGenConfig, TraceGenServices};
use toolverse_core::datagen::QuestionRecord;
use toolverse_core::eval::compute_metrics;
use toolverse_core::gateway::{GatewayMode, ToolExecutor};
use toolverse_core::graph::{build_tool_graph, sample_tool_chain, ToolGraph};
use toolverse_core::llm::{ChatService, EmbeddingService};
use toolverse_core::registry::Registry;
use toolverse_core::request::Api;
use toolverse_core::toolrag::{build_index, EmbeddingIndex, IndexRetriever};
use toolverse_core::util::{derive_seed, rng_from_seed, sha256_hex};

use crate::config::{self, Layer, RunConfig};
use crate::exec::ParallelExecutor;
use crate::files;
use crate::harness::{self, HarnessConfig, HarnessServices, Protocol};
use crate::ingest;
use crate::pipeline::{self, ExportOptions, QuestGenServices, SampleBook, ToolGenServices, TraceEntry};
use crate::runtime;

#[derive(Debug, Parser)]
#[command(name = "toolverse", version, about = "Tool-using biomedical reasoning agent: registry, retrieval, data generation and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Live,
    Fixture,
    Simulated,
}

impl From<ModeArg> for GatewayMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Live => GatewayMode::Live,
            ModeArg::Fixture => GatewayMode::Fixture,
            ModeArg::Simulated => GatewayMode::Simulated,
        }
    }
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file (default: ./toolverse.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where tool calls go: upstream APIs, recorded cassettes, or a simulating model.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical CPUs, capped by the chat in-flight limit).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub specs: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub cassettes: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub index: Option<PathBuf>,
    /// Directory for traces and other run outputs.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// JSON array of replies used instead of a chat endpoint.
    #[arg(long, global = true, value_name = "FILE")]
    pub chat_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// In live mode, save every response as a cassette.
    #[arg(long, global = true)]
    pub record: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

impl GlobalArgs {
    fn layer(&self) -> Layer {
        let mut l = Layer {
            mode: self.mode.map(Into::into),
            seed: self.seed,
            jobs: self.jobs,
            specs_dir: self.specs.clone(),
            cassette_dir: self.cassettes.clone(),
            index_dir: self.index.clone(),
            out_dir: self.out_dir.clone(),
            ..Layer::default()
        };
        l.chat.script = self.chat_script.clone();
        l.agent.max_steps = self.max_steps;
        l
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tool registry maintenance.
    #[command(subcommand)]
    Tools(ToolsCmd),
    /// Retrieval index.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Answer one question and save its trace.
    Ask(AskArgs),
    /// Data generation pipelines.
    #[command(subcommand)]
    Datagen(DatagenCmd),
    /// Run a benchmark under one evaluation protocol.
    Eval(EvalArgs),
    /// Health check of the upstream APIs.
    Smoke,
}

#[derive(Debug, Subcommand)]
pub enum ToolsCmd {
    /// Load and check every spec of a corpus.
    Validate {
        #[arg(long, value_name = "DIR")]
        dir: Option<PathBuf>,
    },
    /// Judge which tool outputs feed which tool inputs.
    Graph {
        /// Edge cache (JSON lines); verdicts in it are reused.
        #[arg(long, default_value = "graph/edges.jsonl")]
        cache: PathBuf,
        #[arg(long, default_value = "graph/graph.json")]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        judge_script: Option<PathBuf>,
    },
    /// Generate rephrasings of tool names and descriptions.
    Augment {
        #[arg(long, default_value = "augment/rephrasings.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Only these tools (default: all API tools).
        #[arg(long = "tool")]
        tools: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    /// Embed every tool description and save the index.
    Build,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    pub question: String,
    /// Each step is either calls or the answer, with no thought.
    #[arg(long)]
    pub no_thought: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApiArg {
    Openfda,
    Opentargets,
    Monarch,
}

impl ApiArg {
    fn api(self) -> Api {
        match self {
            ApiArg::Openfda => Api::OpenFda,
            ApiArg::Opentargets => Api::OpenTargets,
            ApiArg::Monarch => Api::Monarch,
        }
    }

    fn database(self) -> &'static str {
        match self {
            ApiArg::Openfda => "openFDA drug label",
            ApiArg::Opentargets => "Open Targets",
            ApiArg::Monarch => "Monarch Initiative",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum DatagenCmd {
    /// Generate and check tool specs from API docs, queueing them for review.
    Tools(DatagenToolsArgs),
    /// Generate and filter questions from ingested sources.
    Questions(DatagenQuestionsArgs),
    /// Generate and filter reasoning traces for questions.
    Traces(DatagenTracesArgs),
    /// Decompose accepted traces into step-wise training samples.
    Export(DatagenExportArgs),
}

#[derive(Debug, Args)]
pub struct DatagenToolsArgs {
    #[arg(long, value_name = "FILE", required_unless_present = "promote")]
    pub docs: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "promote")]
    pub api: Option<ApiArg>,
    /// Sample arguments for checks: {"tool": [{...}], "*": [{...}]}.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value = "review/queue.json")]
    pub queue: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub checker_script: Option<PathBuf>,
    /// Add the approved specs of the queue to the corpus and stop.
    #[arg(long)]
    pub promote: bool,
}

#[derive(Debug, Args)]
pub struct DatagenQuestionsArgs {
    /// FDA label dump ({"results": [...]} or an array).
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    /// disease_id,disease_name,drug_name CSV for disease-centered questions.
    #[arg(long, value_name = "FILE")]
    pub associations: Option<PathBuf>,
    /// Tool graph for tool-chain questions.
    #[arg(long, value_name = "FILE")]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub chains: usize,
    #[arg(long, default_value_t = 2)]
    pub chain_length: usize,
    /// Skip drug-centered questions.
    #[arg(long)]
    pub no_drug: bool,
    #[arg(long, default_value = "datagen/questions.jsonl")]
    pub out: PathBuf,
    /// Also queue accepted questions for review.
    #[arg(long, value_name = "FILE")]
    pub queue: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub judge_script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatagenTracesArgs {
    #[arg(long, default_value = "datagen/questions.jsonl")]
    pub questions: PathBuf,
    /// Use only questions approved in this queue.
    #[arg(long, value_name = "FILE")]
    pub queue: Option<PathBuf>,
    #[arg(long, default_value = "datagen/traces.jsonl")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub helper_script: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub judge_script: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    pub solver_steps: usize,
    #[arg(long, default_value_t = 2)]
    pub wrong_answers: usize,
    #[arg(long, default_value_t = 0.9)]
    pub repeat_threshold: f64,
}

#[derive(Debug, Args)]
pub struct DatagenExportArgs {
    #[arg(long, default_value = "datagen/traces.jsonl")]
    pub traces: PathBuf,
    #[arg(long, default_value = "datagen/samples.jsonl")]
    pub out: PathBuf,
    /// Also write ToolRAG training pairs here.
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    /// Drop traces with more steps than this.
    #[arg(long)]
    pub max_steps_filter: Option<usize>,
    /// Rephrasings from `tools augment` applied to tool specs and calls.
    #[arg(long, value_name = "FILE")]
    pub rephrasings: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub extra_tools: usize,
    #[arg(long)]
    pub no_shuffle: bool,
    /// Summarize earliest results until a trace's results fit this many characters.
    #[arg(long)]
    pub budget_chars: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub protocol: Protocol,
    /// Benchmark JSONL; repeat for name-variant sets.
    #[arg(long, required = true)]
    pub benchmark: Vec<PathBuf>,
    #[arg(long, default_value = "eval/report.json")]
    pub out: PathBuf,
    /// JSON array of tool names to evaluate with.
    #[arg(long, value_name = "FILE")]
    pub subset: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub mapper_script: Option<PathBuf>,
    #[arg(long)]
    pub no_thought: bool,
    #[arg(long, value_name = "SECS")]
    pub item_timeout: Option<u64>,
}

/// Parses `args` (program name first) and runs the command: 0 on success,
/// 1 on an operational error, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let mut layer = cli.global.layer();
    if let Command::Eval(a) = &cli.command {
        layer.eval.item_timeout_secs = a.item_timeout;
    }
    let config = RunConfig::load(cli.global.config.as_deref(), layer)?;
    log::debug!("resolved configuration: {config:?}");
    let record = cli.global.record;
    match &cli.command {
        Command::Tools(ToolsCmd::Validate { dir }) => tools_validate(dir.as_deref().unwrap_or(&config.specs_dir)),
        Command::Tools(ToolsCmd::Graph { cache, out, judge_script }) => tools_graph(&config, cache, out, judge_script.as_deref()),
        Command::Tools(ToolsCmd::Augment { out, count, tools }) => tools_augment(&config, out, *count, tools),
        Command::Index(IndexCmd::Build) => index_build(&config),
        Command::Ask(a) => ask(&config, a, record),
        Command::Datagen(DatagenCmd::Tools(a)) => datagen_tools(&config, a, record),
        Command::Datagen(DatagenCmd::Questions(a)) => datagen_questions(&config, a, record),
        Command::Datagen(DatagenCmd::Traces(a)) => datagen_traces(&config, a, record),
        Command::Datagen(DatagenCmd::Export(a)) => datagen_export(&config, a),
        Command::Eval(a) => eval(&config, a, record),
        Command::Smoke => smoke(&config, record),
    }
}

fn tools_validate(dir: &Path) -> Result<()> {
    let report = files::validate_corpus(dir)?;
    for (path, problem) in &report.problems {
        eprintln!("{}: {problem}", path.display());
    }
    if !report.problems.is_empty() {
        bail!("{} problem(s) in {}", report.problems.len(), dir.display());
    }
    println!("{} valid", report.valid);
    Ok(())
}

fn tools_graph(config: &RunConfig, cache_path: &Path, out: &Path, judge_script: Option<&Path>) -> Result<()> {
    let registry = runtime::registry(config)?;
    let main = runtime::chat_service(config, None);
    let judge = match runtime::role_chat(judge_script)? {
        Some(j) => j,
        None => main?,
    };
    let cache = files::load_edge_cache(cache_path)?;
    let build = build_tool_graph(&registry, judge.as_ref(), &cache)?;
    files::append_edges(cache_path, &build.new_records)?;
    files::write_json(out, &build.graph)?;
    for (a, b) in &build.skipped {
        log::warn!("no usable verdict for {a} -> {b}");
    }
    println!(
        "{} tools, {} edges ({} newly judged, {} skipped) -> {}",
        build.graph.nodes.len(),
        build.graph.edges.len(),
        build.new_records.len(),
        build.skipped.len(),
        out.display()
    );
    Ok(())
}

fn tools_augment(config: &RunConfig, out: &Path, count: usize, only: &[String]) -> Result<()> {
    let registry = runtime::registry(config)?;
    let chat = runtime::chat_service(config, None)?;
    let mut sidecar: RephraseSidecar = if out.exists() { files::read_json(out)? } else { RephraseSidecar::new() };
    for spec in registry.api_tools() {
        if !only.is_empty() && !only.contains(&spec.name) {
            continue;
        }
        let pool = build_rephrase_pool(spec, chat.as_ref(), count).with_context(|| format!("rephrasing {}", spec.name))?;
        sidecar.insert(spec.name.clone(), pool);
    }
    files::write_json(out, &sidecar)?;
    println!("{} tools with rephrasings -> {}", sidecar.len(), out.display());
    Ok(())
}

fn index_build(config: &RunConfig) -> Result<()> {
    let registry = runtime::registry(config)?;
    let embedder = runtime::embedder(config);
    let index = build_index(&registry, embedder.as_ref())?;
    files::save_index(&index, &config.index_dir)?;
    println!(
        "{} tools, dimension {}, embedder {} -> {}",
        index.len(),
        index.dimension(),
        index.fingerprint(),
        config.index_dir.display()
    );
    Ok(())
}

/// The saved index, or one built in memory when none is saved.
fn index_or_build(config: &RunConfig, registry: &Registry, embedder: &dyn EmbeddingService) -> Result<EmbeddingIndex> {
    match runtime::index(config, embedder)? {
        Some(ix) => Ok(ix),
        None => {
            log::info!("no index in {}; building one in memory", config.index_dir.display());
            Ok(build_index(registry, embedder)?)
        }
    }
}

fn ask(config: &RunConfig, args: &AskArgs, record: bool) -> Result<()> {
    let registry = runtime::registry(config)?;
    let chat = runtime::chat_service(config, None)?;
    let embedder = runtime::embedder(config);
    let index = index_or_build(config, &registry, embedder.as_ref())?;
    let transport = runtime::transport(config, record);
    let gateway = runtime::gateway(config, &registry, transport.as_deref(), Some(chat.as_ref()));
    let executor = ParallelExecutor::new(gateway, config.jobs);
    let retriever = IndexRetriever {
        index: &index,
        embedder: embedder.as_ref(),
    };
    let services = Services::new(chat.as_ref(), &executor).with_retriever(&retriever);
    let mut agent = config.agent.clone();
    if args.no_thought {
        agent.thought_mode = ThoughtMode::NoThoughts;
    }
    let trace_id = format!("ask-{}", &sha256_hex(format!("{}\n{}", agent.seed, args.question).as_bytes())[..12]);
    let outcome = run_with_options(
        &Question::open(args.question.clone()),
        &registry,
        services,
        &agent,
        &RunOptions {
            trace_id,
            ..Default::default()
        },
    );
    let path = files::write_trace(&config.out_dir.join("traces"), &outcome.trace)?;
    match &outcome.trace.final_answer {
        Some(a) => println!("{a}"),
        None => println!("(no answer: {})", outcome.trace.error.as_deref().unwrap_or("run ended without one")),
    }
    println!("trace: {}", path.display());
    Ok(())
}

fn datagen_tools(config: &RunConfig, args: &DatagenToolsArgs, record: bool) -> Result<()> {
    let mut queue = files::load_review_queue(&args.queue)?;
    if args.promote {
        let added = pipeline::promote_specs(&queue, &config.specs_dir)?;
        println!("{} approved spec(s) added to {}", added.len(), config.specs_dir.display());
        for n in added {
            println!("  {n}");
        }
        return Ok(());
    }
    let (Some(docs_path), Some(api)) = (&args.docs, args.api) else {
        bail!("--docs and --api are required");
    };
    let docs = files::read_text(docs_path)?;
    let registry = runtime::registry(config)?;
    let generator = runtime::chat_service(config, None)?;
    let checker = runtime::role_chat(args.checker_script.as_deref())?;
    let samples: SampleBook = match &args.samples {
        Some(p) => files::read_json(p)?,
        None => SampleBook::default(),
    };
    let transport = runtime::transport(config, record);
    let gateway = runtime::gateway(config, &registry, transport.as_deref(), Some(generator.as_ref()));
    let services = ToolGenServices {
        generator: generator.as_ref(),
        checker: checker.as_deref().unwrap_or(generator.as_ref()),
        gateway: &gateway,
    };
    let report = pipeline::run_toolgen(&docs, api.database(), api.api(), &registry, &services, &samples)?;
    let queued = pipeline::enqueue(&mut queue, ReviewKind::Spec, report.specs.iter().map(|s| (s.name.clone(), s)));
    files::save_review_queue(&args.queue, &queue)?;
    if let Some(p) = &args.report {
        files::write_json(p, &report)?;
    }
    println!(
        "{} capabilities, {} specs passed checks, {} dropped, {} queued for review in {}",
        report.capabilities.len(),
        report.accepted.len(),
        report.dropped.len(),
        queued,
        args.queue.display()
    );
    Ok(())
}

fn chain_sources(
    config: &RunConfig,
    args: &DatagenQuestionsArgs,
    registry: &Registry,
    labels: &[Value],
    executor: &dyn ToolExecutor,
    chat: &dyn ChatService,
) -> Result<Vec<QuestionSource>> {
    let Some(graph_path) = &args.graph else {
        if args.chains > 0 {
            bail!("--chains needs --graph");
        }
        return Ok(Vec::new());
    };
    let graph: ToolGraph = files::read_json(graph_path)?;
    let starts: Vec<&String> = graph
        .nodes
        .iter()
        .filter(|n| registry.get(n).is_some_and(|s| s.argument("drug_name").is_some_and(|a| a.required)))
        .collect();
    let drugs: Vec<String> = labels.iter().filter_map(|l| ingest::label_names(l).into_iter().next()).collect();
    if starts.is_empty() || drugs.is_empty() {
        log::warn!("no tool-chain questions: the graph has no drug-name entry tool or the dump has no named drugs");
        return Ok(Vec::new());
    }
    let mut rng = rng_from_seed(derive_seed(config.seed, "chains"));
    let mut out = Vec::new();
    for k in 0..args.chains {
        let start = starts[rng.random_range(0..starts.len())];
        let drug = &drugs[rng.random_range(0..drugs.len())];
        let chain = sample_tool_chain(&graph, start, args.chain_length, derive_seed(config.seed, &format!("chain/{k}")))?;
        match collect_chain(drug, &chain.tools, registry, executor, chat) {
            Ok(s) => out.push(s),
            Err(e) => log::warn!("chain {k} ({drug}: {}) unusable: {e}", chain.tools.join(" -> ")),
        }
    }
    Ok(out)
}

fn datagen_questions(config: &RunConfig, args: &DatagenQuestionsArgs, record: bool) -> Result<()> {
    let registry = runtime::registry(config)?;
    let all = ingest::load_label_dump(&args.labels)?;
    let (labels, leakage) = ingest::filter_by_year(all, ingest::LEAKAGE_CUTOFF_YEAR);
    eprintln!(
        "labels: {} kept, {} dated after {}, {} undated",
        leakage.kept,
        leakage.after_cutoff,
        ingest::LEAKAGE_CUTOFF_YEAR,
        leakage.undated
    );
    let generator = runtime::chat_service(config, None)?;
    let judge = runtime::role_chat(args.judge_script.as_deref())?;

    let mut sources = Vec::new();
    if !args.no_drug {
        let mut rng = rng_from_seed(derive_seed(config.seed, "label-fields"));
        sources.extend(ingest::drug_sources(&labels, &mut rng));
    }
    if let Some(p) = &args.associations {
        sources.extend(ingest::disease_sources(&ingest::load_associations(p)?, &labels, &registry));
    }
    let transport = runtime::transport(config, record);
    let gateway = runtime::gateway(config, &registry, transport.as_deref(), Some(generator.as_ref()));
    sources.extend(chain_sources(config, args, &registry, &labels, &gateway, generator.as_ref())?);

    let services = QuestGenServices {
        generator: generator.as_ref(),
        judge: judge.as_deref().unwrap_or(generator.as_ref()),
    };
    let summary = pipeline::run_questgen(&sources, &registry, &services, config.seed, config.jobs, &args.out)?;
    if let Some(q) = &args.queue {
        let records: Vec<QuestionRecord> = files::read_jsonl(&args.out)?;
        let mut queue = files::load_review_queue(q)?;
        let n = pipeline::enqueue(&mut queue, ReviewKind::Question, records.iter().map(|r| (r.id.clone(), r)));
        files::save_review_queue(q, &queue)?;
        eprintln!("{n} question(s) queued for review in {}", q.display());
    }
    println!(
        "{} sources, {} questions accepted -> {}, {} rejected -> {}",
        summary.sources,
        summary.accepted,
        args.out.display(),
        summary.rejected,
        pipeline::rejected_path(&args.out).display()
    );
    Ok(())
}

fn datagen_traces(config: &RunConfig, args: &DatagenTracesArgs, record: bool) -> Result<()> {
    let registry = runtime::registry(config)?;
    let queue = args.queue.as_deref().map(files::load_review_queue).transpose()?;
    let records = pipeline::approved_questions(files::read_jsonl(&args.questions)?, queue.as_ref());
    let solver = runtime::chat_service(config, None)?;
    let helper = runtime::role_chat(args.helper_script.as_deref())?;
    let judge = runtime::role_chat(args.judge_script.as_deref())?;
    let embedder = runtime::embedder(config);
    let index = index_or_build(config, &registry, embedder.as_ref())?;
    let retriever = IndexRetriever {
        index: &index,
        embedder: embedder.as_ref(),
    };
    let transport = runtime::transport(config, record);
    let gateway = runtime::gateway(config, &registry, transport.as_deref(), Some(solver.as_ref()));
    let executor = ParallelExecutor::new(gateway, 4);
    let services = TraceGenServices {
        solver: solver.as_ref(),
        helper: helper.as_deref().unwrap_or(solver.as_ref()),
        executor: &executor,
        retriever: &retriever,
        summarizer: None,
    };
    let trace_config = TraceGenConfig {
        max_steps: args.solver_steps,
        max_wrong_answers: args.wrong_answers,
        toolrag_k: config.agent.toolrag_k,
        summarize_threshold_chars: config.agent.summarize_threshold_chars,
        seed: config.seed,
        ..TraceGenConfig::default()
    };
    let eval_config = TraceEvalConfig {
        repeated_thought_threshold: args.repeat_threshold,
    };
    let summary = pipeline::run_tracegen(
        &records,
        &registry,
        &services,
        &trace_config,
        judge.as_deref().unwrap_or(solver.as_ref()),
        &eval_config,
        config.jobs,
        &args.out,
    )?;
    println!(
        "{} questions, {} traces accepted ({} steps) -> {}, {} rejected -> {}",
        summary.questions,
        summary.accepted,
        summary.steps,
        args.out.display(),
        summary.rejected,
        pipeline::rejected_path(&args.out).display()
    );
    Ok(())
}

fn datagen_export(config: &RunConfig, args: &DatagenExportArgs) -> Result<()> {
    let registry = runtime::registry(config)?;
    let entries: Vec<TraceEntry> = files::read_jsonl(&args.traces)?;
    let renamed = match &args.rephrasings {
        Some(p) => {
            let sidecar: RephraseSidecar = files::read_json(p)?;
            Some(augment_registry(&registry, &sidecar, derive_seed(config.seed, "rephrase"))?)
        }
        None => None,
    };
    let summarizer = match args.budget_chars {
        Some(_) => Some(runtime::chat_service(config, None)?),
        None => None,
    };
    let options = ExportOptions {
        augment: AugmentConfig {
            extra_random_tools: args.extra_tools,
            shuffle_tools: !args.no_shuffle,
            seed: config.seed,
        },
        renamed: renamed.as_ref(),
        max_steps_filter: args.max_steps_filter,
        budget: args.budget_chars.zip(summarizer.as_deref()),
    };
    let s = pipeline::run_export(&entries, &registry, &options, config.jobs, &args.out, args.pairs.as_deref())?;
    println!(
        "{} traces ({} within the step filter) -> {} samples in {}",
        s.traces,
        s.exported_traces,
        s.samples,
        args.out.display()
    );
    if let Some(p) = &args.pairs {
        println!("{} retrieval pairs -> {}", s.retrieval_pairs, p.display());
    }
    Ok(())
}

fn set_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn eval(config: &RunConfig, args: &EvalArgs, record: bool) -> Result<()> {
    let full = runtime::registry(config)?;
    let chat = runtime::chat_service(config, None)?;
    let mapper = runtime::role_chat(args.mapper_script.as_deref())?;
    let embedder = runtime::embedder(config);
    let full_index = index_or_build(config, &full, embedder.as_ref())?;
    let (registry, index) = match &args.subset {
        Some(p) => {
            let names: Vec<String> = files::read_json(p)?;
            let (r, i) = harness::apply_subset(&full, Some(&full_index), &names)?;
            (r, i.unwrap_or(full_index))
        }
        None => (full, full_index),
    };
    let transport = runtime::transport(config, record);
    let gateway = runtime::gateway(config, &registry, transport.as_deref(), Some(chat.as_ref()));
    let executor = ParallelExecutor::new(gateway, 4);
    let services = HarnessServices {
        chat: chat.as_ref(),
        summarizer: None,
        mapper: mapper.as_deref(),
        executor: &executor,
        index: Some(&index),
        embedder: Some(embedder.as_ref()),
    };
    let mut agent: AgentConfig = config.agent.clone();
    if args.no_thought {
        agent.thought_mode = ThoughtMode::NoThoughts;
    }
    let stem = set_name(&args.out);
    let harness_config = HarnessConfig {
        agent,
        jobs: config.jobs,
        item_timeout: config.item_timeout,
        trace_dir: Some(args.out.with_file_name(format!("{stem}.traces"))),
    };
    let mut sets = Vec::new();
    for b in &args.benchmark {
        let items = harness::load_benchmark_file(b)?;
        let counts = toolverse_core::eval::family_counts(&items);
        eprintln!("{}: {} items {:?}", b.display(), items.len(), counts);
        let outcomes = harness::run_benchmark(&items, args.protocol, &registry, &services, &harness_config)?;
        sets.push((set_name(b), outcomes));
    }
    let report = compute_metrics(&sets)?;
    files::write_json(&args.out, &report)?;
    let outcomes: Vec<_> = sets.iter().flat_map(|(name, o)| o.iter().map(move |x| json!({"set": name, "outcome": x}))).collect();
    files::write_jsonl(&args.out.with_file_name(format!("{stem}.outcomes.jsonl")), &outcomes)?;
    println!("{}", report.table());
    println!("report: {}", args.out.display());
    Ok(())
}

/// One known-good call per upstream API.
pub fn smoke_calls() -> Vec<FunctionCall> {
    let call = |id: &str, name: &str, args: Value| {
        let Value::Object(m) = args else { unreachable!() };
        FunctionCall::new(id, name, m)
    };
    vec![
        call("smoke-fda", "get_indications", json!({"drug_name": "Bizengri"})),
        call("smoke-ot", "OpenTargets_get_disease_id_description_by_name", json!({"name": "type 2 diabetes mellitus"})),
        call("smoke-monarch", "get_mondo_id_by_disease_name", json!({"query": "Marfan syndrome", "limit": 3, "category": "biolink:Disease"})),
    ]
}

fn smoke(config: &RunConfig, record: bool) -> Result<()> {
    let registry = runtime::registry(config)?;
    let transport = runtime::transport(config, record);
    let gateway = runtime::gateway(config, &registry, transport.as_deref(), None);
    let mut failed = 0;
    for c in smoke_calls() {
        let r = gateway.execute(&c);
        let ok = r.status == ResultStatus::Ok;
        if !ok {
            failed += 1;
        }
        let detail = if ok { String::new() } else { format!(" {}", toolverse_core::util::truncate_chars(&r.payload_text(), 200)) };
        println!("{} {}{}", if ok { "ok  " } else { "FAIL" }, c.tool_name, detail);
    }
    if failed > 0 {
        bail!("{failed} upstream check(s) failed");
    }
    Ok(())
}

pub use config::DEFAULT_CONFIG_FILE;
