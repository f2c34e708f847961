//! Benchmark runs: items on a bounded worker pool, each under its own
//! deadline, with traces written per item as they finish.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toolverse_core::agent::{AgentConfig, Services};
use toolverse_core::eval::{evaluate_description_item, evaluate_mc_item, evaluate_open_item, BenchmarkItem, EvalOutcome, Family};
use toolverse_core::gateway::ToolExecutor;
use toolverse_core::llm::{ChatService, EmbeddingService};
use toolverse_core::registry::{Registry, RegistryError};
use toolverse_core::toolrag::{EmbeddingIndex, IndexError, IndexRetriever};

use crate::exec::{parallel_map, Deadline, DeadlineChat, DeadlineExecutor};
use crate::files::{self, FileError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Options shown to the agent; its answer is mapped to a letter.
    Mc,
    /// Options hidden; the free-text answer is mapped afterwards.
    Open,
    /// Identify the described drug, then answer; both must be right.
    Description,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error("benchmark {path}: {message}")]
    Benchmark { path: PathBuf, message: String },
    #[error("benchmark has no items")]
    Empty,
    #[error("{count} items are not in the description family, e.g. {example}")]
    NotDescription { count: usize, example: String },
    #[error("subset manifest: {0}")]
    Subset(#[from] RegistryError),
    #[error("subset index: {0}")]
    Index(#[from] IndexError),
}

pub fn load_benchmark_file(path: &Path) -> Result<Vec<BenchmarkItem>, HarnessError> {
    let text = files::read_text(path)?;
    let items = toolverse_core::eval::load_benchmark(&text).map_err(|e| HarnessError::Benchmark {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if items.is_empty() {
        return Err(HarnessError::Empty);
    }
    Ok(items)
}

/// The registry restricted to a manifest of tool names (the Special tools
/// always stay), plus the index cut down to the same names.
pub fn apply_subset(registry: &Registry, index: Option<&EmbeddingIndex>, manifest: &[String]) -> Result<(Registry, Option<EmbeddingIndex>), HarnessError> {
    let sub = registry.subset(manifest)?;
    let index = match index {
        None => None,
        Some(ix) => {
            let (names, vectors) = ix
                .names()
                .iter()
                .zip(ix.vectors())
                .filter(|(n, _)| sub.contains(n))
                .map(|(n, v)| (n.clone(), v.clone()))
                .unzip();
            Some(EmbeddingIndex::from_parts(names, vectors, ix.fingerprint().to_string())?)
        }
    };
    Ok((sub, index))
}

pub struct HarnessServices<'a> {
    pub chat: &'a dyn ChatService,
    pub summarizer: Option<&'a dyn ChatService>,
    /// Maps open answers onto options; the agent model when absent.
    pub mapper: Option<&'a dyn ChatService>,
    pub executor: &'a dyn ToolExecutor,
    pub index: Option<&'a EmbeddingIndex>,
    pub embedder: Option<&'a dyn EmbeddingService>,
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub agent: AgentConfig,
    pub jobs: usize,
    pub item_timeout: Duration,
    pub trace_dir: Option<PathBuf>,
}

fn run_item(item: &BenchmarkItem, protocol: Protocol, registry: &Registry, services: &HarnessServices<'_>, config: &HarnessConfig) -> EvalOutcome {
    let deadline = Deadline::after(config.item_timeout);
    let chat = DeadlineChat {
        inner: services.chat,
        deadline,
    };
    let executor = DeadlineExecutor {
        inner: services.executor,
        deadline,
    };
    let summarizer = services.summarizer.map(|s| DeadlineChat { inner: s, deadline });
    let mapper = DeadlineChat {
        inner: services.mapper.unwrap_or(services.chat),
        deadline,
    };
    let retriever = match (services.index, services.embedder) {
        (Some(index), Some(embedder)) => Some(IndexRetriever { index, embedder }),
        _ => None,
    };
    let mut svc = Services::new(&chat, &executor);
    if let Some(s) = &summarizer {
        svc = svc.with_summarizer(s);
    }
    if let Some(r) = &retriever {
        svc = svc.with_retriever(r);
    }

    let run = catch_unwind(AssertUnwindSafe(|| match protocol {
        Protocol::Mc => evaluate_mc_item(item, registry, svc, &config.agent),
        Protocol::Open => evaluate_open_item(item, registry, svc, &mapper, &config.agent),
        Protocol::Description => evaluate_description_item(item, registry, svc, &config.agent),
    }));
    let run = match run {
        Ok(r) => r,
        Err(_) => return EvalOutcome::invalid(item, "item run panicked"),
    };

    let mut outcome = run.outcome;
    if let Some(dir) = &config.trace_dir {
        for trace in &run.traces {
            match files::write_trace(dir, trace) {
                Ok(path) => outcome.trace_ref = Some(path.display().to_string()),
                Err(e) => log::warn!("{}: trace not written: {e}", item.id),
            }
        }
    }
    if deadline.expired() {
        let mut timed_out = EvalOutcome::invalid(item, format!("timed out after {}s", config.item_timeout.as_secs()));
        timed_out.trace_ref = outcome.trace_ref;
        timed_out.steps = outcome.steps;
        timed_out.tool_calls = outcome.tool_calls;
        return timed_out;
    }
    outcome
}

/// Evaluates every item under `protocol`. Failures inside an item become
/// an invalid outcome for that item; outcomes are in benchmark order.
pub fn run_benchmark(
    items: &[BenchmarkItem],
    protocol: Protocol,
    registry: &Registry,
    services: &HarnessServices<'_>,
    config: &HarnessConfig,
) -> Result<Vec<EvalOutcome>, HarnessError> {
    if items.is_empty() {
        return Err(HarnessError::Empty);
    }
    if protocol == Protocol::Description {
        let wrong: Vec<_> = items.iter().filter(|i| i.family != Family::Description).collect();
        if let Some(first) = wrong.first() {
            return Err(HarnessError::NotDescription {
                count: wrong.len(),
                example: first.id.clone(),
            });
        }
    }
    Ok(parallel_map(config.jobs, items, |n, item| {
        let outcome = run_item(item, protocol, registry, services, config);
        log::info!("[{}/{}] {} {:?}", n + 1, items.len(), item.id, outcome.verdict);
        outcome
    }))
}
