//! Data generation runs: tool specs into the review queue, questions from
//! ingested sources, Solver/Helper traces, and step-wise sample export.
//! Per-item work runs on a worker pool; JSONL outputs are written per worker
//! and merged in a stable order at the end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use toolverse_core::augment::AugmentedRegistry;
use toolverse_core::datagen::evaluate::{evaluate_trace, ReasonCode, TraceEvalConfig};
use toolverse_core::datagen::export::{export_training_samples, fit_to_budget, AugmentConfig, TrainingSample};
use toolverse_core::datagen::questgen::{evaluate_question, generate_question, QuestionEvaluation, QuestionSource};
use toolverse_core::datagen::review::{ReviewError, ReviewKind, ReviewQueue, ReviewStatus};
use toolverse_core::datagen::toolgen::{check_tool, generate_tool_spec, summarize_api_capabilities, CheckReport, DroppedSpec, ToolGenError};
use toolverse_core::datagen::tracegen::{generate_trace, RejectReason, SolverHint, TraceGenConfig, TraceGenServices};
use toolverse_core::datagen::QuestionRecord;
use toolverse_core::gateway::Gateway;
use toolverse_core::llm::ChatService;
use toolverse_core::registry::{Registry, RegistryError};
use toolverse_core::request::Api;
use toolverse_core::spec::ToolSpec;
use toolverse_core::toolrag::{extract_training_pairs, RetrievalPair};
use toolverse_core::trace::ReasoningTrace;
use toolverse_core::util::{derive_seed, rng_from_seed};

use crate::exec::{parallel_map, parallel_map_with};
use crate::files::{self, FileError, PartWriter, ShardedJsonl};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    ToolGen(#[from] ToolGenError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("review item `{id}` does not hold a valid spec: {message}")]
    BadReviewPayload { id: String, message: String },
}

// ---- tools ----

/// Sample arguments for tool checks: by tool name, plus `*` entries tried on
/// any tool whose arguments they fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleBook(pub BTreeMap<String, Vec<Map<String, Value>>>);

impl SampleBook {
    pub fn for_spec(&self, spec: &ToolSpec) -> Vec<Map<String, Value>> {
        if let Some(s) = self.0.get(&spec.name) {
            return s.clone();
        }
        let fits = |m: &Map<String, Value>| {
            m.keys().all(|k| spec.argument(k).is_some()) && spec.arguments.iter().filter(|a| a.required).all(|a| m.contains_key(&a.name))
        };
        self.0.get("*").map(|s| s.iter().filter(|m| fits(m)).cloned().collect()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ToolGenReport {
    pub capabilities: Vec<String>,
    pub accepted: Vec<String>,
    pub dropped: Vec<DroppedSpec>,
    pub checks: Vec<CheckReport>,
    #[serde(skip)]
    pub specs: Vec<ToolSpec>,
}

pub struct ToolGenServices<'a> {
    pub generator: &'a dyn ChatService,
    pub checker: &'a dyn ChatService,
    /// Checks run against this gateway's settings over a registry holding
    /// only the candidate.
    pub gateway: &'a Gateway<'a>,
}

/// Capabilities from the docs, candidate specs per capability, then a live
/// check of each candidate. Names already in `registry` are dropped.
pub fn run_toolgen(docs: &str, database: &str, api: Api, registry: &Registry, services: &ToolGenServices<'_>, samples: &SampleBook) -> Result<ToolGenReport, PipelineError> {
    let mut report = ToolGenReport {
        capabilities: summarize_api_capabilities(docs, database, services.generator)?,
        ..Default::default()
    };
    let mut taken: BTreeSet<String> = registry.names().map(str::to_string).collect();
    for capability in report.capabilities.clone() {
        let outcome = match generate_tool_spec(&capability, docs, api, services.generator) {
            Ok(o) => o,
            Err(e) => {
                report.dropped.push(DroppedSpec {
                    name: capability.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        report.dropped.extend(outcome.dropped);
        for spec in outcome.specs {
            if !taken.insert(spec.name.clone()) {
                report.dropped.push(DroppedSpec {
                    name: spec.name.clone(),
                    reason: "name already in use".into(),
                });
                continue;
            }
            let alone = Registry::from_specs([spec.clone()])?;
            let executor = services.gateway.with_registry(&alone);
            let check = check_tool(&spec, &executor, services.checker, &samples.for_spec(&spec));
            if check.passed {
                report.accepted.push(spec.name.clone());
                report.specs.push(spec);
            } else {
                report.dropped.push(DroppedSpec {
                    name: spec.name.clone(),
                    reason: format!("check failed: {}", check.detail),
                });
            }
            report.checks.push(check);
        }
    }
    Ok(report)
}

fn to_payload<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Queues items for review, skipping ids already present. Returns how many
/// were added.
pub fn enqueue<T: Serialize>(queue: &mut ReviewQueue, kind: ReviewKind, items: impl IntoIterator<Item = (String, T)>) -> usize {
    let mut added = 0;
    for (id, item) in items {
        if queue.enqueue(id, kind, to_payload(&item)).is_ok() {
            added += 1;
        }
    }
    added
}

/// Adds every approved spec not yet in the corpus under `dir/generated/`
/// and extends the corpus index. Returns the names added.
pub fn promote_specs(queue: &ReviewQueue, dir: &Path) -> Result<Vec<String>, PipelineError> {
    let mut registry = files::load_registry_dir(dir)?;
    let index_path = dir.join(files::INDEX_FILE);
    let mut index: Vec<String> = files::read_json(&index_path)?;
    let mut added = Vec::new();
    for item in queue.with_status(ReviewKind::Spec, ReviewStatus::Approved) {
        let spec: ToolSpec = serde_json::from_value(item.payload.clone()).map_err(|e| PipelineError::BadReviewPayload {
            id: item.id.clone(),
            message: e.to_string(),
        })?;
        if registry.contains(&spec.name) {
            continue;
        }
        let name = spec.name.clone();
        registry.insert(spec.clone()).map_err(|e| PipelineError::BadReviewPayload {
            id: item.id.clone(),
            message: e.to_string(),
        })?;
        let rel = format!("generated/{name}.json");
        files::write_json(&dir.join(&rel), &spec)?;
        index.push(rel);
        added.push(name);
    }
    if !added.is_empty() {
        files::write_json(&index_path, &index)?;
    }
    Ok(added)
}

// ---- questions ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedQuestion {
    pub source: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<QuestionEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QuestionLine {
    source: usize,
    record: QuestionRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QuestGenSummary {
    pub sources: usize,
    pub accepted: usize,
    pub rejected: usize,
}

pub struct QuestGenServices<'a> {
    pub generator: &'a dyn ChatService,
    pub judge: &'a dyn ChatService,
}

/// `<stem>.rejected.jsonl` next to `out`.
pub fn rejected_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.rejected.jsonl"))
}

fn part_writer(sink: &ShardedJsonl, worker: usize) -> Option<PartWriter> {
    match sink.writer(worker) {
        Ok(w) => Some(w),
        Err(e) => {
            log::error!("{e}");
            None
        }
    }
}

fn append<T: Serialize>(w: &mut Option<PartWriter>, item: &T) {
    if let Some(writer) = w {
        if let Err(e) = writer.append(item) {
            log::error!("{e}");
        }
    }
}

/// Generates and checks one question per source. Accepted records go to
/// `out` in source order; every rejection goes to the rejected log.
pub fn run_questgen(
    sources: &[QuestionSource],
    registry: &Registry,
    services: &QuestGenServices<'_>,
    seed: u64,
    jobs: usize,
    out: &Path,
) -> Result<QuestGenSummary, PipelineError> {
    let accepted = ShardedJsonl::new(out, jobs)?;
    let rejected = ShardedJsonl::new(&rejected_path(out), jobs)?;
    parallel_map_with(
        jobs,
        sources,
        |w| (part_writer(&accepted, w), part_writer(&rejected, w)),
        |(ok, bad), i, source| {
            let mut rng = rng_from_seed(derive_seed(seed, &format!("source/{i}")));
            match generate_question(source, registry, services.generator, &mut rng) {
                Err(e) => append(
                    bad,
                    &RejectedQuestion {
                        source: i,
                        question_id: None,
                        reason: e.to_string(),
                        evaluation: None,
                    },
                ),
                Ok(record) => {
                    let evaluation = evaluate_question(&record, services.judge);
                    if evaluation.passed {
                        append(ok, &QuestionLine { source: i, record });
                    } else {
                        append(
                            bad,
                            &RejectedQuestion {
                                source: i,
                                question_id: Some(record.id.clone()),
                                reason: evaluation.failures().join(", "),
                                evaluation: Some(evaluation),
                            },
                        );
                    }
                }
            }
        },
    );
    let lines: Vec<QuestionLine> = accepted.merge(|l: &QuestionLine| l.source)?;
    let records: Vec<&QuestionRecord> = lines.iter().map(|l| &l.record).collect();
    files::write_jsonl(out, &records)?;
    let rejects: Vec<RejectedQuestion> = rejected.merge(|r: &RejectedQuestion| r.source)?;
    Ok(QuestGenSummary {
        sources: sources.len(),
        accepted: records.len(),
        rejected: rejects.len(),
    })
}

/// Records whose review item is approved; with no queue every record passes.
pub fn approved_questions(records: Vec<QuestionRecord>, queue: Option<&ReviewQueue>) -> Vec<QuestionRecord> {
    let Some(queue) = queue else { return records };
    let ok: BTreeSet<&str> = queue
        .with_status(ReviewKind::Question, ReviewStatus::Approved)
        .map(|i| i.id.as_str())
        .collect();
    records.into_iter().filter(|r| ok.contains(r.id.as_str())).collect()
}

// ---- traces ----

/// An accepted trace with the question it answers; the unit of export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub record: QuestionRecord,
    pub trace: ReasoningTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectStage {
    Generation,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedTrace {
    pub question_id: String,
    pub stage: RejectStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<ReasonCode>,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hints: Vec<SolverHint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceGenSummary {
    pub questions: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub steps: usize,
}

fn rejected_trace(question_id: &str, stage: RejectStage, detail: String) -> RejectedTrace {
    RejectedTrace {
        question_id: question_id.to_string(),
        stage,
        generation: None,
        reasons: Vec::new(),
        detail,
        hints: Vec::new(),
    }
}

/// Generates one trace per record and keeps those that pass every trace
/// check. Accepted entries go to `out` in record order.
#[allow(clippy::too_many_arguments)]
pub fn run_tracegen(
    records: &[QuestionRecord],
    registry: &Registry,
    services: &TraceGenServices<'_>,
    config: &TraceGenConfig,
    judge: &dyn ChatService,
    eval_config: &TraceEvalConfig,
    jobs: usize,
    out: &Path,
) -> Result<TraceGenSummary, PipelineError> {
    let accepted = ShardedJsonl::new(out, jobs)?;
    let rejected = ShardedJsonl::new(&rejected_path(out), jobs)?;
    let order: BTreeMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    parallel_map_with(
        jobs,
        records,
        |w| (part_writer(&accepted, w), part_writer(&rejected, w)),
        |(ok, bad), _, record| match generate_trace(record, registry, services, config) {
            Err(r) => {
                let mut rej = rejected_trace(&record.id, RejectStage::Generation, r.detail);
                rej.generation = Some(r.reason);
                rej.hints = r.hints;
                append(bad, &rej);
            }
            Ok(generated) => {
                let evaluation = evaluate_trace(&generated.trace, record, registry, judge, eval_config);
                if evaluation.passed {
                    append(
                        ok,
                        &TraceEntry {
                            record: record.clone(),
                            trace: generated.trace,
                        },
                    );
                } else {
                    let detail = evaluation.findings.iter().map(|f| f.detail.as_str()).collect::<Vec<_>>().join("; ");
                    let mut rej = rejected_trace(&record.id, RejectStage::Evaluation, detail);
                    rej.reasons = evaluation.reasons();
                    append(bad, &rej);
                }
            }
        },
    );
    let key = |id: &str| order.get(id).copied().unwrap_or(usize::MAX);
    let entries: Vec<TraceEntry> = accepted.merge(|e: &TraceEntry| key(&e.record.id))?;
    let rejects: Vec<RejectedTrace> = rejected.merge(|r: &RejectedTrace| key(&r.question_id))?;
    Ok(TraceGenSummary {
        questions: records.len(),
        accepted: entries.len(),
        rejected: rejects.len(),
        steps: entries.iter().map(|e| e.trace.steps.len()).sum(),
    })
}

// ---- export ----

pub struct ExportOptions<'a> {
    pub augment: AugmentConfig,
    pub renamed: Option<&'a AugmentedRegistry>,
    pub max_steps_filter: Option<usize>,
    /// Result budget in characters and the summarizer used to meet it.
    pub budget: Option<(usize, &'a dyn ChatService)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExportSummary {
    pub traces: usize,
    pub exported_traces: usize,
    pub samples: usize,
    pub retrieval_pairs: usize,
}

/// Step-wise samples of every entry, in entry order.
pub fn export_samples(entries: &[TraceEntry], registry: &Registry, options: &ExportOptions<'_>, jobs: usize) -> Vec<Vec<TrainingSample>> {
    parallel_map(jobs, entries, |_, e| {
        let trace = match options.budget {
            Some((chars, summarizer)) => fit_to_budget(&e.trace, chars, summarizer),
            None => e.trace.clone(),
        };
        export_training_samples(&trace, &e.record, registry, &options.augment, options.renamed, options.max_steps_filter)
    })
}

/// Writes the samples to `out` and, when `pairs_out` is set, the retrieval
/// training pairs found in the traces.
pub fn run_export(
    entries: &[TraceEntry],
    registry: &Registry,
    options: &ExportOptions<'_>,
    jobs: usize,
    out: &Path,
    pairs_out: Option<&Path>,
) -> Result<ExportSummary, PipelineError> {
    let per_trace = export_samples(entries, registry, options, jobs);
    let samples: Vec<&TrainingSample> = per_trace.iter().flatten().collect();
    files::write_jsonl(out, &samples)?;
    let mut summary = ExportSummary {
        traces: entries.len(),
        exported_traces: per_trace.iter().filter(|s| !s.is_empty()).count(),
        samples: samples.len(),
        retrieval_pairs: 0,
    };
    if let Some(p) = pairs_out {
        let traces: Vec<ReasoningTrace> = entries.iter().map(|e| e.trace.clone()).collect();
        let pairs: Vec<RetrievalPair> = extract_training_pairs(&traces, registry);
        files::write_jsonl(p, &pairs)?;
        summary.retrieval_pairs = pairs.len();
    }
    Ok(summary)
}
