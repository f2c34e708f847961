//! Decomposes accepted traces into one supervised sample per step.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::QuestionRecord;
use crate::agent::summarize_result;
use crate::augment::AugmentedRegistry;
use crate::call::FunctionCall;
use crate::llm::ChatService;
use crate::prompts;
use crate::registry::Registry;
use crate::spec::SpecialTool;
use crate::toolrag::returned_tools;
use crate::trace::{ReasoningStep, ReasoningTrace};
use crate::util::{derive_seed, rng_from_seed};
use crate::FINAL_ANSWER_MARKER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Registry tools added to each sample's tool set at random.
    pub extra_random_tools: usize,
    pub shuffle_tools: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            extra_random_tools: 3,
            shuffle_tools: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInput {
    pub system: String,
    pub question: String,
    pub trace_prefix: Vec<Value>,
    pub tools: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub input: SampleInput,
    pub output: String,
    pub step: usize,
    pub trace_id: String,
}

impl TrainingSample {
    /// Tool names offered in the input.
    pub fn tool_names(&self) -> Vec<String> {
        self.input
            .tools
            .iter()
            .filter_map(|t| t.get("name").and_then(Value::as_str).map(str::to_string))
            .collect()
    }
}

/// Replaces results with summaries, earliest first, until the total result
/// text of the trace fits `budget_chars`. Results the summarizer cannot
/// shorten are left as they are.
pub fn fit_to_budget(trace: &ReasoningTrace, budget_chars: usize, summarizer: &dyn ChatService) -> ReasoningTrace {
    let mut out = trace.clone();
    let mut total: usize = out.steps.iter().flat_map(|s| &s.results).map(|r| r.payload_chars()).sum();
    for step in &mut out.steps {
        for k in 0..step.results.len() {
            if total <= budget_chars {
                return out;
            }
            let r = &step.results[k];
            if r.summarized {
                continue;
            }
            let Some(call) = step.calls.iter().find(|c| c.call_id == r.call_id) else { continue };
            let before = r.payload_chars();
            let summary = summarize_result(&step.thought, call, r, summarizer, 0);
            if !summary.failed && summary.result.payload_chars() < before {
                total = total - before + summary.result.payload_chars();
                step.results[k] = summary.result;
            }
        }
    }
    out
}

/// Renaming applied to calls, retrieval payloads and tool names.
struct Naming<'a> {
    registry: &'a Registry,
    renamed: Option<&'a AugmentedRegistry>,
}

impl Naming<'_> {
    fn tool<'s>(&'s self, name: &'s str) -> &'s str {
        match self.renamed {
            Some(a) => a.remap.tool_name(name),
            None => name,
        }
    }

    fn call(&self, call: &FunctionCall) -> FunctionCall {
        match self.renamed {
            Some(a) => a.remap.apply(call),
            None => call.clone(),
        }
    }

    fn description(&self, original: &str) -> Option<Value> {
        let registry = self.renamed.map(|a| &a.registry).unwrap_or(self.registry);
        let spec = registry.get(self.tool(original))?;
        serde_json::from_str(&spec.description_json()).ok()
    }

    fn step(&self, step: &ReasoningStep) -> Value {
        let calls: Vec<FunctionCall> = step.calls.iter().map(|c| self.call(c)).collect();
        let results: Vec<Value> = step
            .results
            .iter()
            .map(|r| {
                let is_rag = step
                    .calls
                    .iter()
                    .any(|c| c.call_id == r.call_id && c.tool_name == SpecialTool::ToolRAG.name());
                let content = match (&r.payload, is_rag && self.renamed.is_some()) {
                    (Value::Array(items), true) => Value::Array(
                        items
                            .iter()
                            .map(|v| match v.as_str() {
                                Some(n) => Value::String(self.tool(n).to_string()),
                                None => v.clone(),
                            })
                            .collect(),
                    ),
                    (p, _) => p.clone(),
                };
                json!({"id": r.call_id, "content": content})
            })
            .collect();
        json!({"thought": step.thought, "calls": calls, "results": results})
    }
}

/// Tools offered at step `i` (1-based), by original name: defaults, every
/// tool retrieved anywhere in the trace, the tools available or called up to
/// step `i`, and `extra` random registry tools.
pub fn sample_tools(trace: &ReasoningTrace, registry: &Registry, i: usize, augment: &AugmentConfig) -> Vec<String> {
    let mut tools: Vec<String> = registry.default_tools().to_vec();
    let add = |tools: &mut Vec<String>, name: &str| {
        if registry.contains(name) && !tools.iter().any(|t| t == name) {
            tools.push(name.to_string());
        }
    };
    for step in &trace.steps {
        for r in &step.results {
            if step.calls.iter().any(|c| c.call_id == r.call_id && c.tool_name == SpecialTool::ToolRAG.name()) {
                for n in returned_tools(&r.payload) {
                    add(&mut tools, &n);
                }
            }
        }
    }
    if let Some(avail) = trace.available_tools.get(i - 1) {
        for n in avail {
            add(&mut tools, n);
        }
    }
    for step in trace.steps.iter().take(i) {
        for c in &step.calls {
            add(&mut tools, &c.tool_name);
        }
    }
    let mut rng = rng_from_seed(derive_seed(augment.seed, &format!("{}#{i}", trace.trace_id)));
    let present: BTreeSet<String> = tools.iter().cloned().collect();
    let mut pool: Vec<&str> = registry.api_tools().map(|s| s.name.as_str()).filter(|n| !present.contains(*n)).collect();
    pool.shuffle(&mut rng);
    tools.extend(pool.into_iter().take(augment.extra_random_tools).map(str::to_string));
    if augment.shuffle_tools {
        tools.shuffle(&mut rng);
    }
    tools
}

fn step_output(naming: &Naming<'_>, step: &ReasoningStep, last: bool, answer: &str) -> String {
    let mut parts: Vec<String> = Vec::new();
    if !step.thought.is_empty() {
        parts.push(step.thought.clone());
    }
    if last {
        parts.push(format!("{FINAL_ANSWER_MARKER} {answer}"));
        parts.push(json!([{"name": SpecialTool::Finish.name(), "arguments": {}}]).to_string());
    } else {
        let calls: Vec<Value> = step.calls.iter().map(|c| naming.call(c).without_id()).collect();
        parts.push(serde_json::to_string(&calls).unwrap_or_default());
    }
    parts.join("\n")
}

/// One sample per step: the prefix before step `i` with call ids, the tools
/// of step `i`, and step `i` as the target with ids removed. Only the last
/// sample carries the answer. Traces longer than `max_steps_filter` yield
/// nothing.
pub fn export_training_samples(
    trace: &ReasoningTrace,
    record: &QuestionRecord,
    registry: &Registry,
    augment: &AugmentConfig,
    renamed: Option<&AugmentedRegistry>,
    max_steps_filter: Option<usize>,
) -> Vec<TrainingSample> {
    let m = trace.steps.len();
    if m == 0 || max_steps_filter.is_some_and(|k| m > k) {
        return Vec::new();
    }
    let naming = Naming { registry, renamed };
    let question = prompts::render_question(&record.question, record.options.as_ref());
    let answer = trace.final_answer.clone().unwrap_or_default();
    let prefix: Vec<Value> = trace.steps.iter().map(|s| naming.step(s)).collect();
    (1..=m)
        .map(|i| {
            let tools: Vec<Value> = sample_tools(trace, registry, i, augment)
                .iter()
                .filter_map(|t| naming.description(t))
                .collect();
            let listing: Vec<String> = tools.iter().map(|t| t.to_string()).collect();
            let system = prompts::fill(prompts::AGENT_SYSTEM, &[("functions", &format!("[{}]", listing.join(", ")))]);
            TrainingSample {
                input: SampleInput {
                    system,
                    question: question.clone(),
                    trace_prefix: prefix[..i - 1].to_vec(),
                    tools,
                },
                output: step_output(&naming, &trace.steps[i - 1], i == m, &answer),
                step: i,
                trace_id: trace.trace_id.clone(),
            }
        })
        .collect()
}
