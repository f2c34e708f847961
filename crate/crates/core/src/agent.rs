//! The multi-step reasoning loop, with and without thoughts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::call::{calls_from_value, locate_calls, new_call_id, CallParseError, FunctionCall, ResultSource, ToolResult};
use crate::llm::{chat, ChatError, ChatRequest, ChatService, Message, Role, Sampling};
use crate::prompts;
use crate::registry::Registry;
use crate::spec::SpecialTool;
use crate::toolrag::{ToolRetriever, DEFAULT_K};
use crate::trace::{ReasoningStep, ReasoningTrace, Terminal};
use crate::util::{canonical_json, rng_from_seed};
use crate::FINAL_ANSWER_MARKER;

pub use crate::gateway::ToolExecutor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThoughtMode {
    #[default]
    WithThoughts,
    NoThoughts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    OpenEnded,
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub summarize_threshold_chars: usize,
    pub toolrag_k: usize,
    pub thought_mode: ThoughtMode,
    pub answer_mode: AnswerMode,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_steps: 30,
            summarize_threshold_chars: 2048,
            toolrag_k: DEFAULT_K,
            thought_mode: ThoughtMode::WithThoughts,
            answer_mode: AnswerMode::OpenEnded,
            seed: 0,
            sampling: Sampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<BTreeMap<String, String>>,
}

impl Question {
    pub fn open(text: impl Into<String>) -> Self {
        Question {
            text: text.into(),
            options: None,
        }
    }
}

/// External services one run needs.
#[derive(Clone, Copy)]
pub struct Services<'a> {
    /// The reasoning model.
    pub chat: &'a dyn ChatService,
    /// Result summarizer; the reasoning model is used when absent.
    pub summarizer: Option<&'a dyn ChatService>,
    pub executor: &'a dyn ToolExecutor,
    pub retriever: Option<&'a dyn ToolRetriever>,
}

impl<'a> Services<'a> {
    pub fn new(chat: &'a dyn ChatService, executor: &'a dyn ToolExecutor) -> Self {
        Services {
            chat,
            summarizer: None,
            executor,
            retriever: None,
        }
    }

    pub fn with_retriever(mut self, retriever: &'a dyn ToolRetriever) -> Self {
        self.retriever = Some(retriever);
        self
    }

    pub fn with_summarizer(mut self, summarizer: &'a dyn ChatService) -> Self {
        self.summarizer = Some(summarizer);
        self
    }

    fn summarizer(&self) -> &'a dyn ChatService {
        self.summarizer.unwrap_or(self.chat)
    }
}

/// What one generation proposes.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Calls { thought: String, calls: Vec<FunctionCall> },
    /// `via` is the terminator tool the model named, Finish by default.
    Final { thought: String, answer: String, via: SpecialTool },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("unusable reply ({error}): {raw}")]
    Parse { raw: String, error: CallParseError },
    #[error(transparent)]
    Chat(#[from] ChatError),
}

fn terminator(name: &str) -> Option<SpecialTool> {
    SpecialTool::from_name(name).filter(|s| matches!(s, SpecialTool::Finish | SpecialTool::GiveAnswer))
}

fn answer_arg(call: &FunctionCall) -> Option<String> {
    match call.arguments.get("answer") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(other) => Some(canonical_json(other)),
    }
}

/// Splits text after the marker into the answer and an optional trailing
/// terminator call.
fn answer_after_marker(after: &str) -> (String, SpecialTool) {
    if let Ok(loc) = locate_calls(after) {
        let items: Vec<&Value> = match &loc.value {
            Value::Array(a) => a.iter().collect(),
            v => alloc::vec![v],
        };
        let term = items
            .iter()
            .filter_map(|v| v.get("name").and_then(Value::as_str))
            .find_map(terminator);
        if let Some(t) = term {
            let mut answer = after[..loc.start].trim().to_string();
            if answer.is_empty() {
                if let Some(a) = items.iter().find_map(|v| v.get("arguments")?.get("answer")?.as_str()) {
                    answer = a.to_string();
                }
            }
            return (answer, t);
        }
    }
    (after.trim().to_string(), SpecialTool::Finish)
}

/// Parses a reply of the thought-generating agent.
pub fn parse_reply<R: Rng + ?Sized>(text: &str, rng: &mut R) -> Result<Proposal, CallParseError> {
    if let Some(pos) = text.find(FINAL_ANSWER_MARKER) {
        let thought = text[..pos].trim().to_string();
        let (answer, via) = answer_after_marker(&text[pos + FINAL_ANSWER_MARKER.len()..]);
        return Ok(Proposal::Final { thought, answer, via });
    }
    let loc = locate_calls(text)?;
    let thought = text[..loc.start].trim().to_string();
    let calls = calls_from_value(&loc.value, rng)?;
    if let Some(term) = calls.iter().find(|c| terminator(&c.tool_name).is_some()) {
        let via = terminator(&term.tool_name).unwrap_or(SpecialTool::Finish);
        let answer = answer_arg(term).unwrap_or_else(|| thought.clone());
        return Ok(Proposal::Final { thought, answer, via });
    }
    Ok(Proposal::Calls { thought, calls })
}

/// Parses a reply of the no-thought agent: calls when any are found,
/// otherwise the text is the answer.
pub fn parse_reply_no_thought<R: Rng + ?Sized>(text: &str, rng: &mut R) -> Proposal {
    if let Some(pos) = text.find(FINAL_ANSWER_MARKER) {
        let (answer, via) = answer_after_marker(&text[pos + FINAL_ANSWER_MARKER.len()..]);
        return Proposal::Final {
            thought: String::new(),
            answer,
            via,
        };
    }
    if let Ok(loc) = locate_calls(text) {
        if let Ok(calls) = calls_from_value(&loc.value, rng) {
            if let Some(term) = calls.iter().find(|c| terminator(&c.tool_name).is_some()) {
                return Proposal::Final {
                    thought: String::new(),
                    answer: answer_arg(term).unwrap_or_default(),
                    via: terminator(&term.tool_name).unwrap_or(SpecialTool::Finish),
                };
            }
            return Proposal::Calls {
                thought: String::new(),
                calls,
            };
        }
    }
    Proposal::Final {
        thought: String::new(),
        answer: text.trim().to_string(),
        via: SpecialTool::Finish,
    }
}

/// JSON list of the model-facing descriptions of `tools`, in order.
pub fn functions_json(registry: &Registry, tools: &[String]) -> String {
    let items: Vec<String> = tools
        .iter()
        .filter_map(|t| registry.get(t))
        .map(|s| s.description_json())
        .collect();
    format!("[{}]", items.join(", "))
}

pub fn system_prompt(registry: &Registry, tools: &[String]) -> String {
    prompts::fill(prompts::AGENT_SYSTEM, &[("functions", &functions_json(registry, tools))])
}

/// Calls as the model sees them in the history, ids included.
pub fn render_calls(calls: &[FunctionCall]) -> String {
    serde_json::to_string(calls).unwrap_or_default()
}

/// Results as the model sees them: `[{"id", "content"}]` in call order.
pub fn render_results(results: &[ToolResult]) -> String {
    let items: Vec<Value> = results
        .iter()
        .map(|r| serde_json::json!({"id": r.call_id, "content": r.payload}))
        .collect();
    serde_json::to_string(&items).unwrap_or_default()
}

pub fn render_assistant(thought: &str, calls: &[FunctionCall]) -> String {
    match (thought.is_empty(), calls.is_empty()) {
        (_, true) => thought.to_string(),
        (true, false) => render_calls(calls),
        (false, false) => format!("{thought}\n{}", render_calls(calls)),
    }
}

/// The chat messages for one generation: Q, then each prior step as an
/// assistant turn and a tool turn.
pub fn history_messages(question: &Question, mode: AnswerMode, steps: &[ReasoningStep]) -> Vec<Message> {
    let options = match mode {
        AnswerMode::MultipleChoice => question.options.as_ref(),
        AnswerMode::OpenEnded => None,
    };
    let mut messages = alloc::vec![Message::user(prompts::render_question(&question.text, options))];
    for s in steps {
        messages.push(Message::assistant(render_assistant(&s.thought, &s.calls)));
        if !s.results.is_empty() {
            messages.push(Message::new(Role::Tool, render_results(&s.results)));
        }
    }
    messages
}

pub fn build_step_request(
    question: &Question,
    steps: &[ReasoningStep],
    tools: &[String],
    registry: &Registry,
    config: &AgentConfig,
) -> ChatRequest {
    let mut req = ChatRequest::new(
        system_prompt(registry, tools),
        history_messages(question, config.answer_mode, steps),
    );
    req.sampling = config.sampling.clone();
    req
}

/// One generation of the thought-generating agent.
pub fn generate_step<R: Rng + ?Sized>(request: &ChatRequest, chat_service: &dyn ChatService, rng: &mut R) -> Result<Proposal, StepError> {
    let raw = chat(chat_service, request)?;
    parse_reply(&raw, rng).map_err(|error| StepError::Parse { raw, error })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOutcome {
    pub result: ToolResult,
    /// Set when a summary was needed but the summarizer failed.
    pub failed: bool,
}

/// Replaces an over-threshold payload with a summary conditioned on the
/// step's thought and call.
pub fn summarize_result(
    thought: &str,
    call: &FunctionCall,
    result: &ToolResult,
    summarizer: &dyn ChatService,
    threshold: usize,
) -> SummaryOutcome {
    if result.payload_chars() <= threshold || result.summarized {
        return SummaryOutcome {
            result: result.clone(),
            failed: false,
        };
    }
    let prompt = prompts::fill(
        prompts::SUMMARIZE_RESULT,
        &[
            ("thought", thought),
            ("call", &canonical_json(&call.without_id())),
            ("result", &result.payload_text()),
        ],
    );
    match chat(summarizer, &ChatRequest::single(prompt)) {
        Ok(text) if !text.trim().is_empty() => {
            let mut r = result.clone();
            r.payload = Value::String(text);
            r.summarized = true;
            SummaryOutcome { result: r, failed: false }
        }
        _ => SummaryOutcome {
            result: result.clone(),
            failed: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "letter")]
pub enum Choice {
    Letter(String),
    Invalid,
}

impl Choice {
    pub fn letter(&self) -> Option<&str> {
        match self {
            Choice::Letter(l) => Some(l),
            Choice::Invalid => None,
        }
    }
}

/// Reads an option letter out of a short reply such as "B", "(B)",
/// "B. Altace" or "Answer: B". `None` when no letter of `options` is committed.
pub fn parse_choice_letter(reply: &str, options: &BTreeMap<String, String>) -> Option<String> {
    let text = reply.trim();
    let words: Vec<&str> = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let is_letter = |w: &str| w.len() == 1 && w.chars().all(|c| c.is_ascii_uppercase());
    let candidate = match words.as_slice() {
        [] => None,
        [first, ..] if is_letter(first) => Some(*first),
        _ => words
            .windows(2)
            .find(|w| w[0].eq_ignore_ascii_case("answer") && is_letter(w[1]))
            .map(|w| w[1])
            .or_else(|| {
                words
                    .windows(3)
                    .find(|w| w[0].eq_ignore_ascii_case("answer") && w[1].eq_ignore_ascii_case("is") && is_letter(w[2]))
                    .map(|w| w[2])
            }),
    }?;
    options.contains_key(candidate).then(|| candidate.to_string())
}

pub fn render_options(options: &BTreeMap<String, String>) -> String {
    options
        .iter()
        .map(|(l, t)| format!("{l}. {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Maps a free-text answer onto one option letter with the help of `chat`.
pub fn map_answer_to_choice(
    question: &str,
    options: &BTreeMap<String, String>,
    open_answer: &str,
    chat_service: &dyn ChatService,
) -> Choice {
    if options.is_empty() || options.len() > 5 || open_answer.trim().is_empty() {
        return Choice::Invalid;
    }
    if options.len() == 1 {
        return options.keys().next().cloned().map(Choice::Letter).unwrap_or(Choice::Invalid);
    }
    let prompt = prompts::fill(
        prompts::MAP_TO_CHOICE,
        &[
            ("question", question),
            ("options", &render_options(options)),
            ("answer", open_answer),
        ],
    );
    match chat(chat_service, &ChatRequest::single(prompt)) {
        Ok(reply) => parse_choice_letter(&reply, options).map(Choice::Letter).unwrap_or(Choice::Invalid),
        Err(_) => Choice::Invalid,
    }
}

/// Mutable state of one run.
struct Run<'a, R> {
    registry: &'a Registry,
    services: Services<'a>,
    config: &'a AgentConfig,
    question: &'a Question,
    rng: R,
    trace: ReasoningTrace,
    tools: Vec<String>,
    cache: BTreeMap<(String, String), ToolResult>,
    generations: usize,
}

/// Extra per-run inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Tools available from the first step, in addition to the defaults.
    pub initial_tools: Vec<String>,
    pub trace_id: String,
}

impl<'a, R: Rng> Run<'a, R> {
    fn new(question: &'a Question, registry: &'a Registry, services: Services<'a>, config: &'a AgentConfig, options: &RunOptions, rng: R) -> Self {
        let mut tools: Vec<String> = registry.default_tools().to_vec();
        for t in &options.initial_tools {
            if registry.contains(t) && !tools.contains(t) {
                tools.push(t.clone());
            }
        }
        let mut trace = ReasoningTrace::new(question.text.clone());
        trace.trace_id = options.trace_id.clone();
        Run {
            registry,
            services,
            config,
            question,
            rng,
            trace,
            tools,
            cache: BTreeMap::new(),
            generations: 0,
        }
    }

    fn request(&self, extra: &[Message]) -> ChatRequest {
        let mut req = build_step_request(self.question, &self.trace.steps, &self.tools, self.registry, self.config);
        req.messages.extend_from_slice(extra);
        req
    }

    /// Sends a request; on context overflow, summarizes long results and
    /// tries once more.
    fn generate(&mut self, extra: &[Message]) -> Result<String, ChatError> {
        self.generations += 1;
        match chat(self.services.chat, &self.request(extra)) {
            Err(ChatError::ContextOverflow { .. }) => {
                self.compact();
                self.generations += 1;
                chat(self.services.chat, &self.request(extra))
            }
            other => other,
        }
    }

    /// Summarizes every unsummarized result longer than a quarter of the
    /// threshold, earliest first.
    fn compact(&mut self) {
        let threshold = self.config.summarize_threshold_chars / 4;
        let summarizer = self.services.summarizer();
        for step in &mut self.trace.steps {
            for k in 0..step.results.len() {
                let Some(call) = step.calls.iter().find(|c| c.call_id == step.results[k].call_id) else { continue };
                let out = summarize_result(&step.thought, call, &step.results[k], summarizer, threshold);
                step.results[k] = out.result;
            }
        }
    }

    fn abort(mut self, error: impl ToString) -> ReasoningTrace {
        self.trace.terminal = Terminal::Aborted;
        self.trace.error = Some(error.to_string());
        self.trace
    }

    fn toolrag(&mut self, call: &FunctionCall) -> ToolResult {
        let Some(retriever) = self.services.retriever else {
            return ToolResult::error(&call.call_id, "no_retriever", "no tool index configured", ResultSource::Builtin);
        };
        let Some(requirement) = call.string_arg("description") else {
            return ToolResult::error(&call.call_id, "missing_argument", "ToolRAG needs `description`", ResultSource::Builtin);
        };
        let k = call
            .arguments
            .get("limit")
            .and_then(Value::as_u64)
            .map(|k| k as usize)
            .filter(|k| *k > 0)
            .unwrap_or(self.config.toolrag_k);
        match retriever.retrieve(requirement, k) {
            Ok(r) => {
                for name in &r.names {
                    if !self.tools.contains(name) {
                        self.tools.push(name.clone());
                    }
                }
                let payload = Value::Array(r.names.into_iter().map(Value::String).collect());
                ToolResult::ok(&call.call_id, payload, ResultSource::Builtin)
            }
            Err(e) => ToolResult::error(&call.call_id, "retrieval", e.to_string(), ResultSource::Builtin),
        }
    }

    /// Runs the calls of one step: ToolRAG locally, repeats from the cache,
    /// the rest through the executor as one batch; results in call order.
    fn execute(&mut self, thought: &str, calls: &[FunctionCall]) -> Vec<ToolResult> {
        let mut results: Vec<Option<ToolResult>> = alloc::vec![None; calls.len()];
        let mut batch: Vec<FunctionCall> = Vec::new();
        let mut batch_slots: Vec<Vec<usize>> = Vec::new();
        let mut pending: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (i, call) in calls.iter().enumerate() {
            if SpecialTool::from_name(&call.tool_name) == Some(SpecialTool::ToolRAG) {
                results[i] = Some(self.toolrag(call));
                continue;
            }
            let sig = call.signature();
            if let Some(cached) = self.cache.get(&sig) {
                let mut r = cached.clone();
                r.call_id = call.call_id.clone();
                results[i] = Some(r);
            } else if let Some(&b) = pending.get(&sig) {
                batch_slots[b].push(i);
            } else {
                pending.insert(sig, batch.len());
                batch.push(call.clone());
                batch_slots.push(alloc::vec![i]);
            }
        }
        if !batch.is_empty() {
            let executed = self.services.executor.execute_batch(&batch);
            let summarizer = self.services.summarizer();
            for ((call, result), slots) in batch.iter().zip(executed).zip(batch_slots) {
                let result = summarize_result(thought, call, &result, summarizer, self.config.summarize_threshold_chars).result;
                self.cache.insert(call.signature(), result.clone());
                for slot in slots {
                    let mut r = result.clone();
                    r.call_id = calls[slot].call_id.clone();
                    results[slot] = Some(r);
                }
            }
        }
        results
            .into_iter()
            .zip(calls)
            .map(|(r, c)| r.unwrap_or_else(|| ToolResult::error(&c.call_id, "not_executed", "no result", ResultSource::Builtin)))
            .collect()
    }

    fn finish(mut self, i: usize, thought: String, answer: String, via: SpecialTool, terminal: Terminal) -> ReasoningTrace {
        let mut args = Map::new();
        args.insert("answer".into(), Value::String(answer.clone()));
        let call = FunctionCall::new(new_call_id(&mut self.rng), via.name(), args);
        let result = self.services.executor.execute(&call);
        let mut step = ReasoningStep::new(i, thought);
        step.calls.push(call);
        step.results.push(result);
        self.trace.steps.push(step);
        self.trace.final_answer = Some(answer);
        self.trace.terminal = terminal;
        self.trace
    }

    fn push_step(&mut self, i: usize, thought: String, calls: Vec<FunctionCall>) {
        let results = self.execute(&thought, &calls);
        let mut step = ReasoningStep::new(i, thought);
        step.calls = calls;
        step.results = results;
        self.trace.steps.push(step);
    }

    fn forced(self, i: usize, raw: &str) -> ReasoningTrace {
        let (thought, answer, via) = match raw.find(FINAL_ANSWER_MARKER) {
            Some(pos) => {
                let (answer, via) = answer_after_marker(&raw[pos + FINAL_ANSWER_MARKER.len()..]);
                (raw[..pos].trim().to_string(), answer, via)
            }
            None => match locate_calls(raw) {
                Ok(loc) => (String::new(), raw[..loc.start].trim().to_string(), SpecialTool::Finish),
                Err(_) => (String::new(), raw.trim().to_string(), SpecialTool::Finish),
            },
        };
        self.finish(i, thought, answer, via, Terminal::StepLimitForced)
    }

    fn run_with_thoughts(mut self) -> (ReasoningTrace, usize) {
        let max = self.config.max_steps.max(1);
        for i in 1..=max {
            self.trace.available_tools.push(self.tools.clone());
            if i == max {
                let force = [Message::user(prompts::FORCE_ANSWER)];
                return match self.generate(&force) {
                    Ok(raw) => {
                        let g = self.generations;
                        (self.forced(i, &raw), g)
                    }
                    Err(e) => {
                        let g = self.generations;
                        (self.abort(e), g)
                    }
                };
            }
            let mut proposal = None;
            let mut extra: Vec<Message> = Vec::new();
            for attempt in 0..2 {
                let raw = match self.generate(&extra) {
                    Ok(raw) => raw,
                    Err(e) => {
                        let g = self.generations;
                        return (self.abort(e), g);
                    }
                };
                match parse_reply(&raw, &mut self.rng) {
                    Ok(p) => {
                        proposal = Some(p);
                        break;
                    }
                    Err(e) if attempt == 1 => {
                        let g = self.generations;
                        return (self.abort(StepError::Parse { raw, error: e }), g);
                    }
                    Err(_) => {
                        extra = alloc::vec![Message::assistant(raw), Message::user(prompts::FORMAT_REMINDER)];
                    }
                }
            }
            match proposal {
                Some(Proposal::Final { thought, answer, via }) => {
                    let g = self.generations;
                    return (self.finish(i, thought, answer, via, Terminal::Finished), g);
                }
                Some(Proposal::Calls { thought, calls }) => self.push_step(i, thought, calls),
                None => {}
            }
        }
        let g = self.generations;
        (self.abort("step budget exhausted"), g)
    }

    fn run_no_thoughts(mut self) -> (ReasoningTrace, usize) {
        let max = self.config.max_steps.max(1);
        for i in 1..=max {
            self.trace.available_tools.push(self.tools.clone());
            let force = [Message::user(prompts::FORCE_ANSWER)];
            let extra: &[Message] = if i == max { &force } else { &[] };
            let raw = match self.generate(extra) {
                Ok(raw) => raw,
                Err(e) => {
                    let g = self.generations;
                    return (self.abort(e), g);
                }
            };
            if i == max {
                let g = self.generations;
                return (self.forced(i, &raw), g);
            }
            match parse_reply_no_thought(&raw, &mut self.rng) {
                Proposal::Final { answer, via, .. } => {
                    let g = self.generations;
                    return (self.finish(i, String::new(), answer, via, Terminal::Finished), g);
                }
                Proposal::Calls { calls, .. } => self.push_step(i, String::new(), calls),
            }
        }
        let g = self.generations;
        (self.abort("step budget exhausted"), g)
    }
}

/// A finished run and how many generations it took.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: ReasoningTrace,
    pub generations: usize,
}

pub fn run_with_options(
    question: &Question,
    registry: &Registry,
    services: Services<'_>,
    config: &AgentConfig,
    options: &RunOptions,
) -> RunOutcome {
    let run = Run::new(question, registry, services, config, options, rng_from_seed(config.seed));
    let (trace, generations) = match config.thought_mode {
        ThoughtMode::WithThoughts => run.run_with_thoughts(),
        ThoughtMode::NoThoughts => run.run_no_thoughts(),
    };
    RunOutcome { trace, generations }
}

/// Thought, call, result loop until a final answer, the step limit, or a failure.
pub fn run_inference(question: &Question, registry: &Registry, services: Services<'_>, config: &AgentConfig) -> ReasoningTrace {
    let mut cfg = config.clone();
    cfg.thought_mode = ThoughtMode::WithThoughts;
    run_with_options(question, registry, services, &cfg, &RunOptions::default()).trace
}

/// The same loop where each output is either calls or the answer.
pub fn run_inference_no_thought(question: &Question, registry: &Registry, services: Services<'_>, config: &AgentConfig) -> ReasoningTrace {
    let mut cfg = config.clone();
    cfg.thought_mode = ThoughtMode::NoThoughts;
    run_with_options(question, registry, services, &cfg, &RunOptions::default()).trace
}

/// Tool names whose descriptions appear in a rendered system prompt.
pub fn tools_in_prompt(registry: &Registry, system_prompt: &str) -> BTreeSet<String> {
    registry
        .specs()
        .filter(|s| system_prompt.contains(&s.description_json()))
        .map(|s| s.name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayMode};
    use crate::llm::{Completion, ScriptedChat};
    use crate::spec::fixtures::get_indications;
    use crate::toolrag::Retrieval;
    use crate::toolrag::RetrievalError;
    use serde_json::json;
    use std::sync::Mutex;

    struct FixedRetriever(Vec<&'static str>);
    impl ToolRetriever for FixedRetriever {
        fn retrieve(&self, _r: &str, _k: usize) -> Result<Retrieval, RetrievalError> {
            Ok(Retrieval {
                names: self.0.iter().map(|s| s.to_string()).collect(),
                scores: alloc::vec![1.0; self.0.len()],
                truncated: false,
            })
        }
    }

    struct Recording<'a> {
        inner: &'a dyn ChatService,
        seen: Mutex<Vec<ChatRequest>>,
    }
    impl ChatService for Recording<'_> {
        fn model_id(&self) -> &str {
            "recording"
        }
        fn complete(&self, r: &ChatRequest) -> Result<Completion, ChatError> {
            self.seen.lock().unwrap().push(r.clone());
            self.inner.complete(r)
        }
    }

    struct Counting(Mutex<usize>);
    impl ToolExecutor for Counting {
        fn execute(&self, c: &FunctionCall) -> ToolResult {
            *self.0.lock().unwrap() += 1;
            ToolResult::ok(&c.call_id, json!({"n": 1}), ResultSource::Fixture)
        }
    }

    fn registry() -> Registry {
        Registry::from_specs([get_indications()]).unwrap()
    }

    #[test]
    fn immediate_final_answer() {
        let reg = registry();
        let chat_service = ScriptedChat::new(["Known already. [FinalAnswer] 42"]);
        let gw = Gateway::new(&reg, GatewayMode::Fixture);
        let t = run_inference(&Question::open("q"), &reg, Services::new(&chat_service, &gw), &AgentConfig::default());
        assert_eq!(t.terminal, Terminal::Finished);
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.steps[0].calls[0].tool_name, "Finish");
        assert_eq!(t.final_answer.as_deref(), Some("42"));
        assert_eq!(t.check(), Ok(()));
    }

    #[test]
    fn trailing_finish_json_is_not_part_of_answer() {
        let mut rng = rng_from_seed(0);
        let p = parse_reply(
            "Done. [FinalAnswer] Use 700 mg. [{\"name\":\"Finish\",\"arguments\":{}}]",
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            p,
            Proposal::Final {
                thought: "Done.".into(),
                answer: "Use 700 mg.".into(),
                via: SpecialTool::Finish
            }
        );
    }

    #[test]
    fn give_answer_terminates() {
        let reg = registry();
        let chat_service = ScriptedChat::new([r#"Answering. [{"name":"GiveAnswer","arguments":{"answer":"B"}}]"#]);
        let gw = Gateway::new(&reg, GatewayMode::Fixture);
        let t = run_inference(&Question::open("q"), &reg, Services::new(&chat_service, &gw), &AgentConfig::default());
        assert_eq!(t.terminal, Terminal::Finished);
        assert_eq!(t.final_answer.as_deref(), Some("B"));
        assert_eq!(t.steps[0].calls[0].tool_name, "GiveAnswer");
    }

    #[test]
    fn toolrag_extends_tools_and_prompt() {
        let reg = registry();
        let inner = ScriptedChat::new([
            r#"Find tools. [{"name":"ToolRAG","arguments":{"description":"indications"}}]"#,
            "Enough. [FinalAnswer] done",
        ]);
        let chat_service = Recording {
            inner: &inner,
            seen: Mutex::new(Vec::new()),
        };
        let gw = Gateway::new(&reg, GatewayMode::Fixture);
        let retr = FixedRetriever(alloc::vec!["get_indications"]);
        let t = run_inference(
            &Question::open("q"),
            &reg,
            Services::new(&chat_service, &gw).with_retriever(&retr),
            &AgentConfig::default(),
        );
        assert_eq!(t.terminal, Terminal::Finished);
        let seen = chat_service.seen.lock().unwrap();
        assert!(!tools_in_prompt(&reg, &seen[0].system_prompt).contains("get_indications"));
        assert!(tools_in_prompt(&reg, &seen[1].system_prompt).contains("get_indications"));
        assert_eq!(t.available_tools[1].len(), 5);
        assert_eq!(t.steps[0].results[0].payload, json!(["get_indications"]));
    }

    #[test]
    fn parse_failure_twice_aborts() {
        let reg = registry();
        let chat_service = ScriptedChat::new(["hmm", "still prose"]);
        let gw = Gateway::new(&reg, GatewayMode::Fixture);
        let t = run_inference(&Question::open("q"), &reg, Services::new(&chat_service, &gw), &AgentConfig::default());
        assert_eq!(t.terminal, Terminal::Aborted);
        assert!(t.steps.is_empty());
    }

    #[test]
    fn one_reprompt_recovers() {
        let reg = registry();
        let chat_service = ScriptedChat::new(["hmm", "ok [FinalAnswer] x"]);
        let gw = Gateway::new(&reg, GatewayMode::Fixture);
        let t = run_inference(&Question::open("q"), &reg, Services::new(&chat_service, &gw), &AgentConfig::default());
        assert_eq!(t.terminal, Terminal::Finished);
    }

    #[test]
    fn duplicate_calls_execute_once() {
        let reg = registry();
        let call = r#"Look. [{"name":"get_indications","arguments":{"drug_name":"X"}}]"#;
        let chat_service = ScriptedChat::new([call, call, "[FinalAnswer] a"]);
        let exec = Counting(Mutex::new(0));
        let t = run_inference(&Question::open("q"), &reg, Services::new(&chat_service, &exec), &AgentConfig::default());
        assert_eq!(t.steps.len(), 3);
        // two lookups plus the Finish call
        assert_eq!(*exec.0.lock().unwrap(), 2);
        assert_eq!(t.steps[1].results[0].call_id, t.steps[1].calls[0].call_id);
    }

    #[test]
    fn long_results_are_summarized() {
        let call = FunctionCall::new("c", "t", Map::new());
        let big = ToolResult::ok("c", Value::String("x".repeat(10_000)), ResultSource::Fixture);
        let s = ScriptedChat::new(["short"]);
        let out = summarize_result("t", &call, &big, &s, 2048);
        assert!(out.result.summarized);
        assert_eq!(out.result.payload, json!("short"));
        let small = ToolResult::ok("c", Value::String("x".repeat(100)), ResultSource::Fixture);
        assert_eq!(summarize_result("t", &call, &small, &s, 2048).result, small);
        let failing = ScriptedChat::new(Vec::<String>::new());
        let out = summarize_result("t", &call, &big, &failing, 2048);
        assert!(out.failed);
        assert!(!out.result.summarized);
    }

    fn opts(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn choice_mapping() {
        let o = opts(&[("A", "Sitagliptin"), ("B", "Altace"), ("C", "Metformin"), ("D", "Insulin")]);
        let mapper = ScriptedChat::new(["B"]);
        assert_eq!(
            map_answer_to_choice("q", &o, "Ramipril (Altace) is the most appropriate", &mapper),
            Choice::Letter("B".into())
        );
        assert_eq!(map_answer_to_choice("q", &o, "x", &ScriptedChat::new(["F"])), Choice::Invalid);
        let single = opts(&[("A", "only")]);
        assert_eq!(
            map_answer_to_choice("q", &single, "whatever", &ScriptedChat::new(Vec::<String>::new())),
            Choice::Letter("A".into())
        );
        assert_eq!(parse_choice_letter("The answer is C.", &o), Some("C".into()));
        assert_eq!(parse_choice_letter("(D) Insulin", &o), Some("D".into()));
        assert_eq!(parse_choice_letter("NONE", &o), None);
    }

    #[test]
    fn no_thought_loop() {
        let reg = registry();
        let c = r#"[{"name":"get_indications","arguments":{"drug_name":"X"}}]"#;
        let d = r#"[{"name":"get_indications","arguments":{"drug_name":"Y"}}]"#;
        let chat_service = ScriptedChat::new([c, d, "It treats cancer."]);
        let exec = Counting(Mutex::new(0));
        let t = run_inference_no_thought(&Question::open("q"), &reg, Services::new(&chat_service, &exec), &AgentConfig::default());
        assert_eq!(t.steps.len(), 3);
        assert!(t.steps.iter().all(|s| s.thought.is_empty()));
        assert_eq!(t.final_answer.as_deref(), Some("It treats cancer."));
        assert_eq!(t.check(), Ok(()));
    }
}
