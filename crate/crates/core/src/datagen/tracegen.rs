//! Step-wise trace generation with a Solver model guided by a Helper model
//! that knows the answer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::QuestionRecord;
use crate::agent::{functions_json, parse_choice_letter, render_assistant, render_results, summarize_result};
use crate::call::{calls_from_value, locate_calls, new_call_id, FunctionCall, ResultSource, ToolResult};
use crate::gateway::{special_result, ToolExecutor};
use crate::llm::{chat, parse_verdict, ChatError, ChatRequest, ChatService, Sampling};
use crate::prompts;
use crate::registry::Registry;
use crate::spec::SpecialTool;
use crate::toolrag::{ToolRetriever, DEFAULT_K};
use crate::trace::{ReasoningStep, ReasoningTrace, Terminal};
use crate::util::rng_from_seed;
use crate::FINAL_ANSWER_MARKER;

/// Tool name the Solver may use for tools it already knows about; also
/// recognized as a ToolRAG call carrying a `tools` list.
pub const VIRTUAL_TOOLRAG: &str = "VirtualToolRAG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceGenConfig {
    /// Solver generations per question.
    pub max_steps: usize,
    /// Wrong answers tolerated; one more rejects the question.
    pub max_wrong_answers: usize,
    pub toolrag_k: usize,
    /// Whether the Solver may retrieve tools outside P̂_0.
    pub allow_real_toolrag: bool,
    pub summarize_threshold_chars: usize,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for TraceGenConfig {
    fn default() -> Self {
        TraceGenConfig {
            max_steps: 15,
            max_wrong_answers: 2,
            toolrag_k: DEFAULT_K,
            allow_real_toolrag: true,
            summarize_threshold_chars: 2048,
            seed: 0,
            sampling: Sampling::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintVerdict {
    Continue,
    AnswerCorrect,
    AnswerWrong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverHint {
    /// The step the hint is for.
    pub step: usize,
    pub hint: String,
    pub verdict: HintVerdict,
}

/// Steps as plain text for the Solver and Helper prompts.
pub fn render_steps(steps: &[ReasoningStep]) -> String {
    if steps.is_empty() {
        return "none".to_string();
    }
    steps
        .iter()
        .map(|s| {
            let mut out = format!("Step {}: {}", s.i, render_assistant(&s.thought, &s.calls));
            if !s.results.is_empty() {
                out.push_str("\nResults: ");
                out.push_str(&render_results(&s.results));
            }
            out
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Whether a proposed answer matches the ground truth: option letters must be
/// equal; open text is judged against the answer and explanation.
pub fn answer_matches(record: &QuestionRecord, proposal: &str, judge: &dyn ChatService) -> Result<bool, ChatError> {
    if let Some(options) = &record.options {
        return Ok(parse_choice_letter(proposal, options).as_deref() == Some(record.ground_truth.as_str()));
    }
    let prompt = prompts::fill(
        prompts::ANSWER_MATCH,
        &[("answer", &record.ground_truth), ("explanation", &record.explanation), ("proposal", proposal)],
    );
    let reply = chat(judge, &ChatRequest::single(prompt))?;
    Ok(parse_verdict(&reply).is_some_and(|(v, _)| v))
}

/// The Helper's response to the trace so far and, optionally, a proposed answer.
pub fn helper_hint(record: &QuestionRecord, steps: &[ReasoningStep], proposal: Option<&str>, helper: &dyn ChatService) -> Result<SolverHint, ChatError> {
    let step = steps.len() + 1;
    let question = prompts::render_question(&record.question, record.options.as_ref());
    let mut prompt = prompts::fill(
        prompts::HELPER,
        &[
            ("question", &question),
            ("answer", &super::questgen::answer_text(record)),
            ("explanation", &record.explanation),
            ("trace", &render_steps(steps)),
        ],
    );
    let verdict = match proposal {
        None => HintVerdict::Continue,
        Some(p) if answer_matches(record, p, helper)? => {
            return Ok(SolverHint {
                step,
                hint: String::new(),
                verdict: HintVerdict::AnswerCorrect,
            })
        }
        Some(p) => {
            prompt.push_str(&prompts::fill(prompts::HELPER_REFLECT, &[("proposal", p)]));
            HintVerdict::AnswerWrong
        }
    };
    let hint = chat(helper, &ChatRequest::single(prompt))?.trim().to_string();
    Ok(SolverHint { step, hint, verdict })
}

pub struct TraceGenServices<'a> {
    pub solver: &'a dyn ChatService,
    pub helper: &'a dyn ChatService,
    pub executor: &'a dyn ToolExecutor,
    pub retriever: &'a dyn ToolRetriever,
    pub summarizer: Option<&'a dyn ChatService>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoAnswer,
    TooManyWrongAnswers,
    Chat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRejection {
    pub question_id: String,
    pub reason: RejectReason,
    pub detail: String,
    pub hints: Vec<SolverHint>,
    /// The steps kept when the loop stopped.
    pub partial: ReasoningTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrace {
    pub trace: ReasoningTrace,
    pub hints: Vec<SolverHint>,
    pub wrong_answers: usize,
    pub solver_turns: usize,
}

enum SolverMove {
    Calls { thought: String, calls: Vec<FunctionCall> },
    Answer { thought: String, answer: String },
    Unusable,
}

fn parse_solver<R: Rng + ?Sized>(reply: &str, rng: &mut R) -> SolverMove {
    if let Some(pos) = reply.find(FINAL_ANSWER_MARKER) {
        let after = &reply[pos + FINAL_ANSWER_MARKER.len()..];
        let answer = match locate_calls(after) {
            Ok(loc) => after[..loc.start].trim().to_string(),
            Err(_) => after.trim().to_string(),
        };
        return SolverMove::Answer {
            thought: reply[..pos].trim().to_string(),
            answer,
        };
    }
    let Ok(loc) = locate_calls(reply) else { return SolverMove::Unusable };
    let Ok(calls) = calls_from_value(&loc.value, rng) else { return SolverMove::Unusable };
    let thought = reply[..loc.start].trim().to_string();
    let end = calls
        .iter()
        .find(|c| SpecialTool::from_name(&c.tool_name).is_some_and(SpecialTool::is_terminator));
    if let Some(end) = end {
        let answer = match end.arguments.get("answer") {
            Some(Value::String(s)) => s.clone(),
            Some(v) if !v.is_null() => crate::util::canonical_json(v),
            _ => thought.clone(),
        };
        return SolverMove::Answer { thought, answer };
    }
    if calls.is_empty() {
        return SolverMove::Unusable;
    }
    SolverMove::Calls { thought, calls }
}

/// Tools a call names as its retrieval target, if it is a virtual ToolRAG call.
fn virtual_targets(call: &FunctionCall) -> Option<Vec<String>> {
    let is_rag = call.tool_name == VIRTUAL_TOOLRAG || call.tool_name == SpecialTool::ToolRAG.name();
    let list = call.arguments.get("tools")?.as_array()?;
    if !is_rag {
        return None;
    }
    Some(list.iter().filter_map(Value::as_str).map(str::to_string).collect())
}

/// Top-`k` retrieval for `requirement` with every name in `must` included,
/// displacing the lowest-ranked hits.
pub fn retrieval_with(retriever: &dyn ToolRetriever, requirement: &str, k: usize, must: &[String]) -> Vec<String> {
    let hits = retriever.retrieve(requirement, k.max(1)).map(|r| r.names).unwrap_or_default();
    let missing: Vec<String> = must.iter().filter(|m| !hits.contains(m)).cloned().collect();
    let keep = k.saturating_sub(missing.len()).min(hits.len());
    let mut out: Vec<String> = hits[..keep].to_vec();
    for m in missing {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

struct Loop<'a, R> {
    record: &'a QuestionRecord,
    registry: &'a Registry,
    services: &'a TraceGenServices<'a>,
    config: &'a TraceGenConfig,
    rng: R,
    tools: Vec<String>,
    trace: ReasoningTrace,
    hints: Vec<SolverHint>,
}

impl<R: Rng> Loop<'_, R> {
    fn toolrag(&mut self, call: &FunctionCall) -> (FunctionCall, ToolResult) {
        let description = call.string_arg("description").unwrap_or("").to_string();
        let mut args = Map::new();
        args.insert("description".into(), Value::String(description.clone()));
        let real = FunctionCall::new(&call.call_id, SpecialTool::ToolRAG.name(), args);
        let names = match virtual_targets(call) {
            Some(targets) => {
                let known: Vec<String> = targets.into_iter().filter(|t| self.registry.contains(t)).collect();
                retrieval_with(self.services.retriever, &description, self.config.toolrag_k, &known)
            }
            None if !self.config.allow_real_toolrag => {
                return (real, ToolResult::error(&call.call_id, "agent_handled", "tool retrieval is disabled", ResultSource::Builtin));
            }
            None => match self.services.retriever.retrieve(&description, self.config.toolrag_k) {
                Ok(r) => r.names,
                Err(e) => return (real, ToolResult::error(&call.call_id, "retrieval", e.to_string(), ResultSource::Builtin)),
            },
        };
        for n in &names {
            if !self.tools.contains(n) {
                self.tools.push(n.clone());
            }
        }
        let payload = Value::Array(names.into_iter().map(Value::String).collect());
        (real, ToolResult::ok(&call.call_id, payload, ResultSource::Builtin))
    }

    fn is_rag(call: &FunctionCall) -> bool {
        call.tool_name == VIRTUAL_TOOLRAG || call.tool_name == SpecialTool::ToolRAG.name()
    }

    /// Runs one step's calls, ToolRAG locally and the rest as one batch.
    fn execute(&mut self, i: usize, thought: String, calls: Vec<FunctionCall>) -> ReasoningStep {
        let mut step = ReasoningStep::new(i, thought);
        let mut results: Vec<Option<ToolResult>> = alloc::vec![None; calls.len()];
        let mut batch = Vec::new();
        let mut slots = Vec::new();
        for (k, call) in calls.iter().enumerate() {
            if Self::is_rag(call) {
                let (real, result) = self.toolrag(call);
                step.calls.push(real);
                results[k] = Some(result);
            } else {
                step.calls.push(call.clone());
                batch.push(call.clone());
                slots.push(k);
            }
        }
        let summarizer = self.services.summarizer.unwrap_or(self.services.solver);
        for ((call, result), k) in batch.iter().zip(self.services.executor.execute_batch(&batch)).zip(slots) {
            let out = summarize_result(&step.thought, call, &result, summarizer, self.config.summarize_threshold_chars);
            results[k] = Some(out.result);
        }
        step.results = results
            .into_iter()
            .zip(&calls)
            .map(|(r, c)| r.unwrap_or_else(|| ToolResult::error(&c.call_id, "not_executed", "no result", ResultSource::Builtin)))
            .collect();
        step
    }

    fn solver_request(&self, hint: &str) -> ChatRequest {
        let question = prompts::render_question(&self.record.question, self.record.options.as_ref());
        let prompt = prompts::fill(
            prompts::SOLVER,
            &[
                ("tools", &functions_json(self.registry, &self.record.initial_tools)),
                ("question", &question),
                ("trace", &render_steps(&self.trace.steps)),
                ("hint", if hint.is_empty() { "none" } else { hint }),
            ],
        );
        let mut req = ChatRequest::single(prompt);
        req.sampling = self.config.sampling.clone();
        req
    }

    fn reject(self, reason: RejectReason, detail: impl ToString) -> TraceRejection {
        let mut partial = self.trace;
        partial.terminal = Terminal::Aborted;
        partial.error = Some(detail.to_string());
        TraceRejection {
            question_id: self.record.id.clone(),
            reason,
            detail: partial.error.clone().unwrap_or_default(),
            hints: self.hints,
            partial,
        }
    }

    fn hint(&mut self, proposal: Option<&str>) -> Result<SolverHint, ChatError> {
        let h = helper_hint(self.record, &self.trace.steps, proposal, self.services.helper)?;
        self.hints.push(h.clone());
        Ok(h)
    }

    fn run(mut self) -> Result<GeneratedTrace, TraceRejection> {
        let mut hint = match self.hint(None) {
            Ok(h) => h.hint,
            Err(e) => return Err(self.reject(RejectReason::Chat, e)),
        };
        let mut wrong = 0;
        for turn in 1..=self.config.max_steps.max(1) {
            let i = self.trace.steps.len() + 1;
            let reply = match chat(self.services.solver, &self.solver_request(&hint)) {
                Ok(r) => r,
                Err(e) => return Err(self.reject(RejectReason::Chat, e)),
            };
            match parse_solver(&reply, &mut self.rng) {
                SolverMove::Unusable => hint = prompts::FORMAT_REMINDER.to_string(),
                SolverMove::Calls { thought, calls } => {
                    let unavailable: Vec<&str> = calls
                        .iter()
                        .filter(|c| !Self::is_rag(c) && !self.tools.contains(&c.tool_name))
                        .map(|c| c.tool_name.as_str())
                        .collect();
                    if !unavailable.is_empty() {
                        hint = format!(
                            "The step was discarded: {} must first be retrieved with a ToolRAG call describing what you need.",
                            unavailable.join(", ")
                        );
                        continue;
                    }
                    let before = self.tools.clone();
                    let step = self.execute(i, thought, calls);
                    self.trace.available_tools.push(before);
                    self.trace.steps.push(step);
                    hint = match self.hint(None) {
                        Ok(h) => h.hint,
                        Err(e) => return Err(self.reject(RejectReason::Chat, e)),
                    };
                }
                SolverMove::Answer { thought, answer } => {
                    let h = match self.hint(Some(&answer)) {
                        Ok(h) => h,
                        Err(e) => return Err(self.reject(RejectReason::Chat, e)),
                    };
                    if h.verdict == HintVerdict::AnswerCorrect {
                        return Ok(self.finish(i, thought, answer, wrong, turn));
                    }
                    wrong += 1;
                    if wrong > self.config.max_wrong_answers {
                        return Err(self.reject(RejectReason::TooManyWrongAnswers, format!("{wrong} wrong answers")));
                    }
                    hint = h.hint;
                }
            }
        }
        Err(self.reject(RejectReason::NoAnswer, "solver budget exhausted"))
    }

    fn finish(mut self, i: usize, thought: String, answer: String, wrong: usize, turns: usize) -> GeneratedTrace {
        let mut args = Map::new();
        args.insert("answer".into(), Value::String(answer.clone()));
        let id = new_call_id(&mut self.rng);
        let result = special_result(SpecialTool::Finish, &id, &args);
        let mut step = ReasoningStep::new(i, thought);
        step.calls.push(FunctionCall::new(id, SpecialTool::Finish.name(), args));
        step.results.push(result);
        self.trace.available_tools.push(self.tools.clone());
        self.trace.steps.push(step);
        self.trace.final_answer = Some(answer);
        self.trace.terminal = Terminal::Finished;
        GeneratedTrace {
            trace: self.trace,
            hints: self.hints,
            wrong_answers: wrong,
            solver_turns: turns,
        }
    }
}

/// Runs the Solver until the Helper confirms an answer. Wrong-answer steps
/// are not kept. The persisted trace calls only ToolRAG, registry tools and
/// Finish.
pub fn generate_trace(
    record: &QuestionRecord,
    registry: &Registry,
    services: &TraceGenServices<'_>,
    config: &TraceGenConfig,
) -> Result<GeneratedTrace, TraceRejection> {
    let mut trace = ReasoningTrace::new(record.question.clone());
    trace.trace_id = record.id.clone();
    let run = Loop {
        record,
        registry,
        services,
        config,
        rng: rng_from_seed(crate::util::derive_seed(config.seed, &record.id)),
        tools: registry.default_tools().to_vec(),
        trace,
        hints: Vec::new(),
    };
    run.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::QuestionType;
    use crate::llm::{FnChat, ScriptedChat};
    use crate::toolrag::{Retrieval, RetrievalError};
    use serde_json::json;
    use std::collections::BTreeMap;

    struct Fixed(Vec<&'static str>);
    impl ToolRetriever for Fixed {
        fn retrieve(&self, _r: &str, k: usize) -> Result<Retrieval, RetrievalError> {
            let names: Vec<String> = self.0.iter().take(k).map(|s| s.to_string()).collect();
            Ok(Retrieval {
                scores: alloc::vec![1.0; names.len()],
                names,
                truncated: false,
            })
        }
    }

    struct Labels;
    impl ToolExecutor for Labels {
        fn execute(&self, call: &FunctionCall) -> ToolResult {
            ToolResult::ok(&call.call_id, json!([{"indications_and_usage": "melanoma"}]), ResultSource::Fixture)
        }
    }

    fn registry() -> Registry {
        let mut other = crate::spec::fixtures::get_indications();
        other.name = "get_warnings".into();
        Registry::from_specs([crate::spec::fixtures::get_indications(), other]).unwrap()
    }

    fn mc_record() -> QuestionRecord {
        let mut options = BTreeMap::new();
        options.insert("A".to_string(), "Gout".to_string());
        options.insert("B".to_string(), "Melanoma".to_string());
        QuestionRecord {
            id: "q1".into(),
            question: "What does Keytruda treat?".into(),
            options: Some(options),
            ground_truth: "B".into(),
            explanation: "Label.".into(),
            question_type: QuestionType::DrugCentered,
            reference_info: alloc::vec![json!({"text": "melanoma"})],
            initial_tools: alloc::vec!["get_indications".into()],
        }
    }

    fn helper() -> FnChat<impl Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync> {
        FnChat::new("helper", |_r: &ChatRequest| Ok("Look up the label.".to_string()))
    }

    const STEP1: &str = r#"I need the label. [{"name": "ToolRAG", "arguments": {"description": "indications of a drug", "tools": ["get_indications"]}}]"#;
    const STEP2: &str = r#"Now read it. [{"name": "get_indications", "arguments": {"drug_name": "Keytruda"}}]"#;

    #[test]
    fn helper_verdicts() {
        let rec = mc_record();
        assert_eq!(helper_hint(&rec, &[], Some("B"), &helper()).unwrap().verdict, HintVerdict::AnswerCorrect);
        let wrong = helper_hint(&rec, &[], Some("A"), &helper()).unwrap();
        assert_eq!(wrong.verdict, HintVerdict::AnswerWrong);
        assert!(!wrong.hint.is_empty());
        let first = helper_hint(&rec, &[], None, &helper()).unwrap();
        assert_eq!((first.verdict, first.step), (HintVerdict::Continue, 1));
    }

    #[test]
    fn virtual_call_becomes_real_toolrag() {
        let rec = mc_record();
        let solver = ScriptedChat::new([STEP1, STEP2, r#"Done. [{"name": "End", "arguments": {"answer": "B"}}]"#]);
        let helper = helper();
        let services = TraceGenServices {
            solver: &solver,
            helper: &helper,
            executor: &Labels,
            retriever: &Fixed(alloc::vec!["get_warnings"]),
            summarizer: None,
        };
        let out = generate_trace(&rec, &registry(), &services, &TraceGenConfig::default()).unwrap();
        let t = &out.trace;
        assert_eq!(t.steps.len(), 3);
        let rag = &t.steps[0].calls[0];
        assert_eq!(rag.tool_name, "ToolRAG");
        assert!(!rag.arguments.contains_key("tools"));
        let returned = crate::toolrag::returned_tools(&t.steps[0].results[0].payload);
        assert!(returned.contains(&"get_indications".to_string()));
        assert_eq!(t.steps[2].calls[0].tool_name, "Finish");
        assert_eq!(t.terminal, Terminal::Finished);
        assert_eq!(t.check(), Ok(()));
    }

    #[test]
    fn wrong_answer_step_is_removed() {
        let rec = mc_record();
        let solver = ScriptedChat::new([
            STEP1,
            r#"Guess. [{"name": "End", "arguments": {"answer": "A"}}]"#,
            STEP2,
            r#"Right. [{"name": "End", "arguments": {"answer": "B"}}]"#,
        ]);
        let helper = helper();
        let services = TraceGenServices {
            solver: &solver,
            helper: &helper,
            executor: &Labels,
            retriever: &Fixed(alloc::vec![]),
            summarizer: None,
        };
        let out = generate_trace(&rec, &registry(), &services, &TraceGenConfig::default()).unwrap();
        assert_eq!(out.wrong_answers, 1);
        let thoughts: Vec<&str> = out.trace.steps.iter().map(|s| s.thought.as_str()).collect();
        assert_eq!(thoughts, ["I need the label.", "Now read it.", "Right."]);
        assert_eq!(out.trace.check(), Ok(()));
    }

    #[test]
    fn unavailable_tool_and_budget() {
        let rec = mc_record();
        let solver = ScriptedChat::new([STEP2, STEP2, STEP2]);
        let helper = helper();
        let services = TraceGenServices {
            solver: &solver,
            helper: &helper,
            executor: &Labels,
            retriever: &Fixed(alloc::vec![]),
            summarizer: None,
        };
        let config = TraceGenConfig {
            max_steps: 3,
            ..TraceGenConfig::default()
        };
        let err = generate_trace(&rec, &registry(), &services, &config).unwrap_err();
        assert_eq!(err.reason, RejectReason::NoAnswer);
        assert!(err.partial.steps.is_empty());
    }

    #[test]
    fn too_many_wrong_answers() {
        let rec = mc_record();
        let end_a = r#"x [{"name": "End", "arguments": {"answer": "A"}}]"#;
        let solver = ScriptedChat::new([end_a, end_a, end_a]);
        let helper = helper();
        let services = TraceGenServices {
            solver: &solver,
            helper: &helper,
            executor: &Labels,
            retriever: &Fixed(alloc::vec![]),
            summarizer: None,
        };
        let err = generate_trace(&rec, &registry(), &services, &TraceGenConfig::default()).unwrap_err();
        assert_eq!(err.reason, RejectReason::TooManyWrongAnswers);
    }

    #[test]
    fn retrieval_keeps_named_tools() {
        let r = Fixed(alloc::vec!["a", "b", "c"]);
        assert_eq!(retrieval_with(&r, "x", 3, &["z".to_string()]), ["a", "b", "z"]);
        assert_eq!(retrieval_with(&r, "x", 3, &["b".to_string()]), ["a", "b", "c"]);
    }
}
