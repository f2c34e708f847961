//! Correctness and behavior checks on generated traces.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tracegen::{answer_matches, render_steps};
use super::QuestionRecord;
use crate::call::ResultStatus;
use crate::llm::{chat, parse_verdict, ChatRequest, ChatService};
use crate::prompts;
use crate::registry::Registry;
use crate::spec::{check_arguments, SpecialTool};
use crate::trace::{ReasoningTrace, Terminal};
use crate::util::tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    AnswerWrong,
    TraceJudgeFail,
    BadCall,
    HallucinatedId,
    UngroundedAnswer,
    RepeatedThought,
    RepeatedCall,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceEvalConfig {
    /// Token-set overlap at or above which two thoughts count as repeated.
    pub repeated_thought_threshold: f64,
}

impl Default for TraceEvalConfig {
    fn default() -> Self {
        TraceEvalConfig {
            repeated_thought_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: ReasonCode,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvaluation {
    pub passed: bool,
    pub findings: Vec<Finding>,
}

impl TraceEvaluation {
    /// Distinct reason codes, in order.
    pub fn reasons(&self) -> Vec<ReasonCode> {
        self.findings.iter().map(|f| f.code).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// Identifier-like tokens: a leading letter and at least three digits, such
/// as `CHEMBL1234`, `EFO_0000311` or `MONDO:0005148`.
pub fn id_like_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == ':'))
        .map(|t| t.trim_matches(|c| c == ':' || c == '_'))
        .filter(|t| {
            t.len() >= 4
                && t.starts_with(|c: char| c.is_ascii_alphabetic())
                && t.chars().filter(char::is_ascii_digit).count() >= 3
        })
        .map(str::to_string)
        .collect()
}

fn string_leaves<'v>(v: &'v Value, out: &mut Vec<&'v str>) {
    match v {
        Value::String(s) => out.push(s),
        Value::Array(a) => a.iter().for_each(|x| string_leaves(x, out)),
        Value::Object(m) => m.values().for_each(|x| string_leaves(x, out)),
        _ => {}
    }
}

/// Token-set Jaccard similarity.
pub fn thought_similarity(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<String> = tokens(a).into_iter().collect();
    let tb: BTreeSet<String> = tokens(b).into_iter().collect();
    if ta.is_empty() && tb.is_empty() {
        return 0.0;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    inter / union
}

fn is_terminator(name: &str) -> bool {
    SpecialTool::from_name(name).is_some_and(SpecialTool::is_terminator)
}

fn bad_calls(trace: &ReasoningTrace, registry: &Registry, out: &mut Vec<Finding>) {
    for (step, call) in trace.calls() {
        let problem = match registry.get(&call.tool_name) {
            None => Some(format!("unknown tool `{}`", call.tool_name)),
            Some(spec) => check_arguments(spec, &call.arguments).err().map(|e| e.to_string()),
        };
        if let Some(p) = problem {
            out.push(Finding {
                code: ReasonCode::BadCall,
                detail: format!("step {}: {p}", step.i),
            });
        }
    }
}

fn hallucinated_ids(trace: &ReasoningTrace, record: &QuestionRecord, out: &mut Vec<Finding>) {
    let mut context = prompts::render_question(&record.question, record.options.as_ref()).to_lowercase();
    for step in &trace.steps {
        for call in &step.calls {
            let mut leaves = Vec::new();
            for v in call.arguments.values() {
                string_leaves(v, &mut leaves);
            }
            for id in leaves.iter().flat_map(|s| id_like_tokens(s)) {
                if !context.contains(&id.to_lowercase()) {
                    out.push(Finding {
                        code: ReasonCode::HallucinatedId,
                        detail: format!("step {}: `{id}` appears before any source shows it", step.i),
                    });
                }
            }
        }
        for r in &step.results {
            context.push('\n');
            context.push_str(&r.payload_text().to_lowercase());
        }
    }
}

fn grounding(trace: &ReasoningTrace, registry: &Registry, out: &mut Vec<Finding>) {
    let grounded = trace.steps.iter().any(|s| {
        s.results.iter().any(|r| {
            r.status == ResultStatus::Ok
                && s.calls
                    .iter()
                    .find(|c| c.call_id == r.call_id)
                    .is_some_and(|c| registry.get(&c.tool_name).is_some_and(|spec| !spec.is_special()))
        })
    });
    if !grounded {
        out.push(Finding {
            code: ReasonCode::UngroundedAnswer,
            detail: "no tool returned data before the answer".into(),
        });
    }
}

fn repetitions(trace: &ReasoningTrace, threshold: f64, out: &mut Vec<Finding>) {
    let thoughts: Vec<(usize, &str)> = trace
        .steps
        .iter()
        .filter(|s| !s.thought.trim().is_empty())
        .map(|s| (s.i, s.thought.as_str()))
        .collect();
    'outer: for (a, (ia, ta)) in thoughts.iter().enumerate() {
        for (ib, tb) in &thoughts[a + 1..] {
            if thought_similarity(ta, tb) >= threshold {
                out.push(Finding {
                    code: ReasonCode::RepeatedThought,
                    detail: format!("steps {ia} and {ib}"),
                });
                break 'outer;
            }
        }
    }
    let mut seen = BTreeSet::new();
    for (step, call) in trace.calls() {
        if is_terminator(&call.tool_name) {
            continue;
        }
        if !seen.insert(call.signature()) {
            out.push(Finding {
                code: ReasonCode::RepeatedCall,
                detail: format!("step {}: `{}` repeats an earlier call", step.i, call.tool_name),
            });
        }
    }
}

fn judged(trace: &ReasoningTrace, record: &QuestionRecord, judge: &dyn ChatService, out: &mut Vec<Finding>) {
    let answer = trace.final_answer.clone().unwrap_or_default();
    match answer_matches(record, &answer, judge) {
        Ok(true) => {}
        Ok(false) => out.push(Finding {
            code: ReasonCode::AnswerWrong,
            detail: format!("`{answer}` does not match the ground truth"),
        }),
        Err(e) => out.push(Finding {
            code: ReasonCode::Inconclusive,
            detail: format!("answer check: {e}"),
        }),
    }
    let question = prompts::render_question(&record.question, record.options.as_ref());
    let prompt = prompts::fill(prompts::TRACE_JUDGE, &[("question", &question), ("trace", &render_steps(&trace.steps))]);
    match chat(judge, &ChatRequest::single(prompt)).map(|r| parse_verdict(&r)) {
        Ok(Some((true, _))) => {}
        Ok(Some((false, why))) => out.push(Finding {
            code: ReasonCode::TraceJudgeFail,
            detail: why,
        }),
        Ok(None) => out.push(Finding {
            code: ReasonCode::Inconclusive,
            detail: "trace judge reply is ambiguous".into(),
        }),
        Err(e) => out.push(Finding {
            code: ReasonCode::Inconclusive,
            detail: format!("trace judge: {e}"),
        }),
    }
}

/// Runs every check and reports all findings; any finding fails the trace.
pub fn evaluate_trace(
    trace: &ReasoningTrace,
    record: &QuestionRecord,
    registry: &Registry,
    judge: &dyn ChatService,
    config: &TraceEvalConfig,
) -> TraceEvaluation {
    let mut findings = Vec::new();
    if trace.terminal != Terminal::Finished || trace.check().is_err() {
        findings.push(Finding {
            code: ReasonCode::Inconclusive,
            detail: "trace is not a well-formed finished trace".to_string(),
        });
        return TraceEvaluation { passed: false, findings };
    }
    judged(trace, record, judge, &mut findings);
    bad_calls(trace, registry, &mut findings);
    hallucinated_ids(trace, record, &mut findings);
    grounding(trace, registry, &mut findings);
    repetitions(trace, config.repeated_thought_threshold, &mut findings);
    TraceEvaluation {
        passed: findings.is_empty(),
        findings,
    }
}
