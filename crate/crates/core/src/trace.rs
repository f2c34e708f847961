//! Reasoning traces: question, ordered steps of (thought, calls, results),
//! final answer and how the run ended.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::{FunctionCall, ToolResult};
use crate::spec::SpecialTool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Finished,
    StepLimitForced,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub i: usize,
    #[serde(default)]
    pub thought: String,
    #[serde(default)]
    pub calls: Vec<FunctionCall>,
    #[serde(default)]
    pub results: Vec<ToolResult>,
}

impl ReasoningStep {
    pub fn new(i: usize, thought: impl Into<String>) -> Self {
        ReasoningStep {
            i,
            thought: thought.into(),
            calls: Vec::new(),
            results: Vec::new(),
        }
    }

    pub fn result_for(&self, call_id: &str) -> Option<&ToolResult> {
        self.results.iter().find(|r| r.call_id == call_id)
    }

    /// True when the step calls Finish or GiveAnswer.
    pub fn terminates(&self) -> bool {
        self.calls.iter().any(|c| {
            matches!(
                SpecialTool::from_name(&c.tool_name),
                Some(SpecialTool::Finish | SpecialTool::GiveAnswer)
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub trace_id: String,
    pub question: String,
    pub steps: Vec<ReasoningStep>,
    pub final_answer: Option<String>,
    pub terminal: Terminal,
    /// Snapshot of the available tools P_i before each step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub available_tools: Vec<Vec<String>>,
    /// Why the run aborted, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("step {position} has index {found}")]
    StepIndex { position: usize, found: usize },
    #[error("step {step}: {calls} calls but {results} results")]
    ResultCount { step: usize, calls: usize, results: usize },
    #[error("step {step}: call id `{id}` is empty or repeated")]
    CallId { step: usize, id: String },
    #[error("step {step}: result `{id}` matches no call")]
    OrphanResult { step: usize, id: String },
    #[error("finished trace has no final answer")]
    MissingAnswer,
    #[error("finished trace does not end with a Finish call")]
    MissingFinish,
    #[error("available tools shrink before step {0}")]
    ToolsShrink(usize),
}

impl ReasoningTrace {
    pub fn new(question: impl Into<String>) -> Self {
        ReasoningTrace {
            trace_id: String::new(),
            question: question.into(),
            steps: Vec::new(),
            final_answer: None,
            terminal: Terminal::Aborted,
            available_tools: Vec::new(),
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<ReasoningTrace, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn calls(&self) -> impl Iterator<Item = (&ReasoningStep, &FunctionCall)> {
        self.steps.iter().flat_map(|s| s.calls.iter().map(move |c| (s, c)))
    }

    pub fn tool_call_count(&self) -> usize {
        self.calls()
            .filter(|(_, c)| !matches!(SpecialTool::from_name(&c.tool_name), Some(s) if s.is_terminator()))
            .count()
    }

    /// Checks the structural invariants: contiguous step indices from 1, one
    /// result per call with matching ids, a Finish-terminated last step when
    /// finished, and a non-shrinking tool set.
    pub fn check(&self) -> Result<(), TraceError> {
        for (pos, step) in self.steps.iter().enumerate() {
            if step.i != pos + 1 {
                return Err(TraceError::StepIndex {
                    position: pos + 1,
                    found: step.i,
                });
            }
            if step.calls.len() != step.results.len() {
                return Err(TraceError::ResultCount {
                    step: step.i,
                    calls: step.calls.len(),
                    results: step.results.len(),
                });
            }
            let mut ids = BTreeSet::new();
            for c in &step.calls {
                if c.call_id.is_empty() || !ids.insert(c.call_id.as_str()) {
                    return Err(TraceError::CallId {
                        step: step.i,
                        id: c.call_id.clone(),
                    });
                }
            }
            let mut seen = BTreeSet::new();
            for r in &step.results {
                if !ids.contains(r.call_id.as_str()) || !seen.insert(r.call_id.as_str()) {
                    return Err(TraceError::OrphanResult {
                        step: step.i,
                        id: r.call_id.to_string(),
                    });
                }
            }
        }
        if self.terminal == Terminal::Finished {
            if self.final_answer.is_none() {
                return Err(TraceError::MissingAnswer);
            }
            if !self.steps.last().is_some_and(ReasoningStep::terminates) {
                return Err(TraceError::MissingFinish);
            }
        }
        for (i, w) in self.available_tools.windows(2).enumerate() {
            if !w[0].iter().all(|t| w[1].contains(t)) {
                return Err(TraceError::ToolsShrink(i + 2));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::call::ResultSource;
    use serde_json::Map;

    fn finished() -> ReasoningTrace {
        let mut t = ReasoningTrace::new("q");
        let mut s = ReasoningStep::new(1, "done");
        s.calls.push(FunctionCall::new("abcd1234", "Finish", Map::new()));
        s.results
            .push(ToolResult::ok("abcd1234", serde_json::json!({"terminal": true}), ResultSource::Builtin));
        t.steps.push(s);
        t.final_answer = Some("A".into());
        t.terminal = Terminal::Finished;
        t
    }

    #[test]
    fn finished_trace_is_well_formed() {
        assert_eq!(finished().check(), Ok(()));
    }

    #[test]
    fn finished_without_answer_rejected() {
        let mut t = finished();
        t.final_answer = None;
        assert_eq!(t.check(), Err(TraceError::MissingAnswer));
    }

    #[test]
    fn orphan_result_rejected() {
        let mut t = finished();
        t.steps[0].results[0].call_id = "zzzz".into();
        assert!(matches!(t.check(), Err(TraceError::OrphanResult { .. })));
    }

    #[test]
    fn json_round_trip() {
        let t = finished();
        let text = t.to_json();
        assert!(text.contains("\"terminal\":\"finished\""));
        assert_eq!(ReasoningTrace::from_json(&text).unwrap(), t);
    }
}
