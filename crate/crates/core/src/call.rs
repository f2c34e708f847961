//! Function calls, their results, and extraction of calls from model text.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::util::random_id;

/// Length of generated call ids.
pub const CALL_ID_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionCall {
    #[serde(rename = "id")]
    pub call_id: String,
    #[serde(rename = "name")]
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

impl FunctionCall {
    pub fn new(call_id: impl Into<String>, tool_name: impl Into<String>, arguments: Map<String, Value>) -> Self {
        FunctionCall {
            call_id: call_id.into(),
            tool_name: tool_name.into(),
            arguments,
        }
    }

    /// `{"name", "arguments"}` without the id, as the model writes it.
    pub fn without_id(&self) -> Value {
        let mut m = Map::new();
        m.insert("name".into(), Value::String(self.tool_name.clone()));
        m.insert("arguments".into(), Value::Object(self.arguments.clone()));
        Value::Object(m)
    }

    /// Identity of the call for repeat detection: tool plus canonical arguments.
    pub fn signature(&self) -> (String, String) {
        (
            self.tool_name.clone(),
            crate::util::canonical_json(&Value::Object(self.arguments.clone())),
        )
    }

    pub fn string_arg(&self, name: &str) -> Option<&str> {
        self.arguments.get(name).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Ok,
    Empty,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultSource {
    #[default]
    Live,
    Fixture,
    Simulated,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    #[serde(rename = "id")]
    pub call_id: String,
    pub status: ResultStatus,
    pub payload: Value,
    #[serde(default)]
    pub summarized: bool,
    #[serde(default)]
    pub source: ResultSource,
}

impl ToolResult {
    pub fn ok(call_id: impl Into<String>, payload: Value, source: ResultSource) -> Self {
        ToolResult {
            call_id: call_id.into(),
            status: ResultStatus::Ok,
            payload,
            summarized: false,
            source,
        }
    }

    /// A result with no records. The payload is always an empty array.
    pub fn empty(call_id: impl Into<String>, source: ResultSource) -> Self {
        ToolResult {
            call_id: call_id.into(),
            status: ResultStatus::Empty,
            payload: Value::Array(Vec::new()),
            summarized: false,
            source,
        }
    }

    /// An error result; `kind` is a stable machine-readable code.
    pub fn error(call_id: impl Into<String>, kind: &str, message: impl Into<String>, source: ResultSource) -> Self {
        ToolResult {
            call_id: call_id.into(),
            status: ResultStatus::Error,
            payload: serde_json::json!({"error": {"kind": kind, "message": message.into()}}),
            summarized: false,
            source,
        }
    }

    pub fn error_kind(&self) -> Option<&str> {
        self.payload.get("error")?.get("kind")?.as_str()
    }

    /// The payload as the text the model sees.
    pub fn payload_text(&self) -> String {
        match &self.payload {
            Value::String(s) => s.clone(),
            other => crate::util::canonical_json(other),
        }
    }

    /// Size used against the summarization threshold, in chars.
    pub fn payload_chars(&self) -> usize {
        match &self.payload {
            Value::String(s) => s.chars().count(),
            other => crate::util::canonical_json(other).chars().count(),
        }
    }

    /// `{"content"}` without the id, as used in training outputs.
    pub fn content_without_id(&self) -> Value {
        serde_json::json!({"content": self.payload})
    }
}

/// Generates an 8-char lowercase alphanumeric call id.
pub fn new_call_id<R: Rng + ?Sized>(rng: &mut R) -> String {
    random_id(rng, CALL_ID_LEN)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallParseError {
    #[error("no function-call JSON found")]
    NoJson,
    #[error("malformed function-call JSON: {0}")]
    Malformed(String),
    #[error("function call #{0} has no string `name`")]
    MissingName(usize),
    #[error("arguments of `{0}` are not a JSON object")]
    ArgumentsNotObject(String),
}

/// Where the call JSON sits in a model reply.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedCalls {
    pub start: usize,
    pub end: usize,
    pub value: Value,
}

fn call_shaped(v: &Value) -> bool {
    match v {
        Value::Object(m) => m.contains_key("name"),
        Value::Array(items) => items.iter().all(|i| i.as_object().is_some_and(|m| m.contains_key("name"))),
        _ => false,
    }
}

/// Finds the first JSON object or array in `text` that looks like function
/// calls (`{"name": ...}` or a list of those). Prose around it is ignored;
/// a call-looking fragment that does not parse is an error.
pub fn locate_calls(text: &str) -> Result<LocatedCalls, CallParseError> {
    let mut malformed: Option<String> = None;
    for (i, c) in text.char_indices() {
        if c != '[' && c != '{' {
            continue;
        }
        let tail = &text[i..];
        let mut stream = serde_json::Deserializer::from_str(tail).into_iter::<Value>();
        match stream.next() {
            Some(Ok(value)) if call_shaped(&value) => {
                let end = i + stream.byte_offset();
                return Ok(LocatedCalls { start: i, end, value });
            }
            Some(Err(e)) if malformed.is_none() && tail.contains("\"name\"") => {
                malformed = Some(e.to_string());
            }
            _ => {}
        }
    }
    Err(match malformed {
        Some(m) => CallParseError::Malformed(m),
        None => CallParseError::NoJson,
    })
}

/// Converts a located call value into calls with fresh ids.
pub fn calls_from_value<R: Rng + ?Sized>(value: &Value, rng: &mut R) -> Result<Vec<FunctionCall>, CallParseError> {
    let items: Vec<&Value> = match value {
        Value::Array(items) => items.iter().collect(),
        other => alloc::vec![other],
    };
    let mut calls = Vec::with_capacity(items.len());
    for (idx, item) in items.into_iter().enumerate() {
        let name = item
            .get("name")
            .and_then(Value::as_str)
            .filter(|n| !n.is_empty())
            .ok_or(CallParseError::MissingName(idx))?;
        let arguments = item
            .get("arguments")
            .and_then(Value::as_object)
            .ok_or_else(|| CallParseError::ArgumentsNotObject(name.to_string()))?;
        let mut id = new_call_id(rng);
        while calls.iter().any(|c: &FunctionCall| c.call_id == id) {
            id = new_call_id(rng);
        }
        calls.push(FunctionCall::new(id, name, arguments.clone()));
    }
    Ok(calls)
}

/// Extracts function calls from model output and assigns fresh call ids.
pub fn parse_function_calls<R: Rng + ?Sized>(text: &str, rng: &mut R) -> Result<Vec<FunctionCall>, CallParseError> {
    let located = locate_calls(text)?;
    calls_from_value(&located.value, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;

    #[test]
    fn single_call_in_array() {
        let mut rng = rng_from_seed(1);
        let calls = parse_function_calls(
            r#"[{"name":"get_indications","arguments":{"drug_name":"Bizengri"}}]"#,
            &mut rng,
        )
        .unwrap();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool_name, "get_indications");
        assert_eq!(calls[0].string_arg("drug_name"), Some("Bizengri"));
        assert_eq!(calls[0].call_id.len(), CALL_ID_LEN);
    }

    #[test]
    fn prose_without_json_is_no_json() {
        let mut rng = rng_from_seed(1);
        assert_eq!(
            parse_function_calls("I think the answer is clear [1].", &mut rng),
            Err(CallParseError::NoJson)
        );
    }

    #[test]
    fn two_calls_get_distinct_ids() {
        let mut rng = rng_from_seed(1);
        let calls = parse_function_calls(
            r#"Let me look both up.
            [{"name":"a","arguments":{}}, {"name":"b","arguments":{"x":1}}] thanks"#,
            &mut rng,
        )
        .unwrap();
        assert_eq!(calls.len(), 2);
        assert_ne!(calls[0].call_id, calls[1].call_id);
    }

    #[test]
    fn malformed_json_is_rejected() {
        let mut rng = rng_from_seed(1);
        let err = parse_function_calls(r#"[{"name":"a","arguments":{"x": }]"#, &mut rng).unwrap_err();
        assert!(matches!(err, CallParseError::Malformed(_)));
    }

    #[test]
    fn arguments_must_be_object() {
        let mut rng = rng_from_seed(1);
        let err = parse_function_calls(r#"{"name":"a","arguments":"{}"}"#, &mut rng).unwrap_err();
        assert_eq!(err, CallParseError::ArgumentsNotObject("a".into()));
        let err = parse_function_calls(r#"{"name":"a"}"#, &mut rng).unwrap_err();
        assert_eq!(err, CallParseError::ArgumentsNotObject("a".into()));
    }

    #[test]
    fn located_span_splits_thought_from_calls() {
        let text = "Need the label. {\"name\":\"a\",\"arguments\":{}} done";
        let loc = locate_calls(text).unwrap();
        assert_eq!(&text[..loc.start], "Need the label. ");
        assert_eq!(&text[loc.end..], " done");
    }

    #[test]
    fn result_serialization_uses_id_key() {
        let r = ToolResult::empty("abc", ResultSource::Fixture);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["id"], "abc");
        assert_eq!(v["status"], "empty");
        assert_eq!(v["payload"], serde_json::json!([]));
    }
}
