//! Tool specifications from API documentation: capability listing,
//! spec generation and live checking.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::extract_json;
use crate::call::{FunctionCall, ResultStatus, ToolResult};
use crate::gateway::ToolExecutor;
use crate::llm::{chat, ChatError, ChatRequest, ChatService};
use crate::prompts;
use crate::request::Api;
use crate::spec::{validate_spec, MappingRule, ToolSpec};
use crate::util::canonical_json;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolGenError {
    #[error("API documentation is empty")]
    EmptyDocs,
    #[error(transparent)]
    Chat(#[from] ChatError),
}

/// Strips list decoration such as `- `, `* `, `3. ` or `3) `.
fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t
}

/// Capabilities from a model reply: a JSON array of strings, or one per line.
pub fn parse_capabilities(reply: &str) -> Vec<String> {
    let raw: Vec<String> = match extract_json(reply) {
        Some(Value::Array(items)) if items.iter().all(Value::is_string) && !items.is_empty() => {
            items.into_iter().filter_map(|v| v.as_str().map(str::to_string)).collect()
        }
        _ => reply.lines().map(|l| strip_bullet(l).to_string()).collect(),
    };
    let mut seen = BTreeSet::new();
    raw.into_iter()
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty() && seen.insert(c.to_lowercase()))
        .collect()
}

pub fn summarize_api_capabilities(docs: &str, database: &str, chat_service: &dyn ChatService) -> Result<Vec<String>, ToolGenError> {
    if docs.trim().is_empty() {
        return Err(ToolGenError::EmptyDocs);
    }
    let prompt = prompts::fill(prompts::CAPABILITIES, &[("docs", docs), ("database", database)]);
    let reply = chat(chat_service, &ChatRequest::single(prompt))?;
    Ok(parse_capabilities(&reply))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedSpec {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationOutcome {
    pub specs: Vec<ToolSpec>,
    pub dropped: Vec<DroppedSpec>,
    /// Generations used, 1 or 2.
    pub attempts: usize,
}

fn generator_template(api: Api) -> &'static str {
    match api {
        Api::OpenFda => prompts::TOOL_GENERATOR_FDA,
        Api::OpenTargets => prompts::TOOL_GENERATOR_GRAPHQL,
        Api::Monarch => prompts::TOOL_GENERATOR_REST,
    }
}

fn expected_kind(api: Api) -> &'static str {
    match api {
        Api::OpenFda => "fda_search",
        Api::OpenTargets => "graphql",
        Api::Monarch => "rest",
    }
}

/// Why a mapping cannot reach any data, if it cannot.
fn unmappable(mapping: &MappingRule) -> Option<&'static str> {
    match mapping {
        MappingRule::FdaSearch { search_fields, return_fields } => {
            if search_fields.is_empty() {
                Some("no searchable fields")
            } else if return_fields.is_empty() {
                Some("no returned fields")
            } else {
                None
            }
        }
        MappingRule::GraphQlQuery { query_text, .. } if query_text.trim().is_empty() => Some("empty query"),
        MappingRule::RestCall { endpoint_template, .. } if endpoint_template.trim().is_empty() => Some("empty endpoint"),
        _ => None,
    }
}

fn spec_values(reply: &str) -> Option<Vec<Value>> {
    match extract_json(reply)? {
        Value::Array(items) if !items.is_empty() && items.iter().all(Value::is_object) => Some(items),
        v @ Value::Object(_) => Some(alloc::vec![v]),
        _ => None,
    }
}

fn vet(value: Value, api: Api, outcome: &mut GenerationOutcome) {
    let name = value.get("name").and_then(Value::as_str).unwrap_or("").to_string();
    let drop = |outcome: &mut GenerationOutcome, reason: String| {
        outcome.dropped.push(DroppedSpec { name: name.clone(), reason });
    };
    let spec: ToolSpec = match serde_json::from_value(value) {
        Ok(s) => s,
        Err(e) => return drop(outcome, format!("schema: {e}")),
    };
    if spec.mapping.kind() != expected_kind(api) {
        return drop(outcome, format!("mapping kind `{}` does not fit the API", spec.mapping.kind()));
    }
    if let Some(reason) = unmappable(&spec.mapping) {
        return drop(outcome, reason.to_string());
    }
    let report = validate_spec(&spec);
    if !report.is_valid() {
        let reasons: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return drop(outcome, reasons.join("; "));
    }
    if outcome.specs.iter().any(|s| s.name == spec.name) {
        return drop(outcome, "duplicate name".to_string());
    }
    outcome.specs.push(spec);
}

/// Candidate specs for one capability. A reply with no usable JSON is
/// retried once; each parsed spec is then validated on its own.
pub fn generate_tool_spec(capability: &str, docs: &str, api: Api, chat_service: &dyn ChatService) -> Result<GenerationOutcome, ToolGenError> {
    let prompt = prompts::fill(generator_template(api), &[("docs", docs), ("capability", capability)]);
    let mut outcome = GenerationOutcome::default();
    for _ in 0..2 {
        outcome.attempts += 1;
        let reply = chat(chat_service, &ChatRequest::single(prompt.clone()))?;
        if let Some(values) = spec_values(&reply) {
            for v in values {
                vet(v, api, &mut outcome);
            }
            return Ok(outcome);
        }
    }
    outcome.dropped.push(DroppedSpec {
        name: String::new(),
        reason: "unparseable generation".to_string(),
    });
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStage {
    Request,
    Questions,
    Calls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub question: String,
    pub call: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub tool: String,
    pub passed: bool,
    /// The stage that failed; absent on a pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<CheckStage>,
    pub detail: String,
    #[serde(default)]
    pub cases: Vec<TestCase>,
}

impl CheckReport {
    fn fail(tool: &str, stage: CheckStage, detail: impl Into<String>, cases: Vec<TestCase>) -> Self {
        CheckReport {
            tool: tool.to_string(),
            passed: false,
            failed_stage: Some(stage),
            detail: detail.into(),
            cases,
        }
    }
}

fn describe_failure(r: &ToolResult) -> String {
    match r.status {
        ResultStatus::Error => format!("error: {}", r.payload_text()),
        _ => "no records".to_string(),
    }
}

/// Exercises a spec against real data. `samples` are argument maps built from
/// known data points; every sample must return records, the checker model
/// must write test cases, and every test call must run without error.
pub fn check_tool(spec: &ToolSpec, executor: &dyn ToolExecutor, chat_service: &dyn ChatService, samples: &[Map<String, Value>]) -> CheckReport {
    let name = spec.name.as_str();
    if samples.is_empty() {
        return CheckReport::fail(name, CheckStage::Request, "no sample data points", Vec::new());
    }
    let mut data = Vec::new();
    for (k, args) in samples.iter().enumerate() {
        let call = FunctionCall::new(format!("check{k:03}"), name, args.clone());
        let result = executor.execute(&call);
        if result.status != ResultStatus::Ok {
            let detail = format!("sample {}: {}", canonical_json(&Value::Object(args.clone())), describe_failure(&result));
            return CheckReport::fail(name, CheckStage::Request, detail, Vec::new());
        }
        data.push(serde_json::json!({"arguments": args, "result": result.payload}));
    }

    let prompt = prompts::fill(
        prompts::TOOL_CHECKER,
        &[
            ("tool", &spec.description_json()),
            ("data", &canonical_json(&Value::Array(data))),
            ("count", &samples.len().to_string()),
        ],
    );
    let reply = match chat(chat_service, &ChatRequest::single(prompt)) {
        Ok(r) => r,
        Err(e) => return CheckReport::fail(name, CheckStage::Questions, e.to_string(), Vec::new()),
    };
    let cases: Vec<TestCase> = match extract_json(&reply).map(serde_json::from_value::<Vec<TestCase>>) {
        Some(Ok(cases)) if !cases.is_empty() => cases,
        _ => return CheckReport::fail(name, CheckStage::Questions, "checker reply is not a list of test cases", Vec::new()),
    };

    for (k, case) in cases.iter().enumerate() {
        let called = case.call.get("name").and_then(Value::as_str).unwrap_or("");
        if called != name {
            let detail = format!("case {k} calls `{called}`");
            return CheckReport::fail(name, CheckStage::Calls, detail, cases);
        }
        let args = case.call.get("arguments").and_then(Value::as_object).cloned().unwrap_or_default();
        let result = executor.execute(&FunctionCall::new(format!("case{k:03}"), name, args));
        if result.status == ResultStatus::Error {
            let detail = format!("case {k}: {}", describe_failure(&result));
            return CheckReport::fail(name, CheckStage::Calls, detail, cases);
        }
    }
    CheckReport {
        tool: name.to_string(),
        passed: true,
        failed_stage: None,
        detail: format!("{} samples, {} test cases", samples.len(), cases.len()),
        cases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::call::ResultSource;
    use crate::llm::{EchoChat, ScriptedChat};
    use serde_json::json;

    const DOCS: &str = "indications_and_usage: text of the label section.";

    #[test]
    fn capabilities_verbatim_and_deduplicated() {
        let chat = ScriptedChat::new(["1. Identify the active ingredients for a drug\n2. Find drugs by indication\n- identify the active ingredients for a drug\n"]);
        let caps = summarize_api_capabilities(DOCS, "openFDA", &chat).unwrap();
        assert_eq!(caps, ["Identify the active ingredients for a drug", "Find drugs by indication"]);
        let chat = ScriptedChat::new([r#"["find disease-related phenotypes", "find genes for a phenotype"]"#]);
        let caps = summarize_api_capabilities("HPO docs", "Monarch", &chat).unwrap();
        assert_eq!(caps, ["find disease-related phenotypes", "find genes for a phenotype"]);
        assert_eq!(summarize_api_capabilities("  ", "x", &EchoChat), Err(ToolGenError::EmptyDocs));
    }

    fn fda_spec(name: &str, search: Value, ret: Value) -> Value {
        json!({
            "name": name,
            "description": "d",
            "category": "drug use, mechanism, composition",
            "parameter": {"type": "object", "properties": {"drug_name": {"type": "string", "description": "x"}, "indication": {"type": "string", "description": "y"}}, "required": []},
            "mapping": {"kind": "fda_search", "search_fields": search, "return_fields": ret}
        })
    }

    #[test]
    fn fda_capability_yields_the_pair() {
        let reply = json!([
            fda_spec("get_indications", json!({"drug_name": "openfda.brand_name"}), json!(["indications_and_usage"])),
            fda_spec("get_drug_names_by_indication", json!({"indication": "indications_and_usage"}), json!(["openfda.brand_name"])),
        ]);
        let chat = ScriptedChat::new([reply.to_string()]);
        let out = generate_tool_spec("drug indications", DOCS, Api::OpenFda, &chat).unwrap();
        let names: Vec<&str> = out.specs.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["get_indications", "get_drug_names_by_indication"]);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn unmappable_and_invalid_specs_are_dropped() {
        let reply = json!([
            fda_spec("no_fields", json!({}), json!(["x"])),
            fda_spec("bad_binding", json!({"dose": "dosage"}), json!(["x"])),
            {"name": "junk", "parameter": 3},
        ]);
        let chat = ScriptedChat::new([reply.to_string()]);
        let out = generate_tool_spec("c", DOCS, Api::OpenFda, &chat).unwrap();
        assert!(out.specs.is_empty());
        let reasons: Vec<(&str, &str)> = out.dropped.iter().map(|d| (d.name.as_str(), d.reason.as_str())).collect();
        assert_eq!(reasons[0], ("no_fields", "no searchable fields"));
        assert_eq!(reasons[1].0, "bad_binding");
        assert!(reasons[1].1.contains("dose"));
        assert!(reasons[2].1.starts_with("schema"));
    }

    #[test]
    fn unparseable_generation_is_retried_once() {
        let chat = ScriptedChat::new(["no idea", "still nothing"]);
        let out = generate_tool_spec("c", DOCS, Api::OpenFda, &chat).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.dropped[0].reason, "unparseable generation");
        let good = fda_spec("ok_tool", json!({"drug_name": "openfda.brand_name"}), json!(["warnings"]));
        let chat = ScriptedChat::new(["oops".to_string(), good.to_string()]);
        let out = generate_tool_spec("c", DOCS, Api::OpenFda, &chat).unwrap();
        assert_eq!((out.attempts, out.specs.len()), (2, 1));
    }

    /// Records for any call naming `drug_name` Keytruda, errors for calls
    /// carrying `bad`, nothing otherwise.
    struct Stub;
    impl ToolExecutor for Stub {
        fn execute(&self, call: &FunctionCall) -> ToolResult {
            if call.arguments.contains_key("bad") {
                return ToolResult::error(&call.call_id, "unknown_argument", "bad", ResultSource::Fixture);
            }
            match call.string_arg("drug_name") {
                Some("Keytruda") => ToolResult::ok(&call.call_id, json!([{"indications_and_usage": "melanoma"}]), ResultSource::Fixture),
                _ => ToolResult::empty(&call.call_id, ResultSource::Fixture),
            }
        }
    }

    fn sample(drug: &str) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("drug_name".into(), json!(drug));
        m
    }

    #[test]
    fn check_stages() {
        let spec = crate::spec::fixtures::get_indications();
        let cases = json!([{"question": "What is Keytruda for?", "call": {"name": "get_indications", "arguments": {"drug_name": "Keytruda"}}}]);
        let chat = ScriptedChat::new([cases.to_string()]);
        let report = check_tool(&spec, &Stub, &chat, &[sample("Keytruda")]);
        assert!(report.passed, "{report:?}");

        let report = check_tool(&spec, &Stub, &EchoChat, &[sample("Nothing")]);
        assert_eq!(report.failed_stage, Some(CheckStage::Request));

        let chat = ScriptedChat::new(["I cannot"]);
        let report = check_tool(&spec, &Stub, &chat, &[sample("Keytruda")]);
        assert_eq!(report.failed_stage, Some(CheckStage::Questions));

        let bad = json!([{"question": "q", "call": {"name": "get_indications", "arguments": {"bad": 1}}}]);
        let chat = ScriptedChat::new([bad.to_string()]);
        let report = check_tool(&spec, &Stub, &chat, &[sample("Keytruda")]);
        assert_eq!(report.failed_stage, Some(CheckStage::Calls));
    }
}
