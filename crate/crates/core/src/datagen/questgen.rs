//! Question construction from drug labels, disease-drug comparisons and tool
//! chains, and the three-check question filter.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{extract_json, QuestionRecord, QuestionType};
use crate::agent::parse_choice_letter;
use crate::call::{FunctionCall, ResultStatus};
use crate::gateway::ToolExecutor;
use crate::llm::{chat, parse_verdict, ChatError, ChatRequest, ChatService};
use crate::prompts;
use crate::registry::Registry;
use crate::spec::MappingRule;
use crate::util::{canonical_json, random_id};

/// Label fields never used as question material.
const SKIPPED_FIELDS: &[&str] = &["id", "set_id", "version", "effective_time", "openfda", "spl_product_data_elements"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugCandidate {
    pub name: String,
    /// Label excerpts relevant to the disease.
    pub label: Value,
}

/// Type-specific inputs of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QuestionSource {
    DrugCentered {
        generic: String,
        brand: String,
        field: String,
        text: String,
    },
    DiseaseCentered {
        disease: Value,
        drugs: Vec<DrugCandidate>,
        /// Tools that return the compared label fields.
        tools: Vec<String>,
    },
    ToolChain {
        drug: String,
        chain: Vec<String>,
        /// One result per chain tool, in chain order.
        results: Vec<Value>,
    },
}

impl QuestionSource {
    pub fn question_type(&self) -> QuestionType {
        match self {
            QuestionSource::DrugCentered { .. } => QuestionType::DrugCentered,
            QuestionSource::DiseaseCentered { .. } => QuestionType::DiseaseCentered,
            QuestionSource::ToolChain { .. } => QuestionType::ToolChain,
        }
    }
}

fn field_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.clone()),
        Value::Array(items) => {
            let parts: Vec<&str> = items.iter().filter_map(Value::as_str).filter(|s| !s.trim().is_empty()).collect();
            (!parts.is_empty()).then(|| parts.join("\n"))
        }
        _ => None,
    }
}

/// Picks one non-empty text field of an FDA label at random. `None` when the
/// label has no usable field or no name.
pub fn select_label_field<R: Rng + ?Sized>(label: &Value, rng: &mut R) -> Option<QuestionSource> {
    let obj = label.as_object()?;
    let name = |key: &str| {
        label
            .pointer(&format!("/openfda/{key}/0"))
            .and_then(Value::as_str)
            .map(str::to_string)
    };
    let generic = name("generic_name")?;
    let brand = name("brand_name").unwrap_or_else(|| generic.clone());
    let fields: Vec<(&String, String)> = obj
        .iter()
        .filter(|(k, _)| !SKIPPED_FIELDS.contains(&k.as_str()) && !k.ends_with("_table"))
        .filter_map(|(k, v)| field_text(v).map(|t| (k, t)))
        .collect();
    if fields.is_empty() {
        return None;
    }
    let (field, text) = &fields[rng.random_range(0..fields.len())];
    Some(QuestionSource::DrugCentered {
        generic,
        brand,
        field: (*field).clone(),
        text: text.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestGenError {
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("malformed question: {0}")]
    Malformed(String),
    #[error("source is unusable: {0}")]
    Source(String),
}

#[derive(Deserialize)]
struct Generated {
    question: String,
    #[serde(default)]
    options: Option<BTreeMap<String, String>>,
    answer: Value,
    #[serde(default)]
    explanation: String,
}

/// Resolves a generated answer to an option letter: the letter itself, the
/// option text, or a reply that commits to one letter.
fn answer_letter(answer: &str, options: &BTreeMap<String, String>) -> Option<String> {
    let a = answer.trim();
    if options.contains_key(a) {
        return Some(a.to_string());
    }
    if let Some((l, _)) = options.iter().find(|(_, t)| t.trim().eq_ignore_ascii_case(a)) {
        return Some(l.clone());
    }
    parse_choice_letter(a, options)
}

/// Question, options, answer and explanation of a generated question.
pub type GeneratedParts = (String, Option<BTreeMap<String, String>>, String, String);

/// Reads `{question, options, answer, explanation}` from a model reply.
pub fn parse_generated(reply: &str) -> Result<GeneratedParts, QuestGenError> {
    let value = extract_json(reply).ok_or_else(|| QuestGenError::Malformed("no JSON object".into()))?;
    let g: Generated = serde_json::from_value(value).map_err(|e| QuestGenError::Malformed(e.to_string()))?;
    let answer = match &g.answer {
        Value::String(s) => s.clone(),
        Value::Null => return Err(QuestGenError::Malformed("no answer".into())),
        other => canonical_json(other),
    };
    let options = g.options.filter(|o| !o.is_empty());
    let answer = match &options {
        Some(opts) => answer_letter(&answer, opts).ok_or_else(|| QuestGenError::Malformed(format!("answer `{answer}` is not an option")))?,
        None => answer.trim().to_string(),
    };
    if g.question.trim().is_empty() || answer.is_empty() {
        return Err(QuestGenError::Malformed("empty question or answer".into()));
    }
    Ok((g.question.trim().to_string(), options, answer, g.explanation.trim().to_string()))
}

/// FDA tools whose returned fields include `field`.
pub fn tools_returning(registry: &Registry, field: &str) -> Vec<String> {
    registry
        .api_tools()
        .filter(|s| matches!(&s.mapping, MappingRule::FdaSearch { return_fields, .. } if return_fields.iter().any(|f| f == field)))
        .map(|s| s.name.clone())
        .collect()
}

/// Runs `chain` for `drug`, one call per tool. The chat model writes each
/// call's arguments from the drug name and the results so far; a tool that
/// returns no data makes the chain unusable.
pub fn collect_chain(
    drug: &str,
    chain: &[String],
    registry: &Registry,
    executor: &dyn ToolExecutor,
    chat_service: &dyn ChatService,
) -> Result<QuestionSource, QuestGenError> {
    let mut results = Vec::with_capacity(chain.len());
    for (k, name) in chain.iter().enumerate() {
        let spec = registry
            .get(name)
            .ok_or_else(|| QuestGenError::Source(format!("unknown chain tool {name}")))?;
        let info = canonical_json(&json!({"drug": drug, "results": results}));
        let prompt = prompts::fill(prompts::CHAIN_ARGUMENTS, &[("tool", &spec.description_json()), ("info", &info)]);
        let reply = chat(chat_service, &ChatRequest::single(prompt))?;
        let Some(Value::Object(arguments)) = extract_json(&reply) else {
            return Err(QuestGenError::Malformed(format!("no arguments for {name}")));
        };
        let result = executor.execute(&FunctionCall::new(format!("chain{k}"), name.clone(), arguments));
        if result.status != ResultStatus::Ok {
            return Err(QuestGenError::Source(format!("{name} returned no data: {}", result.payload_text())));
        }
        results.push(result.payload);
    }
    Ok(QuestionSource::ToolChain {
        drug: drug.to_string(),
        chain: chain.to_vec(),
        results,
    })
}

fn tool_lines(registry: &Registry, names: &[String]) -> String {
    names
        .iter()
        .map(|n| registry.get(n).map(|s| s.description_json()).unwrap_or_else(|| n.clone()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn generate_question<R: Rng + ?Sized>(
    source: &QuestionSource,
    registry: &Registry,
    chat_service: &dyn ChatService,
    rng: &mut R,
) -> Result<QuestionRecord, QuestGenError> {
    let format = prompts::QUESTION_FORMAT;
    let (prompt, reference_info, initial_tools) = match source {
        QuestionSource::DrugCentered { generic, brand, field, text } => {
            let prompt = prompts::fill(
                prompts::QUESTION_DRUG,
                &[("generic", generic), ("brand", brand), ("field", field), ("text", text), ("format", format)],
            );
            let info = alloc::vec![json!({"generic_name": generic, "brand_name": brand, "field": field, "text": text})];
            (prompt, info, tools_returning(registry, field))
        }
        QuestionSource::DiseaseCentered { disease, drugs, tools } => {
            if drugs.len() < 2 {
                return Err(QuestGenError::Source("a comparison needs at least two drugs".into()));
            }
            let drugs_json = canonical_json(&serde_json::to_value(drugs).unwrap_or_default());
            let disease_json = canonical_json(disease);
            let extract = prompts::fill(prompts::INFO_EXTRACTOR, &[("disease", &disease_json), ("drugs", &drugs_json)]);
            let comparison = chat(chat_service, &ChatRequest::single(extract))?;
            let prompt = prompts::fill(
                prompts::QUESTION_DISEASE,
                &[
                    ("disease", &disease_json),
                    ("drugs", &drugs_json),
                    ("comparison", comparison.trim()),
                    ("tools", &tool_lines(registry, tools)),
                    ("format", format),
                ],
            );
            let mut info = alloc::vec![json!({"disease": disease})];
            info.extend(drugs.iter().map(|d| json!({"drug": d.name, "label": d.label})));
            info.push(json!({"comparison": comparison.trim()}));
            (prompt, info, tools.clone())
        }
        QuestionSource::ToolChain { drug, chain, results } => {
            if chain.is_empty() || chain.len() != results.len() {
                return Err(QuestGenError::Source("each chain tool needs exactly one result".into()));
            }
            let info: Vec<Value> = chain
                .iter()
                .zip(results)
                .map(|(t, r)| json!({"drug": drug, "tool": t, "result": r}))
                .collect();
            let prompt = prompts::fill(
                prompts::QUESTION_CHAIN,
                &[
                    ("tools", &tool_lines(registry, chain)),
                    ("info", &canonical_json(&Value::Array(info.clone()))),
                    ("format", format),
                ],
            );
            (prompt, info, chain.clone())
        }
    };
    let reply = chat(chat_service, &ChatRequest::single(prompt))?;
    let (question, options, ground_truth, explanation) = parse_generated(&reply)?;
    let record = QuestionRecord {
        id: random_id(rng, 12),
        question,
        options,
        ground_truth,
        explanation,
        question_type: source.question_type(),
        reference_info,
        initial_tools,
    };
    record.validate().map_err(QuestGenError::Malformed)?;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionCheck {
    Grounding,
    Answerability,
    Reasonableness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub check: QuestionCheck,
    pub outcome: CheckOutcome,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionEvaluation {
    pub passed: bool,
    pub checks: Vec<CheckVerdict>,
}

impl QuestionEvaluation {
    /// The checks that did not pass, e.g. `answerability:inconclusive`.
    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| c.outcome != CheckOutcome::Pass)
            .map(|c| {
                let check = serde_json::to_value(c.check).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                match c.outcome {
                    CheckOutcome::Inconclusive => format!("{check}:inconclusive"),
                    _ => check,
                }
            })
            .collect()
    }
}

/// The ground truth as judges see it: `B. text` for multiple choice.
pub fn answer_text(record: &QuestionRecord) -> String {
    match record.options.as_ref().and_then(|o| o.get(&record.ground_truth)) {
        Some(text) => format!("{}. {text}", record.ground_truth),
        None => record.ground_truth.clone(),
    }
}

fn judge(check: QuestionCheck, prompt: String, chat_service: &dyn ChatService) -> CheckVerdict {
    let (outcome, rationale) = match chat(chat_service, &ChatRequest::single(prompt)) {
        Ok(reply) => match parse_verdict(&reply) {
            Some((true, r)) => (CheckOutcome::Pass, r),
            Some((false, r)) => (CheckOutcome::Fail, r),
            None => (CheckOutcome::Inconclusive, format!("ambiguous reply: {}", reply.trim())),
        },
        Err(e) => (CheckOutcome::Inconclusive, e.to_string()),
    };
    CheckVerdict { check, outcome, rationale }
}

/// Grounding, answerability and reasonableness, each judged on its own. A
/// judge that fails or answers ambiguously counts against the question.
pub fn evaluate_question(record: &QuestionRecord, chat_service: &dyn ChatService) -> QuestionEvaluation {
    let info = canonical_json(&Value::Array(record.reference_info.clone()));
    let question = prompts::render_question(&record.question, record.options.as_ref());
    let answer = answer_text(record);
    let vars = [
        ("info", info.as_str()),
        ("question", question.as_str()),
        ("answer", answer.as_str()),
        ("explanation", record.explanation.as_str()),
    ];
    let checks = alloc::vec![
        judge(QuestionCheck::Grounding, prompts::fill(prompts::JUDGE_GROUNDING, &vars), chat_service),
        judge(QuestionCheck::Answerability, prompts::fill(prompts::JUDGE_SOLVABLE, &vars), chat_service),
        judge(QuestionCheck::Reasonableness, prompts::fill(prompts::JUDGE_REASONABLE, &vars), chat_service),
    ];
    QuestionEvaluation {
        passed: checks.iter().all(|c| c.outcome == CheckOutcome::Pass),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FnChat, ScriptedChat};
    use crate::util::rng_from_seed;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn registry() -> Registry {
        Registry::from_specs([crate::spec::fixtures::get_indications()]).unwrap()
    }

    struct Table;

    impl ToolExecutor for Table {
        fn execute(&self, call: &FunctionCall) -> crate::call::ToolResult {
            use crate::call::{ResultSource, ToolResult};
            match call.string_arg("drug_name") {
                Some("Kisunla") => ToolResult::ok(&call.call_id, json!([{"indications_and_usage": ["Alzheimer's disease"]}]), ResultSource::Fixture),
                _ => ToolResult::empty(&call.call_id, ResultSource::Fixture),
            }
        }
    }

    #[test]
    fn chain_results_follow_chain_order() {
        let chain = alloc::vec!["get_indications".to_string()];
        let chat = ScriptedChat::new([r#"{"drug_name": "Kisunla"}"#]);
        let source = collect_chain("Kisunla", &chain, &registry(), &Table, &chat).unwrap();
        let QuestionSource::ToolChain { results, .. } = &source else { panic!() };
        assert_eq!(results[0][0]["indications_and_usage"][0], "Alzheimer's disease");
        let empty = ScriptedChat::new([r#"{"drug_name": "Nothing"}"#]);
        assert!(matches!(collect_chain("Nothing", &chain, &registry(), &Table, &empty), Err(QuestGenError::Source(_))));
        let bad = ScriptedChat::new(["no json"]);
        assert!(matches!(collect_chain("x", &chain, &registry(), &Table, &bad), Err(QuestGenError::Malformed(_))));
    }

    #[test]
    fn drug_centered_from_one_label_field() {
        let label = json!({
            "id": "x",
            "openfda": {"generic_name": ["pembrolizumab"], "brand_name": ["Keytruda"]},
            "indications_and_usage": ["Treatment of melanoma."],
            "warnings": ""
        });
        let mut rng = rng_from_seed(3);
        let source = select_label_field(&label, &mut rng).unwrap();
        let QuestionSource::DrugCentered { field, .. } = &source else { panic!() };
        assert_eq!(field, "indications_and_usage");
        let reply = r#"{"question": "What does Keytruda treat?", "options": {"A": "Melanoma", "B": "Gout"}, "answer": "Melanoma", "explanation": "The label lists melanoma."}"#;
        let rec = generate_question(&source, &registry(), &ScriptedChat::new([reply]), &mut rng).unwrap();
        assert_eq!(rec.ground_truth, "A");
        assert_eq!(rec.question_type, QuestionType::DrugCentered);
        assert_eq!(rec.initial_tools, ["get_indications"]);
        assert_eq!(rec.reference_info[0]["brand_name"], "Keytruda");
    }

    #[test]
    fn disease_centered_uses_a_comparison_first() {
        let source = QuestionSource::DiseaseCentered {
            disease: json!({"name": "hypertension"}),
            drugs: alloc::vec![
                DrugCandidate { name: "Altace".into(), label: json!({"contraindications": "none relevant"}) },
                DrugCandidate { name: "Verapamil".into(), label: json!({"contraindications": "second- or third-degree AV block"}) },
            ],
            tools: alloc::vec!["get_drug_name_by_contraindication".into()],
        };
        let seen = AtomicUsize::new(0);
        let chat = FnChat::new("m", |req: &ChatRequest| {
            let n = seen.fetch_add(1, Ordering::SeqCst);
            let text = &req.messages[0].content;
            if n == 0 {
                assert!(text.contains("Verapamil"));
                Ok("Verapamil is contraindicated in AV block.".to_string())
            } else {
                assert!(text.contains("contraindicated in AV block"));
                Ok(r#"{"question": "A patient with hypertension and second-degree AV block needs treatment. Which drug?", "options": {"A": "Verapamil", "B": "Altace"}, "answer": "B", "explanation": "Verapamil is contraindicated in AV block."}"#.to_string())
            }
        });
        let rec = generate_question(&source, &registry(), &chat, &mut rng_from_seed(1)).unwrap();
        assert_eq!(rec.ground_truth, "B");
        assert_eq!(rec.initial_tools, ["get_drug_name_by_contraindication"]);
        assert_eq!(rec.reference_info.len(), 4);
    }

    #[test]
    fn single_hop_chain_is_open_ended() {
        let source = QuestionSource::ToolChain {
            drug: "Keytruda".into(),
            chain: alloc::vec!["get_indications".into()],
            results: alloc::vec![json!([{"indications_and_usage": "melanoma"}])],
        };
        let reply = r#"{"question": "Which cancer does Keytruda treat?", "options": null, "answer": "melanoma", "explanation": "From the label."}"#;
        let rec = generate_question(&source, &registry(), &ScriptedChat::new([reply]), &mut rng_from_seed(1)).unwrap();
        assert!(rec.options.is_none());
        assert_eq!(rec.ground_truth, "melanoma");
        assert_eq!(rec.initial_tools, ["get_indications"]);
    }

    #[test]
    fn answer_outside_options_is_malformed() {
        let reply = r#"{"question": "q", "options": {"A": "x", "B": "y"}, "answer": "z", "explanation": ""}"#;
        assert!(matches!(parse_generated(reply), Err(QuestGenError::Malformed(_))));
    }

    fn record() -> QuestionRecord {
        QuestionRecord {
            id: "q1".into(),
            question: "What does Keytruda treat?".into(),
            options: None,
            ground_truth: "melanoma".into(),
            explanation: "label".into(),
            question_type: QuestionType::DrugCentered,
            reference_info: alloc::vec![json!({"text": "melanoma"})],
            initial_tools: Vec::new(),
        }
    }

    #[test]
    fn three_checks() {
        let eval = evaluate_question(&record(), &ScriptedChat::new(["YES", "YES", "YES"]));
        assert!(eval.passed);
        let eval = evaluate_question(&record(), &ScriptedChat::new(["NO\nThe dose is not in the reference.", "YES", "YES"]));
        assert_eq!(eval.failures(), ["grounding"]);
        // The scripted service runs dry on the second check.
        let eval = evaluate_question(&record(), &ScriptedChat::new(["YES"]));
        assert!(!eval.passed);
        assert_eq!(eval.failures()[0], "answerability:inconclusive");
    }
}
