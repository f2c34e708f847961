//! Prompt templates. Placeholders are `{name}` and are filled in a single
//! pass by [`fill`], so substituted text is never re-expanded.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::util::sha256_hex;

/// System prompt of the reasoning agent; `{functions}` is the JSON list of
/// available tool descriptions.
pub const AGENT_SYSTEM: &str = "You are a helpful assistant that will solve problems through detailed, step-by-step reasoning and actions based on your reasoning. Typically, your actions will use the provided functions. You have access to the following functions. {functions}";

/// Prompt for answering a tool call with a language model instead of the API.
pub const LLM_AS_TOOL: &str = "You are a function that answers the questions based on your given description and given input. Do not answer questions that you don't have knowledge about.\n\nHere is your definition: {description}.\n\nHere is the input to the function:{arguments}.\n\nThe tool response:";

pub const FORMAT_REMINDER: &str = "Your last reply could not be used. Write one reasoning thought, then either a JSON list of function calls of the form [{\"name\": ..., \"arguments\": {...}}], or the marker [FinalAnswer] followed by your answer.";

pub const FORCE_ANSWER: &str = "[FinalAnswer] The step limit has been reached. Using only the reasoning and tool results above, give your final answer now.";

pub const SUMMARIZE_RESULT: &str = "A tool returned a long result. Condense it to the facts that matter for the current reasoning step. Keep names, identifiers and numbers exact.\n\nReasoning step: {thought}\n\nFunction call: {call}\n\nTool result: {result}\n\nCondensed result:";

pub const MAP_TO_CHOICE: &str = "Question:\n{question}\n\nOptions:\n{options}\n\nAnswer given:\n{answer}\n\nWhich option letter does the given answer select? Reply with the letter only. If the answer selects none of the options, reply NONE.";

pub const GRAPH_JUDGE: &str = "Tool A:\n{producer}\n\nTool B:\n{consumer}\n\nCan the output of tool A be used as an input argument of tool B? Reply with YES or NO on the first line, then one sentence of rationale.";

pub const CAPABILITIES: &str = "{docs}\n\nList every specific operation that the {database} API above can perform, one per line, in plain words and without code.";

pub const TOOL_GENERATOR_FDA: &str = "Write tool specifications for the openFDA drug label API.\n\nAPI fields and examples:\n{docs}\n\nTarget capability: {capability}\n\nReturn a JSON array with two tools: one that takes a drug name and returns the field, and one that takes field content and returns drug names. Each tool has name, description, category, parameter ({\"type\":\"object\",\"properties\":{...},\"required\":[...]}) and mapping {\"kind\":\"fda_search\",\"search_fields\":{argument: field},\"return_fields\":[fields]}. Names must differ from the examples.";

pub const TOOL_GENERATOR_GRAPHQL: &str = "Write a tool specification for the Open Targets GraphQL API.\n\nSchema and examples:\n{docs}\n\nTarget capability: {capability}\n\nReturn a JSON object with name, description, category, parameter ({\"type\":\"object\",\"properties\":{...},\"required\":[...]}) and mapping {\"kind\":\"graphql\",\"query_text\":..., \"variable_bindings\":{argument: variable}}. Name and query must differ from the examples.";

pub const TOOL_GENERATOR_REST: &str = "Write a tool specification for the Monarch Initiative REST API.\n\nEndpoints and examples:\n{docs}\n\nTarget capability: {capability}\n\nReturn a JSON object with name, description, category, parameter ({\"type\":\"object\",\"properties\":{...},\"required\":[...]}) and mapping {\"kind\":\"rest\",\"endpoint_template\":\"/path/{argument}\",\"query_bindings\":{argument: param}}. Name and endpoint must differ from the examples.";

pub const TOOL_CHECKER: &str = "Tool:\n{tool}\n\nData available for testing:\n{data}\n\nWrite {count} distinct, specific questions that need this tool, each paired with the call that answers it. Return a JSON array of {\"question\": ..., \"call\": {\"name\": ..., \"arguments\": {...}}}.";

pub const INFO_EXTRACTOR: &str = "Disease information:\n{disease}\n\nCandidate drugs:\n{drugs}\n\nCompare the drugs for this disease. For each difference (interactions, warnings, contraindications, age or pregnancy limits, populations) cite the supporting text. The comparison will be used to write a patient case with one clearly best drug.";

pub const QUESTION_DISEASE: &str = "Write one multiple-choice question: a patient case for which exactly one of the drugs below is the most suitable treatment. The wrong options should treat the disease but be unsuitable for this patient.\n\nDisease information:\n{disease}\n\nDrugs:\n{drugs}\n\nComparison:\n{comparison}\n\nRelated tools:\n{tools}\n\n{format}";

pub const QUESTION_CHAIN: &str = "Write one short, specific question about the drug below that needs as many of these tools as possible to answer. Do not mention ontology identifiers.\n\nTools:\n{tools}\n\nInformation returned by the tools:\n{info}\n\n{format}";

pub const QUESTION_DRUG: &str = "Write one multiple-choice question that can be answered from the field text alone.\n\nGeneric name: {generic}\nBrand name: {brand}\nField ({field}):\n{text}\n\n{format}";

pub const QUESTION_FORMAT: &str = "Reply with a JSON object {\"question\": str, \"options\": {\"A\": str, ...} or null, \"answer\": str, \"explanation\": str}.";

pub const JUDGE_GROUNDING: &str = "Reference information:\n{info}\n\nQuestion:\n{question}\n\nAnswer: {answer}\n\nIs every fact used by the question and answer supported by the reference information? Reply YES or NO on the first line.";

pub const JUDGE_SOLVABLE: &str = "Reference information:\n{info}\n\nQuestion:\n{question}\n\nCan the question be answered from the reference information alone, with a single correct answer ({answer})? Reply YES or NO on the first line.";

pub const JUDGE_REASONABLE: &str = "Question:\n{question}\n\nAnswer: {answer}\n\nExplanation:\n{explanation}\n\nIs the explanation correct and does it justify the answer? Reply YES or NO on the first line.";

pub const HELPER: &str = "You are guiding another model through a question one step at a time. Suggest what to do next. Never reveal the answer or anything that gives it away.\n\nQuestion: {question}\nCorrect answer: {answer}\nExplanation: {explanation}\nSteps so far: {trace}";

pub const HELPER_REFLECT: &str = "\n\nThe solver has just proposed this answer, which is wrong: {proposal}\nWithout revealing the correct answer, ask the solver to look back at its steps and find what it missed.";

pub const ANSWER_MATCH: &str = "Reference answer: {answer}\nReference explanation: {explanation}\n\nProposed answer: {proposal}\n\nDoes the proposed answer agree with the reference answer? Reply YES or NO on the first line.";

pub const SOLVER: &str = "Solve the question by reasoning and calling functions. Each step gives one thought and the function calls it needs. When a result is empty or useless, call ToolRAG to find other tools. Tools from the function list below must be requested with a ToolRAG call whose description names the need. Answer only from tool results, never from general knowledge. Do not repeat failed thoughts or calls. When the question is answered, call End with the final answer and how it was reached.\n\nFunction list: {tools}\n\nReply format: a thought, then a JSON list of calls [{\"name\": ..., \"arguments\": {...}}].\n\nQuestion: {question}\n\nSteps so far: {trace}\n\nHint: {hint}";

pub const TRACE_JUDGE: &str = "Question: {question}\n\nReasoning trace:\n{trace}\n\nDoes every step use a fitting tool, and does the final answer follow from the tool results rather than general knowledge? Reply YES or NO on the first line.";

pub const REPHRASE: &str = "Give {count} alternative versions of the following {what}, one per line, keeping the meaning. Names must be snake_case identifiers.\n\n{text}";

pub const CHAIN_ARGUMENTS: &str = "Tool:\n{tool}\n\nKnown information:\n{info}\n\nWrite the arguments of one call to this tool, taking every value from the known information. Reply with the JSON object of arguments only.";

pub const IDENTIFY_DRUG: &str = "{question}\n\nWhich drug does the question describe? Reply with the drug name only.";

/// Replaces `{key}` placeholders in one pass. Unknown placeholders are kept.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let map: BTreeMap<&str, &str> = values.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if map.contains_key(&after[..close]) => {
                out.push_str(map[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Short stable hash of a template, used in cache keys and fingerprints.
pub fn template_hash(template: &str) -> String {
    let mut h = sha256_hex(template.as_bytes());
    h.truncate(16);
    h
}

/// Question text with options as "A. text" lines.
pub fn render_question(question: &str, options: Option<&BTreeMap<String, String>>) -> String {
    let mut out = String::from(question);
    if let Some(opts) = options {
        for (letter, text) in opts {
            out.push('\n');
            out.push_str(letter);
            out.push_str(". ");
            out.push_str(text);
        }
    }
    out
}
