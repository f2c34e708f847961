//! Declarative tool specifications.
//!
//! A [`ToolSpec`] is what the model sees (name, purpose, typed arguments) plus
//! the [`MappingRule`] that compiles a call into an upstream API request. The
//! JSON form is the on-disk schema:
//!
//! ```json
//! {"name": "get_indications", "description": "...", "category": "pharmacology",
//!  "parameter": {"type": "object",
//!                "properties": {"drug_name": {"type": "string", "description": "..."}},
//!                "required": ["drug_name"]},
//!  "mapping": {"kind": "fda_search",
//!              "search_fields": {"drug_name": "openfda.brand_name"},
//!              "return_fields": ["indications_and_usage"]}}
//! ```
//!
//! Argument order is significant and preserved through (de)serialization.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::category::Category;

/// Declared type of a tool argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    String,
    Integer,
    Number,
    Boolean,
    StringList,
}

impl ValueType {
    pub fn json_name(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Integer => "integer",
            ValueType::Number => "number",
            ValueType::Boolean => "boolean",
            ValueType::StringList => "array",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::StringList => f.write_str("list-of-string"),
            other => f.write_str(other.json_name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgSpec {
    pub name: String,
    pub description: String,
    pub value_type: ValueType,
    pub required: bool,
}

/// Built-in tools that never touch the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpecialTool {
    ToolRAG,
    Finish,
    GiveAnswer,
    End,
}

impl SpecialTool {
    pub const ALL: [SpecialTool; 4] = [
        SpecialTool::ToolRAG,
        SpecialTool::Finish,
        SpecialTool::GiveAnswer,
        SpecialTool::End,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpecialTool::ToolRAG => "ToolRAG",
            SpecialTool::Finish => "Finish",
            SpecialTool::GiveAnswer => "GiveAnswer",
            SpecialTool::End => "End",
        }
    }

    /// Terminators carry the final (or candidate) answer.
    pub fn is_terminator(self) -> bool {
        !matches!(self, SpecialTool::ToolRAG)
    }

    /// The registry entry for this builtin.
    pub fn spec(self) -> ToolSpec {
        let (description, arguments): (&str, Vec<ArgSpec>) = match self {
            SpecialTool::ToolRAG => (
                "Retrieve tools from the toolbox whose descriptions best match a requirement. Use it when no available tool fits the next action.",
                alloc::vec![
                    arg("description", "Natural-language description of the tool you need.", ValueType::String, true),
                    arg("limit", "Maximum number of tools to return.", ValueType::Integer, false),
                ],
            ),
            SpecialTool::Finish => (
                "Finish the reasoning process once the final answer has been produced.",
                alloc::vec![arg("answer", "The final answer.", ValueType::String, false)],
            ),
            SpecialTool::GiveAnswer => (
                "Give the final answer to the question and stop calling tools.",
                alloc::vec![arg("answer", "The final answer.", ValueType::String, true)],
            ),
            SpecialTool::End => (
                "End the solution attempt with a candidate final answer.",
                alloc::vec![arg("answer", "The candidate final answer.", ValueType::String, true)],
            ),
        };
        ToolSpec {
            name: self.name().to_string(),
            description: description.to_string(),
            category: Category::Search,
            arguments,
            unknown_required: Vec::new(),
            mapping: MappingRule::Special { builtin: self },
        }
    }

    pub fn from_name(name: &str) -> Option<SpecialTool> {
        SpecialTool::ALL.into_iter().find(|s| s.name() == name)
    }
}

fn arg(name: &str, description: &str, value_type: ValueType, required: bool) -> ArgSpec {
    ArgSpec {
        name: name.to_string(),
        description: description.to_string(),
        value_type,
        required,
    }
}

/// How a call is turned into an upstream request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum MappingRule {
    /// openFDA drug-label search: argument values become `field:"value"` clauses.
    #[serde(rename = "fda_search")]
    FdaSearch {
        search_fields: BTreeMap<String, String>,
        return_fields: Vec<String>,
    },
    /// Open Targets GraphQL: arguments bind to query variables.
    #[serde(rename = "graphql")]
    GraphQlQuery {
        query_text: String,
        #[serde(default)]
        variable_bindings: BTreeMap<String, String>,
    },
    /// Monarch REST: `{arg}` placeholders in the path, optional query params.
    #[serde(rename = "rest")]
    RestCall {
        endpoint_template: String,
        #[serde(default)]
        query_bindings: BTreeMap<String, String>,
    },
    #[serde(rename = "special")]
    Special { builtin: SpecialTool },
    /// Answered by a chat model prompted to act as the tool.
    #[serde(rename = "llm_simulated")]
    LlmSimulated {},
}

impl MappingRule {
    pub fn kind(&self) -> &'static str {
        match self {
            MappingRule::FdaSearch { .. } => "fda_search",
            MappingRule::GraphQlQuery { .. } => "graphql",
            MappingRule::RestCall { .. } => "rest",
            MappingRule::Special { .. } => "special",
            MappingRule::LlmSimulated {} => "llm_simulated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub category: Category,
    pub arguments: Vec<ArgSpec>,
    /// Names listed as required on disk that match no declared argument.
    /// Always empty for a valid spec; kept so validation can report it.
    pub unknown_required: Vec<String>,
    pub mapping: MappingRule,
}

impl ToolSpec {
    pub fn argument(&self, name: &str) -> Option<&ArgSpec> {
        self.arguments.iter().find(|a| a.name == name)
    }

    pub fn special(&self) -> Option<SpecialTool> {
        match self.mapping {
            MappingRule::Special { builtin } => Some(builtin),
            _ => None,
        }
    }

    pub fn is_special(&self) -> bool {
        self.special().is_some()
    }

    pub fn required_names(&self) -> Vec<String> {
        self.arguments
            .iter()
            .filter(|a| a.required)
            .map(|a| a.name.clone())
            .chain(self.unknown_required.iter().cloned())
            .collect()
    }

    /// The model-facing description: name, purpose and arguments, without
    /// category or mapping. Argument order is preserved.
    pub fn description_json(&self) -> String {
        #[derive(Serialize)]
        struct Description<'a> {
            name: &'a str,
            description: &'a str,
            parameter: WireParameter,
        }
        serde_json::to_string(&Description {
            name: &self.name,
            description: &self.description,
            parameter: WireParameter::from_spec(self),
        })
        .unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<ToolSpec, serde_json::Error> {
        serde_json::from_str(text)
    }
}

// ---- wire format -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSpec {
    name: String,
    description: String,
    category: Category,
    parameter: WireParameter,
    mapping: MappingRule,
}

#[derive(Serialize, Deserialize)]
enum ObjectKind {
    #[serde(rename = "object")]
    Object,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireParameter {
    #[serde(rename = "type")]
    kind: ObjectKind,
    properties: Properties,
    #[serde(default)]
    required: Vec<String>,
}

impl WireParameter {
    fn from_spec(spec: &ToolSpec) -> Self {
        WireParameter {
            kind: ObjectKind::Object,
            properties: Properties(
                spec.arguments
                    .iter()
                    .map(|a| {
                        (
                            a.name.clone(),
                            WireProperty {
                                value_type: a.value_type,
                                description: a.description.clone(),
                            },
                        )
                    })
                    .collect(),
            ),
            required: spec.required_names(),
        }
    }
}

#[derive(Debug)]
struct WireProperty {
    value_type: ValueType,
    description: String,
}

impl Serialize for WireProperty {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let len = if self.value_type == ValueType::StringList { 3 } else { 2 };
        let mut map = serializer.serialize_map(Some(len))?;
        map.serialize_entry("type", self.value_type.json_name())?;
        if self.value_type == ValueType::StringList {
            map.serialize_entry("items", &serde_json::json!({"type": "string"}))?;
        }
        map.serialize_entry("description", &self.description)?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for WireProperty {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(rename = "type")]
            kind: String,
            #[serde(default)]
            description: String,
            #[serde(default)]
            items: Option<Value>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let value_type = match raw.kind.as_str() {
            "string" => ValueType::String,
            "integer" => ValueType::Integer,
            "number" => ValueType::Number,
            "boolean" => ValueType::Boolean,
            "array" => {
                let ok = match &raw.items {
                    None => true,
                    Some(items) => items.get("type").and_then(Value::as_str) == Some("string"),
                };
                if !ok {
                    return Err(de::Error::custom("array arguments must hold strings"));
                }
                ValueType::StringList
            }
            other => {
                return Err(de::Error::custom(format!("unknown value_type `{other}`")));
            }
        };
        Ok(WireProperty {
            value_type,
            description: raw.description,
        })
    }
}

/// Argument properties in document order. Duplicate keys are kept so that
/// validation can report them.
struct Properties(Vec<(String, WireProperty)>);

impl Serialize for Properties {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Properties {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct OrderedVisitor;
        impl<'de> Visitor<'de> for OrderedVisitor {
            type Value = Properties;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object of argument properties")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Properties, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, WireProperty>()? {
                    out.push((k, v));
                }
                Ok(Properties(out))
            }
        }
        deserializer.deserialize_map(OrderedVisitor)
    }
}

impl Serialize for ToolSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        WireSpec {
            name: self.name.clone(),
            description: self.description.clone(),
            category: self.category,
            parameter: WireParameter::from_spec(self),
            mapping: self.mapping.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ToolSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = WireSpec::deserialize(deserializer)?;
        let required: BTreeSet<&str> = wire.parameter.required.iter().map(String::as_str).collect();
        let arguments: Vec<ArgSpec> = wire
            .parameter
            .properties
            .0
            .into_iter()
            .map(|(name, p)| ArgSpec {
                required: required.contains(name.as_str()),
                name,
                description: p.description,
                value_type: p.value_type,
            })
            .collect();
        let mut unknown_required = Vec::new();
        for r in &wire.parameter.required {
            if !arguments.iter().any(|a| &a.name == r) && !unknown_required.contains(r) {
                unknown_required.push(r.clone());
            }
        }
        Ok(ToolSpec {
            name: wire.name,
            description: wire.description,
            category: wire.category,
            arguments,
            unknown_required,
            mapping: wire.mapping,
        })
    }
}

// ---- validation --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyName,
    DuplicateArgument(String),
    RequiredNotDeclared(String),
    /// A mapping key refers to an argument the spec does not declare.
    MappingUnknownArgument(String),
    /// A `{placeholder}` in a REST template names no declared argument.
    UnresolvablePlaceholder(String),
    MalformedTemplate(String),
    /// A `$variable` used in the GraphQL query has no binding.
    UnboundQueryVariable(String),
    /// A binding targets a variable the query never mentions.
    UnknownQueryVariable(String),
    SpecialNameMismatch { builtin: SpecialTool, name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyName => write!(f, "tool name is empty"),
            Violation::DuplicateArgument(a) => write!(f, "argument `{a}` declared more than once"),
            Violation::RequiredNotDeclared(a) => write!(f, "required argument `{a}` is not declared"),
            Violation::MappingUnknownArgument(a) => {
                write!(f, "mapping binds undeclared argument `{a}`")
            }
            Violation::UnresolvablePlaceholder(p) => {
                write!(f, "endpoint placeholder `{{{p}}}` names no declared argument")
            }
            Violation::MalformedTemplate(t) => write!(f, "endpoint template `{t}` has unbalanced braces"),
            Violation::UnboundQueryVariable(v) => write!(f, "query variable `${v}` has no binding"),
            Violation::UnknownQueryVariable(v) => {
                write!(f, "binding targets `${v}`, which the query does not use")
            }
            Violation::SpecialNameMismatch { builtin, name } => {
                write!(f, "special tool {} registered under name `{name}`", builtin.name())
            }
        }
    }
}

/// Outcome of [`validate_spec`]; an empty report means the spec is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub tool: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of a spec and its mapping rule.
pub fn validate_spec(spec: &ToolSpec) -> ValidationReport {
    let mut violations = Vec::new();
    if spec.name.trim().is_empty() {
        violations.push(Violation::EmptyName);
    }
    let mut seen = BTreeSet::new();
    for a in &spec.arguments {
        if !seen.insert(a.name.as_str()) {
            violations.push(Violation::DuplicateArgument(a.name.clone()));
        }
    }
    for r in &spec.unknown_required {
        violations.push(Violation::RequiredNotDeclared(r.clone()));
    }
    let declared = |name: &str| spec.arguments.iter().any(|a| a.name == name);

    match &spec.mapping {
        MappingRule::FdaSearch { search_fields, .. } => {
            for arg in search_fields.keys() {
                if !declared(arg) {
                    violations.push(Violation::MappingUnknownArgument(arg.clone()));
                }
            }
        }
        MappingRule::GraphQlQuery {
            query_text,
            variable_bindings,
        } => {
            let used = graphql_variables(query_text);
            for (arg, var) in variable_bindings {
                if !declared(arg) {
                    violations.push(Violation::MappingUnknownArgument(arg.clone()));
                }
                if !used.contains(var) {
                    violations.push(Violation::UnknownQueryVariable(var.clone()));
                }
            }
            let bound: BTreeSet<&String> = variable_bindings.values().collect();
            for var in &used {
                if !bound.contains(var) {
                    violations.push(Violation::UnboundQueryVariable(var.clone()));
                }
            }
        }
        MappingRule::RestCall {
            endpoint_template,
            query_bindings,
        } => {
            match template_placeholders(endpoint_template) {
                Ok(placeholders) => {
                    for p in placeholders {
                        if !declared(&p) {
                            violations.push(Violation::UnresolvablePlaceholder(p));
                        }
                    }
                }
                Err(_) => violations.push(Violation::MalformedTemplate(endpoint_template.clone())),
            }
            for arg in query_bindings.keys() {
                if !declared(arg) {
                    violations.push(Violation::MappingUnknownArgument(arg.clone()));
                }
            }
        }
        MappingRule::Special { builtin } => {
            if spec.name != builtin.name() {
                violations.push(Violation::SpecialNameMismatch {
                    builtin: *builtin,
                    name: spec.name.clone(),
                });
            }
        }
        MappingRule::LlmSimulated {} => {}
    }
    ValidationReport {
        tool: spec.name.clone(),
        violations,
    }
}

/// Distinct `$variable` names in a GraphQL document, in first-seen order.
pub fn graphql_variables(query: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let bytes = query.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' {
            let start = i + 1;
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            if end > start && !bytes[start].is_ascii_digit() {
                let name = &query[start..end];
                if !out.iter().any(|v| v == name) {
                    out.push(name.to_string());
                }
            }
            i = end.max(i + 1);
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unbalanced braces in template")]
pub struct TemplateError;

/// `{name}` placeholders of a REST template, in order.
pub fn template_placeholders(template: &str) -> Result<Vec<String>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = template;
    loop {
        match (rest.find('{'), rest.find('}')) {
            (None, None) => return Ok(out),
            (Some(open), Some(close)) if open < close => {
                let name = &rest[open + 1..close];
                if name.is_empty() || name.contains('{') {
                    return Err(TemplateError);
                }
                out.push(name.to_string());
                rest = &rest[close + 1..];
            }
            _ => return Err(TemplateError),
        }
    }
}

// ---- argument checking -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArgumentError {
    #[error("tool `{tool}` has no argument `{argument}`")]
    UnknownArgument { tool: String, argument: String },
    #[error("tool `{tool}` is missing required argument `{argument}`")]
    MissingArgument { tool: String, argument: String },
    #[error("argument `{argument}` of `{tool}` must be {expected}")]
    TypeMismatch {
        tool: String,
        argument: String,
        expected: ValueType,
    },
}

impl ArgumentError {
    pub fn argument(&self) -> &str {
        match self {
            ArgumentError::UnknownArgument { argument, .. }
            | ArgumentError::MissingArgument { argument, .. }
            | ArgumentError::TypeMismatch { argument, .. } => argument,
        }
    }
}

/// Converts `value` to the JSON shape of `ty`, accepting the obvious string
/// spellings of numbers and booleans. `None` when no sensible coercion exists.
pub fn coerce(value: &Value, ty: ValueType) -> Option<Value> {
    match (ty, value) {
        (ValueType::String, Value::String(_)) => Some(value.clone()),
        (ValueType::String, Value::Number(n)) => Some(Value::String(n.to_string())),
        (ValueType::String, Value::Bool(b)) => Some(Value::String(b.to_string())),
        (ValueType::Integer, Value::Number(n)) => {
            if n.is_i64() || n.is_u64() {
                Some(value.clone())
            } else {
                let f = n.as_f64()?;
                if libm::trunc(f) == f && f.abs() < 9.0e15 {
                    Some(Value::Number(Number::from(f as i64)))
                } else {
                    None
                }
            }
        }
        (ValueType::Integer, Value::String(s)) => s.trim().parse::<i64>().ok().map(|i| Value::Number(i.into())),
        (ValueType::Number, Value::Number(_)) => Some(value.clone()),
        (ValueType::Number, Value::String(s)) => {
            let s = s.trim();
            if let Ok(i) = s.parse::<i64>() {
                return Some(Value::Number(i.into()));
            }
            s.parse::<f64>().ok().and_then(Number::from_f64).map(Value::Number)
        }
        (ValueType::Boolean, Value::Bool(_)) => Some(value.clone()),
        (ValueType::Boolean, Value::String(s)) => match s.trim() {
            "true" | "True" | "TRUE" => Some(Value::Bool(true)),
            "false" | "False" | "FALSE" => Some(Value::Bool(false)),
            _ => None,
        },
        (ValueType::StringList, Value::String(_)) => Some(Value::Array(alloc::vec![value.clone()])),
        (ValueType::StringList, Value::Array(items)) => {
            if items.iter().all(Value::is_string) {
                Some(value.clone())
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Validates call arguments against a spec and returns them coerced to the
/// declared types. `null` values count as absent.
pub fn check_arguments(spec: &ToolSpec, arguments: &Map<String, Value>) -> Result<Map<String, Value>, ArgumentError> {
    for name in arguments.keys() {
        if spec.argument(name).is_none() {
            return Err(ArgumentError::UnknownArgument {
                tool: spec.name.clone(),
                argument: name.clone(),
            });
        }
    }
    let mut out = Map::new();
    for a in &spec.arguments {
        match arguments.get(&a.name) {
            None | Some(Value::Null) => {
                if a.required {
                    return Err(ArgumentError::MissingArgument {
                        tool: spec.name.clone(),
                        argument: a.name.clone(),
                    });
                }
            }
            Some(v) => {
                let coerced = coerce(v, a.value_type).ok_or_else(|| ArgumentError::TypeMismatch {
                    tool: spec.name.clone(),
                    argument: a.name.clone(),
                    expected: a.value_type,
                })?;
                out.insert(a.name.clone(), coerced);
            }
        }
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::fixtures::get_indications;
    use super::*;
    use serde_json::json;

    #[test]
    fn well_formed_spec_has_empty_report() {
        // Hand-checked: one declared required arg, mapping key declared,
        // no duplicates, non-special.
        let spec = get_indications();
        assert_eq!(spec.arguments.len(), 2);
        assert!(spec.arguments[0].required);
        assert!(!spec.arguments[1].required);
        assert!(validate_spec(&spec).is_valid());
    }

    #[test]
    fn required_arg_absent_from_arguments_is_one_violation() {
        let mut v: Value = serde_json::from_str(&get_indications().to_json()).unwrap();
        v["parameter"]["required"] = json!(["drug_name", "dose"]);
        let spec: ToolSpec = serde_json::from_value(v).unwrap();
        let report = validate_spec(&spec);
        assert_eq!(report.violations, alloc::vec![Violation::RequiredNotDeclared("dose".into())]);
    }

    #[test]
    fn fda_mapping_binding_undeclared_arg_is_one_violation() {
        let mut spec = get_indications();
        if let MappingRule::FdaSearch { search_fields, .. } = &mut spec.mapping {
            search_fields.insert("dose".into(), "dosage_and_administration".into());
        }
        let report = validate_spec(&spec);
        assert_eq!(report.violations, alloc::vec![Violation::MappingUnknownArgument("dose".into())]);
    }

    #[test]
    fn argument_order_survives_round_trip() {
        let spec = get_indications();
        let back = ToolSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        let names: Vec<&str> = back.arguments.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["drug_name", "limit"]);
        let desc = spec.description_json();
        assert!(desc.find("drug_name").unwrap() < desc.find("\"limit\"").unwrap());
        assert!(!desc.contains("mapping"));
    }

    #[test]
    fn unknown_value_type_and_category_rejected() {
        let mut v: Value = serde_json::from_str(&get_indications().to_json()).unwrap();
        v["parameter"]["properties"]["drug_name"]["type"] = json!("date");
        assert!(serde_json::from_value::<ToolSpec>(v).is_err());

        let mut v: Value = serde_json::from_str(&get_indications().to_json()).unwrap();
        v["category"] = json!("astrology");
        assert!(serde_json::from_value::<ToolSpec>(v).is_err());

        let mut v: Value = serde_json::from_str(&get_indications().to_json()).unwrap();
        v.as_object_mut().unwrap().remove("description");
        assert!(serde_json::from_value::<ToolSpec>(v).is_err());
    }

    #[test]
    fn duplicate_property_keys_are_reported() {
        let text = get_indications().to_json().replacen(
            "\"limit\"",
            "\"drug_name\"",
            1,
        );
        let spec = ToolSpec::from_json(&text).unwrap();
        assert!(validate_spec(&spec)
            .violations
            .contains(&Violation::DuplicateArgument("drug_name".into())));
    }

    #[test]
    fn graphql_variable_scan() {
        let q = "query q($efoId: String!, $size: Int) { disease(efoId: $efoId) { rows(size: $size) } }";
        assert_eq!(graphql_variables(q), ["efoId", "size"]);
    }

    #[test]
    fn graphql_binding_checks() {
        let spec = ToolSpec {
            name: "get_associated_targets".into(),
            description: "d".into(),
            category: Category::AssociationLinks,
            arguments: alloc::vec![ArgSpec {
                name: "efo_id".into(),
                description: "".into(),
                value_type: ValueType::String,
                required: true,
            }],
            unknown_required: Vec::new(),
            mapping: MappingRule::GraphQlQuery {
                query_text: "query q($efoId: String!, $page: Int) { disease(efoId: $efoId) { id } }".into(),
                variable_bindings: [("efo_id".to_string(), "efoId".to_string())].into_iter().collect(),
            },
        };
        assert_eq!(
            validate_spec(&spec).violations,
            alloc::vec![Violation::UnboundQueryVariable("page".into())]
        );
    }

    #[test]
    fn rest_template_checks() {
        assert_eq!(template_placeholders("/a/{x}/b/{y}").unwrap(), ["x", "y"]);
        assert!(template_placeholders("/a/{x").is_err());
        assert!(template_placeholders("/a/x}").is_err());
        assert!(template_placeholders("/a/{}").is_err());
    }

    #[test]
    fn special_tools_validate_and_mismatch_detected() {
        for s in SpecialTool::ALL {
            assert!(validate_spec(&s.spec()).is_valid(), "{:?}", s);
        }
        let mut spec = SpecialTool::Finish.spec();
        spec.name = "Stop".into();
        assert_eq!(validate_spec(&spec).violations.len(), 1);
    }

    #[test]
    fn check_arguments_error_paths() {
        let spec = get_indications();
        let args = |v: Value| v.as_object().unwrap().clone();
        let err = check_arguments(&spec, &args(json!({}))).unwrap_err();
        assert_eq!(
            err,
            ArgumentError::MissingArgument {
                tool: "get_indications".into(),
                argument: "drug_name".into()
            }
        );
        let err = check_arguments(&spec, &args(json!({"drug_name": "x", "dose": 1}))).unwrap_err();
        assert_eq!(err.argument(), "dose");
        let err = check_arguments(&spec, &args(json!({"drug_name": "x", "limit": "many"}))).unwrap_err();
        assert!(matches!(err, ArgumentError::TypeMismatch { .. }));
        let ok = check_arguments(&spec, &args(json!({"drug_name": "x", "limit": "3"}))).unwrap();
        assert_eq!(ok["limit"], json!(3));
        let ok = check_arguments(&spec, &args(json!({"drug_name": "x", "limit": null}))).unwrap();
        assert!(!ok.contains_key("limit"));
    }

    #[test]
    fn coercion_table() {
        assert_eq!(coerce(&json!(2.0), ValueType::Integer), Some(json!(2)));
        assert_eq!(coerce(&json!(2.5), ValueType::Integer), None);
        assert_eq!(coerce(&json!("2.5"), ValueType::Number), Some(json!(2.5)));
        assert_eq!(coerce(&json!("a"), ValueType::StringList), Some(json!(["a"])));
        assert_eq!(coerce(&json!(["a", 1]), ValueType::StringList), None);
        assert_eq!(coerce(&json!("yes"), ValueType::Boolean), None);
        assert_eq!(coerce(&json!(true), ValueType::String), Some(json!("true")));
    }
}
