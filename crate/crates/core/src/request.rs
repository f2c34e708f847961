//! Compiles a function call plus a mapping rule into a concrete HTTP request.
//!
//! All builders are pure: the same spec, arguments and endpoints always give a
//! byte-identical [`CompiledRequest`]. Credentials never enter a compiled
//! request; transports attach them at send time.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::spec::{coerce, graphql_variables, template_placeholders, ArgSpec, MappingRule, ToolSpec, ValueType};

/// Everything but RFC 3986 unreserved characters is escaped.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub const DEFAULT_FDA_BASE: &str = "https://api.fda.gov/drug/label.json";
pub const DEFAULT_OPEN_TARGETS_BASE: &str = "https://api.platform.opentargets.org/api/v4/graphql";
pub const DEFAULT_MONARCH_BASE: &str = "https://api-v3.monarchinitiative.org/v3/api";
pub const DEFAULT_FDA_LIMIT: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub fda_base: String,
    pub open_targets_base: String,
    pub monarch_base: String,
    pub fda_limit: u32,
}

impl Default for Endpoints {
    fn default() -> Self {
        Endpoints {
            fda_base: DEFAULT_FDA_BASE.to_string(),
            open_targets_base: DEFAULT_OPEN_TARGETS_BASE.to_string(),
            monarch_base: DEFAULT_MONARCH_BASE.to_string(),
            fda_limit: DEFAULT_FDA_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GET")]
    Get,
    #[serde(rename = "POST")]
    Post,
}

/// Which upstream envelope the response will be in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Api {
    OpenFda,
    OpenTargets,
    Monarch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledRequest {
    pub api: Api,
    pub method: Method,
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    /// Expected response content type.
    pub accept: String,
    /// Record fields kept when unwrapping the response (openFDA return fields).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub projection: Vec<String>,
}

impl CompiledRequest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    /// Stable key for caches and cassettes.
    pub fn hash(&self) -> String {
        crate::util::sha256_hex(self.to_json().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("placeholder `{0}` has no argument value")]
    UnboundPlaceholder(String),
    #[error("query variable `${0}` has no binding")]
    UnboundVariable(String),
    #[error("argument `{0}` is not used by the mapping")]
    ExtraArgument(String),
    #[error("argument `{argument}` cannot be coerced to {expected}")]
    Coercion { argument: String, expected: ValueType },
    #[error("malformed endpoint template `{0}`")]
    MalformedTemplate(String),
    #[error("search mapping produced no clauses")]
    NoSearchTerms,
    #[error("mapping kind `{0}` does not compile to an HTTP request")]
    NotHttp(&'static str),
}

fn encode(s: &str) -> String {
    utf8_percent_encode(s, COMPONENT).to_string()
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn value_texts(v: &Value) -> Vec<String> {
    match v {
        Value::Array(items) => items.iter().map(scalar_text).collect(),
        other => alloc::vec![scalar_text(other)],
    }
}

fn reject_extra(arguments: &Map<String, Value>, used: impl Fn(&str) -> bool) -> Result<(), RequestError> {
    for name in arguments.keys() {
        if !used(name) {
            return Err(RequestError::ExtraArgument(name.clone()));
        }
    }
    Ok(())
}

/// openFDA search: one `field:"value"` clause per bound argument, joined by
/// `+AND+` in document-field order; list values become an OR group. An integer argument named
/// `limit` that the mapping does not bind overrides the default page size.
pub fn build_fda_request(
    search_fields: &BTreeMap<String, String>,
    return_fields: &[String],
    arguments: &Map<String, Value>,
    endpoints: &Endpoints,
) -> Result<CompiledRequest, RequestError> {
    let limit_override = if search_fields.contains_key("limit") {
        None
    } else {
        arguments.get("limit")
    };
    reject_extra(arguments, |n| search_fields.contains_key(n) || (n == "limit" && limit_override.is_some()))?;

    // Ordered by document field so the URL does not depend on argument names.
    let mut clauses: Vec<(&String, String)> = Vec::new();
    for (arg, field) in search_fields {
        let Some(value) = arguments.get(arg) else { continue };
        let parts: Vec<String> = value_texts(value)
            .iter()
            .map(|t| format!("{field}:%22{}%22", encode(t)))
            .collect();
        match parts.len() {
            0 => {}
            1 => clauses.push((field, parts.into_iter().next().unwrap_or_default())),
            _ => clauses.push((field, format!("({})", parts.join("+OR+")))),
        }
    }
    clauses.sort();
    let clauses: Vec<String> = clauses.into_iter().map(|(_, c)| c).collect();
    if clauses.is_empty() {
        return Err(RequestError::NoSearchTerms);
    }
    let limit = match limit_override {
        Some(v) => coerce(v, ValueType::Integer)
            .and_then(|v| v.as_u64())
            .ok_or(RequestError::Coercion {
                argument: "limit".into(),
                expected: ValueType::Integer,
            })?,
        None => u64::from(endpoints.fda_limit),
    };
    Ok(CompiledRequest {
        api: Api::OpenFda,
        method: Method::Get,
        url: format!("{}?search={}&limit={limit}", endpoints.fda_base, clauses.join("+AND+")),
        body: None,
        accept: "application/json".into(),
        projection: return_fields.to_vec(),
    })
}

/// Open Targets GraphQL: POST `{"query", "variables"}` with argument values
/// coerced to their declared types. Absent optional arguments are omitted.
pub fn build_graphql_request(
    query_text: &str,
    variable_bindings: &BTreeMap<String, String>,
    arguments: &Map<String, Value>,
    arg_specs: &[ArgSpec],
    endpoints: &Endpoints,
) -> Result<CompiledRequest, RequestError> {
    let bound: Vec<&String> = variable_bindings.values().collect();
    for var in graphql_variables(query_text) {
        if !bound.contains(&&var) {
            return Err(RequestError::UnboundVariable(var));
        }
    }
    reject_extra(arguments, |n| variable_bindings.contains_key(n))?;

    let mut variables = Map::new();
    for (arg, var) in variable_bindings {
        let Some(value) = arguments.get(arg) else { continue };
        let ty = arg_specs
            .iter()
            .find(|a| &a.name == arg)
            .map(|a| a.value_type)
            .unwrap_or(ValueType::String);
        let coerced = coerce(value, ty).ok_or_else(|| RequestError::Coercion {
            argument: arg.clone(),
            expected: ty,
        })?;
        variables.insert(var.clone(), coerced);
    }
    let body = serde_json::json!({"query": query_text, "variables": Value::Object(variables)});
    Ok(CompiledRequest {
        api: Api::OpenTargets,
        method: Method::Post,
        url: endpoints.open_targets_base.clone(),
        body: Some(crate::util::canonical_json(&body)),
        accept: "application/json".into(),
        projection: Vec::new(),
    })
}

/// Monarch REST: `{arg}` placeholders are path-encoded, query bindings are
/// appended sorted by parameter name.
pub fn build_rest_request(
    endpoint_template: &str,
    query_bindings: &BTreeMap<String, String>,
    arguments: &Map<String, Value>,
    endpoints: &Endpoints,
) -> Result<CompiledRequest, RequestError> {
    let placeholders =
        template_placeholders(endpoint_template).map_err(|_| RequestError::MalformedTemplate(endpoint_template.into()))?;
    reject_extra(arguments, |n| {
        placeholders.iter().any(|p| p == n) || query_bindings.contains_key(n)
    })?;

    let mut path = String::from(endpoint_template);
    for p in &placeholders {
        let value = arguments
            .get(p)
            .ok_or_else(|| RequestError::UnboundPlaceholder(p.clone()))?;
        let text = value_texts(value).join(",");
        path = path.replace(&format!("{{{p}}}"), &encode(&text));
    }
    let mut params: Vec<(String, String)> = Vec::new();
    for (arg, param) in query_bindings {
        if let Some(value) = arguments.get(arg) {
            for t in value_texts(value) {
                params.push((param.clone(), t));
            }
        }
    }
    params.sort();
    let mut url = format!("{}{}", endpoints.monarch_base, path);
    if !params.is_empty() {
        let qs: Vec<String> = params
            .iter()
            .map(|(k, v)| format!("{}={}", encode(k), encode(v)))
            .collect();
        url.push('?');
        url.push_str(&qs.join("&"));
    }
    Ok(CompiledRequest {
        api: Api::Monarch,
        method: Method::Get,
        url,
        body: None,
        accept: "application/json".into(),
        projection: Vec::new(),
    })
}

/// Dispatches on the mapping kind. `arguments` should already have passed
/// [`crate::spec::check_arguments`].
pub fn compile(spec: &ToolSpec, arguments: &Map<String, Value>, endpoints: &Endpoints) -> Result<CompiledRequest, RequestError> {
    match &spec.mapping {
        MappingRule::FdaSearch {
            search_fields,
            return_fields,
        } => build_fda_request(search_fields, return_fields, arguments, endpoints),
        MappingRule::GraphQlQuery {
            query_text,
            variable_bindings,
        } => build_graphql_request(query_text, variable_bindings, arguments, &spec.arguments, endpoints),
        MappingRule::RestCall {
            endpoint_template,
            query_bindings,
        } => build_rest_request(endpoint_template, query_bindings, arguments, endpoints),
        other => Err(RequestError::NotHttp(other.kind())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    fn fields(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn fda_single_clause() {
        let req = build_fda_request(
            &fields(&[("drug_name", "openfda.brand_name")]),
            &["indications_and_usage".into()],
            &args(json!({"drug_name": "Bizengri"})),
            &Endpoints::default(),
        )
        .unwrap();
        assert_eq!(
            req.url,
            "https://api.fda.gov/drug/label.json?search=openfda.brand_name:%22Bizengri%22&limit=5"
        );
        assert_eq!(req.projection, ["indications_and_usage"]);
    }

    #[test]
    fn fda_two_clauses_joined_with_and() {
        let req = build_fda_request(
            &fields(&[("drug_name", "openfda.brand_name"), ("route", "openfda.route")]),
            &[],
            &args(json!({"drug_name": "Advil", "route": "ORAL"})),
            &Endpoints::default(),
        )
        .unwrap();
        assert!(req
            .url
            .contains("search=openfda.brand_name:%22Advil%22+AND+openfda.route:%22ORAL%22"));
    }

    #[test]
    fn fda_spaces_are_quoted_and_encoded() {
        let req = build_fda_request(
            &fields(&[("indication", "indications_and_usage")]),
            &[],
            &args(json!({"indication": "breast cancer"})),
            &Endpoints::default(),
        )
        .unwrap();
        assert!(req.url.contains("indications_and_usage:%22breast%20cancer%22"));
    }

    #[test]
    fn graphql_variables_typed() {
        let bindings = fields(&[("efo_id", "efoId"), ("size", "size")]);
        let specs = [
            ArgSpec {
                name: "efo_id".into(),
                description: String::new(),
                value_type: ValueType::String,
                required: true,
            },
            ArgSpec {
                name: "size".into(),
                description: String::new(),
                value_type: ValueType::Integer,
                required: false,
            },
        ];
        let q = "query q($efoId: String!, $size: Int) { disease(efoId: $efoId) { id } }";
        let req = build_graphql_request(q, &bindings, &args(json!({"efo_id": "EFO_0000305", "size": "10"})), &specs, &Endpoints::default()).unwrap();
        let body: Value = serde_json::from_str(req.body.as_deref().unwrap()).unwrap();
        assert_eq!(body["variables"]["efoId"], "EFO_0000305");
        assert_eq!(body["variables"]["size"], json!(10));
        assert_eq!(req.method, Method::Post);
    }

    #[test]
    fn graphql_zero_variables() {
        let req = build_graphql_request("{ meta { apiVersion { x } } }", &BTreeMap::new(), &Map::new(), &[], &Endpoints::default()).unwrap();
        let body: Value = serde_json::from_str(req.body.as_deref().unwrap()).unwrap();
        assert_eq!(body["variables"], json!({}));
    }

    #[test]
    fn graphql_unbound_variable() {
        let err = build_graphql_request("query q($x: Int) { a(x: $x) }", &BTreeMap::new(), &Map::new(), &[], &Endpoints::default()).unwrap_err();
        assert_eq!(err, RequestError::UnboundVariable("x".into()));
    }

    #[test]
    fn rest_path_encoding() {
        let req = build_rest_request("/phenotypes/{hpo_id}", &BTreeMap::new(), &args(json!({"hpo_id": "HP:0000001"})), &Endpoints::default()).unwrap();
        assert!(req.url.ends_with("/phenotypes/HP%3A0000001"));
    }

    #[test]
    fn rest_extra_argument_rejected() {
        let err = build_rest_request("/phenotypes/{hpo_id}", &BTreeMap::new(), &args(json!({"hpo_id": "HP:1", "verbose": true})), &Endpoints::default()).unwrap_err();
        assert_eq!(err, RequestError::ExtraArgument("verbose".into()));
    }

    #[test]
    fn rest_unbound_placeholder() {
        let err = build_rest_request("/entity/{id}", &BTreeMap::new(), &Map::new(), &Endpoints::default()).unwrap_err();
        assert_eq!(err, RequestError::UnboundPlaceholder("id".into()));
    }
}
