//! Tool-spec augmentation: swaps names and descriptions for precomputed
//! rephrasings and records the renames so calls can be rewritten to match.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::call::FunctionCall;
use crate::llm::{chat, ChatError, ChatRequest, ChatService};
use crate::prompts;
use crate::registry::{Registry, RegistryError};
use crate::spec::{MappingRule, ToolSpec};
use crate::util::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArgumentPool {
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default)]
    pub descriptions: Vec<String>,
}

/// Rephrasings of one tool, generated offline.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RephrasePool {
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default)]
    pub descriptions: Vec<String>,
    #[serde(default)]
    pub arguments: BTreeMap<String, ArgumentPool>,
}

/// Sidecar file contents: tool name -> pool.
pub type RephraseSidecar = BTreeMap<String, RephrasePool>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ToolRemap {
    pub name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, String>,
}

/// Old -> new names for tools and their arguments.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NameRemap {
    pub tools: BTreeMap<String, ToolRemap>,
}

impl NameRemap {
    pub fn is_identity(&self) -> bool {
        self.tools
            .iter()
            .all(|(old, r)| *old == r.name && r.arguments.iter().all(|(a, b)| a == b))
    }

    pub fn tool_name<'a>(&'a self, old: &'a str) -> &'a str {
        self.tools.get(old).map(|r| r.name.as_str()).unwrap_or(old)
    }

    /// Renames the tool and its arguments; values are untouched.
    pub fn apply(&self, call: &FunctionCall) -> FunctionCall {
        let Some(remap) = self.tools.get(&call.tool_name) else {
            return call.clone();
        };
        let mut arguments = Map::new();
        for (k, v) in &call.arguments {
            let key = remap.arguments.get(k).cloned().unwrap_or_else(|| k.clone());
            arguments.insert(key, v.clone());
        }
        FunctionCall::new(call.call_id.clone(), remap.name.clone(), arguments)
    }

    pub fn extend(&mut self, other: NameRemap) {
        self.tools.extend(other.tools);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub spec: ToolSpec,
    pub remap: NameRemap,
    /// Fields left as they were because the pool had nothing usable.
    pub unmodified: Vec<String>,
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn pick<'p, R: Rng>(rng: &mut R, pool: &'p [String], ok: impl Fn(&str) -> bool) -> Option<&'p str> {
    let usable: Vec<&str> = pool.iter().map(String::as_str).filter(|s| ok(s)).collect();
    if usable.is_empty() {
        None
    } else {
        Some(usable[rng.random_range(0..usable.len())])
    }
}

/// Arguments that the mapping refers to by a fixed name rather than through
/// a binding (the openFDA page-size argument), and so cannot be renamed.
fn pinned_arguments(spec: &ToolSpec) -> BTreeSet<String> {
    match &spec.mapping {
        MappingRule::FdaSearch { search_fields, .. } => spec
            .arguments
            .iter()
            .filter(|a| !search_fields.contains_key(&a.name))
            .map(|a| a.name.clone())
            .collect(),
        _ => BTreeSet::new(),
    }
}

fn rename_placeholders(template: &str, renames: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                out.push('{');
                out.push_str(renames.get(name).map(String::as_str).unwrap_or(name));
                out.push('}');
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn rename_keys(map: &BTreeMap<String, String>, renames: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    map.iter()
        .map(|(k, v)| (renames.get(k).cloned().unwrap_or_else(|| k.clone()), v.clone()))
        .collect()
}

fn rename_mapping(mapping: &MappingRule, renames: &BTreeMap<String, String>) -> MappingRule {
    match mapping {
        MappingRule::FdaSearch {
            search_fields,
            return_fields,
        } => MappingRule::FdaSearch {
            search_fields: rename_keys(search_fields, renames),
            return_fields: return_fields.clone(),
        },
        MappingRule::GraphQlQuery {
            query_text,
            variable_bindings,
        } => MappingRule::GraphQlQuery {
            query_text: query_text.clone(),
            variable_bindings: rename_keys(variable_bindings, renames),
        },
        MappingRule::RestCall {
            endpoint_template,
            query_bindings,
        } => MappingRule::RestCall {
            endpoint_template: rename_placeholders(endpoint_template, renames),
            query_bindings: rename_keys(query_bindings, renames),
        },
        other => other.clone(),
    }
}

/// Picks one rewrite per field from `pool`. `taken` holds tool names that the
/// new name must avoid. Special tools are returned unchanged.
pub fn augment_with(spec: &ToolSpec, pool: &RephrasePool, seed: u64, taken: &BTreeSet<String>) -> Augmented {
    let mut unmodified = Vec::new();
    if spec.is_special() {
        return Augmented {
            spec: spec.clone(),
            remap: NameRemap::default(),
            unmodified,
        };
    }
    let mut rng = rng_from_seed(derive_seed(seed, &spec.name));
    let mut out = spec.clone();

    match pick(&mut rng, &pool.names, |n| is_identifier(n) && !taken.contains(n)) {
        Some(n) => out.name = n.to_string(),
        None => unmodified.push("name".to_string()),
    }
    match pick(&mut rng, &pool.descriptions, |d| !d.trim().is_empty()) {
        Some(d) => out.description = d.to_string(),
        None => unmodified.push("description".to_string()),
    }

    let pinned = pinned_arguments(spec);
    let mut used: BTreeSet<String> = spec.arguments.iter().map(|a| a.name.clone()).collect();
    let mut renames = BTreeMap::new();
    for arg in out.arguments.iter_mut() {
        let arg_pool = pool.arguments.get(&arg.name).cloned().unwrap_or_default();
        let old = arg.name.clone();
        if pinned.contains(&old) {
            unmodified.push(alloc::format!("argument {old} name"));
        } else {
            match pick(&mut rng, &arg_pool.names, |n| is_identifier(n) && !used.contains(n)) {
                Some(n) => {
                    used.insert(n.to_string());
                    renames.insert(old.clone(), n.to_string());
                    arg.name = n.to_string();
                }
                None => unmodified.push(alloc::format!("argument {old} name")),
            }
        }
        match pick(&mut rng, &arg_pool.descriptions, |d| !d.trim().is_empty()) {
            Some(d) => arg.description = d.to_string(),
            None => unmodified.push(alloc::format!("argument {old} description")),
        }
    }
    out.mapping = rename_mapping(&spec.mapping, &renames);
    out.unknown_required = spec
        .unknown_required
        .iter()
        .map(|n| renames.get(n).cloned().unwrap_or_else(|| n.clone()))
        .collect();

    let mut remap = NameRemap::default();
    if out.name != spec.name || !renames.is_empty() {
        remap.tools.insert(
            spec.name.clone(),
            ToolRemap {
                name: out.name.clone(),
                arguments: renames,
            },
        );
    }
    Augmented {
        spec: out,
        remap,
        unmodified,
    }
}

pub fn augment_tool_spec(spec: &ToolSpec, pool: &RephrasePool, seed: u64) -> Augmented {
    augment_with(spec, pool, seed, &BTreeSet::new())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedRegistry {
    pub registry: Registry,
    pub remap: NameRemap,
    /// Tool -> fields left unmodified.
    pub unmodified: BTreeMap<String, Vec<String>>,
}

/// Augments every tool that has a pool, keeping tool names unique.
pub fn augment_registry(registry: &Registry, sidecar: &RephraseSidecar, seed: u64) -> Result<AugmentedRegistry, RegistryError> {
    let mut taken: BTreeSet<String> = registry.names().map(str::to_string).collect();
    let mut specs = Vec::new();
    let mut remap = NameRemap::default();
    let mut unmodified = BTreeMap::new();
    for spec in registry.api_tools() {
        let Some(pool) = sidecar.get(&spec.name) else {
            specs.push(spec.clone());
            continue;
        };
        let a = augment_with(spec, pool, seed, &taken);
        if a.spec.name != spec.name {
            taken.insert(a.spec.name.clone());
        }
        if !a.unmodified.is_empty() {
            unmodified.insert(spec.name.clone(), a.unmodified);
        }
        remap.extend(a.remap);
        specs.push(a.spec);
    }
    Ok(AugmentedRegistry {
        registry: Registry::from_specs(specs)?,
        remap,
        unmodified,
    })
}

/// Distinct non-empty lines of a rephrasing reply, list markers removed,
/// without the original text.
pub fn parse_rephrasings(reply: &str, original: &str, count: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in reply.lines() {
        let t = line
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '-' | '*' | '.' | ')'))
            .trim()
            .trim_matches('`');
        if t.is_empty() || t == original || out.iter().any(|o| o == t) {
            continue;
        }
        out.push(t.to_string());
        if out.len() == count {
            break;
        }
    }
    out
}

fn rephrase(chat_service: &dyn ChatService, what: &str, text: &str, count: usize) -> Result<Vec<String>, ChatError> {
    let n = count.to_string();
    let prompt = prompts::fill(prompts::REPHRASE, &[("count", &n), ("what", what), ("text", text)]);
    Ok(parse_rephrasings(&chat(chat_service, &ChatRequest::single(prompt))?, text, count))
}

/// Asks for `count` rewrites of the tool name, the description and every
/// argument name and description.
pub fn build_rephrase_pool(spec: &ToolSpec, chat_service: &dyn ChatService, count: usize) -> Result<RephrasePool, ChatError> {
    let mut arguments = BTreeMap::new();
    for a in &spec.arguments {
        arguments.insert(
            a.name.clone(),
            ArgumentPool {
                names: rephrase(chat_service, "argument name", &a.name, count)?,
                descriptions: rephrase(chat_service, "argument description", &a.description, count)?,
            },
        );
    }
    Ok(RephrasePool {
        names: rephrase(chat_service, "tool name", &spec.name, count)?,
        descriptions: rephrase(chat_service, "tool description", &spec.description, count)?,
        arguments,
    })
}
