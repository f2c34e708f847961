#![allow(dead_code)]

use proptest::prelude::*;
use serde_json::{json, Map, Value};
use toolverse_core::registry::Registry;
use toolverse_core::spec::ToolSpec;

pub const FDA_FIELDS: &[&str] = &[
    "openfda.brand_name",
    "openfda.generic_name",
    "indications_and_usage",
    "warnings",
    "contraindications",
];

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Fda,
    GraphQl,
    Rest,
}

/// A random valid API tool spec. Argument `k` is named `{stem}_{k}` and is a
/// string unless `ints[k]`.
pub fn spec_json(name: &str, kind: Kind, ints: &[bool], fields: &[usize], required: &[bool]) -> Value {
    let args: Vec<String> = (0..ints.len()).map(|k| format!("arg_{k}")).collect();
    let mut props = Map::new();
    for (k, a) in args.iter().enumerate() {
        let ty = if ints[k] { "integer" } else { "string" };
        props.insert(a.clone(), json!({"type": ty, "description": format!("argument {k}")}));
    }
    let req: Vec<&String> = args.iter().zip(required).filter(|(_, r)| **r).map(|(a, _)| a).collect();
    let mapping = match kind {
        Kind::Fda => {
            let mut search = Map::new();
            for (k, a) in args.iter().enumerate() {
                search.insert(a.clone(), json!(FDA_FIELDS[fields[k] % FDA_FIELDS.len()]));
            }
            json!({"kind": "fda_search", "search_fields": search, "return_fields": ["openfda.brand_name", "warnings"]})
        }
        Kind::GraphQl => {
            let decls: Vec<String> = args
                .iter()
                .enumerate()
                .map(|(k, _)| format!("$v{k}: {}", if ints[k] { "Int" } else { "String!" }))
                .collect();
            let uses: Vec<String> = (0..args.len()).map(|k| format!("a{k}: $v{k}")).collect();
            let query = format!("query q({}) {{ thing({}) {{ id name }} }}", decls.join(", "), uses.join(", "));
            let mut bind = Map::new();
            for (k, a) in args.iter().enumerate() {
                bind.insert(a.clone(), json!(format!("v{k}")));
            }
            json!({"kind": "graphql", "query_text": query, "variable_bindings": bind})
        }
        Kind::Rest => {
            let mut query = Map::new();
            for (k, a) in args.iter().enumerate().skip(1) {
                query.insert(a.clone(), json!(format!("p{k}")));
            }
            json!({"kind": "rest", "endpoint_template": format!("/v3/api/entity/{{{}}}", args[0]), "query_bindings": query})
        }
    };
    json!({
        "name": name,
        "description": format!("Tool {name}."),
        "category": "search",
        "parameter": {"type": "object", "properties": props, "required": req},
        "mapping": mapping,
    })
}

pub fn kind_strategy() -> impl Strategy<Value = Kind> {
    prop_oneof![Just(Kind::Fda), Just(Kind::GraphQl), Just(Kind::Rest)]
}

/// (spec, arguments filling every declared argument)
pub fn spec_and_args() -> impl Strategy<Value = (ToolSpec, Map<String, Value>)> {
    (1usize..4)
        .prop_flat_map(|n| {
            (
                "[a-z]{3,8}",
                kind_strategy(),
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(0usize..5, n),
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec("[A-Za-z0-9 ]{1,12}", n),
                proptest::collection::vec(1i64..500, n),
            )
        })
        .prop_map(|(name, kind, mut ints, fields, required, strs, nums)| {
            // REST path placeholders and FDA clauses take strings.
            if !matches!(kind, Kind::GraphQl) {
                ints.iter_mut().for_each(|i| *i = false);
            }
            let spec: ToolSpec = serde_json::from_value(spec_json(&format!("get_{name}"), kind, &ints, &fields, &required)).unwrap();
            let mut args = Map::new();
            for k in 0..ints.len() {
                let v = if ints[k] { json!(nums[k]) } else { json!(strs[k].trim().to_string() + "x") };
                args.insert(format!("arg_{k}"), v);
            }
            (spec, args)
        })
}

/// A registry of `n` random API tools with distinct names.
pub fn registry_strategy(max: usize) -> impl Strategy<Value = Registry> {
    proptest::collection::btree_set("[a-z]{4,9}", 1..max).prop_flat_map(|names| {
        let n = names.len();
        (
            Just(names.into_iter().collect::<Vec<_>>()),
            proptest::collection::vec(kind_strategy(), n),
            proptest::collection::vec(1usize..4, n),
        )
            .prop_map(|(names, kinds, arities)| {
                let specs = names.iter().zip(kinds).zip(arities).map(|((name, kind), a)| {
                    let ints = vec![false; a];
                    let fields: Vec<usize> = (0..a).collect();
                    let req = vec![true; a];
                    serde_json::from_value::<ToolSpec>(spec_json(&format!("t_{name}"), kind, &ints, &fields, &req)).unwrap()
                });
                Registry::from_specs(specs).unwrap()
            })
    })
}
