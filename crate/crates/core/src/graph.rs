//! Directed tool graph: an edge producer -> consumer means the producer's
//! output can feed one of the consumer's arguments, as decided by a judge.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{chat, parse_verdict, ChatError, ChatRequest, ChatService};
use crate::prompts;
use crate::registry::Registry;
use crate::spec::ToolSpec;
use crate::util::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ToolGraph {
    pub nodes: BTreeSet<String>,
    pub edges: Vec<Edge>,
}

/// One judged pair, as stored in the edge cache (one JSON line each).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub verdict: bool,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub judge: String,
    #[serde(default)]
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("judge failed on {src} -> {dst}: {source}")]
    Judge { src: String, dst: String, source: ChatError },
    #[error("tool `{0}` is not in the graph")]
    UnknownTool(String),
    #[error("chain length must be at least 1")]
    ZeroLength,
    #[error("edge {0} -> {1} has an endpoint outside the registry")]
    DanglingEdge(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
}

/// Verdicts already obtained, keyed by (src, dst, judge model, prompt hash).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeCache {
    records: BTreeMap<(String, String, String, String), EdgeRecord>,
}

impl EdgeCache {
    pub fn new() -> Self {
        EdgeCache::default()
    }

    pub fn from_records<I: IntoIterator<Item = EdgeRecord>>(records: I) -> Self {
        let mut cache = EdgeCache::new();
        for r in records {
            cache.insert(r);
        }
        cache
    }

    pub fn insert(&mut self, record: EdgeRecord) {
        let key = (
            record.src.clone(),
            record.dst.clone(),
            record.judge.clone(),
            record.prompt_hash.clone(),
        );
        self.records.insert(key, record);
    }

    pub fn get(&self, src: &str, dst: &str, judge: &str, prompt_hash: &str) -> Option<&EdgeRecord> {
        self.records
            .get(&(src.to_string(), dst.to_string(), judge.to_string(), prompt_hash.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.records.values()
    }
}

/// Ordered pairs of distinct API tools, in name order.
pub fn candidate_pairs(registry: &Registry) -> Vec<(&ToolSpec, &ToolSpec)> {
    let tools: Vec<&ToolSpec> = registry.api_tools().collect();
    let mut pairs = Vec::with_capacity(tools.len() * tools.len().saturating_sub(1));
    for a in &tools {
        for b in &tools {
            if a.name != b.name {
                pairs.push((*a, *b));
            }
        }
    }
    pairs
}

/// Asks the judge about one pair. `Ok(None)` means the reply was not a clean
/// YES/NO and the pair is skipped.
pub fn judge_pair(
    judge: &dyn ChatService,
    producer: &ToolSpec,
    consumer: &ToolSpec,
) -> Result<Option<EdgeRecord>, ChatError> {
    let prompt = prompts::fill(
        prompts::GRAPH_JUDGE,
        &[
            ("producer", &producer.description_json()),
            ("consumer", &consumer.description_json()),
        ],
    );
    let reply = chat(judge, &ChatRequest::single(prompt))?;
    Ok(parse_verdict(&reply).map(|(verdict, rationale)| EdgeRecord {
        src: producer.name.clone(),
        dst: consumer.name.clone(),
        verdict,
        rationale,
        judge: judge.model_id().to_string(),
        prompt_hash: prompts::template_hash(prompts::GRAPH_JUDGE),
    }))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphBuild {
    pub graph: ToolGraph,
    /// Pairs whose judge reply was ambiguous.
    pub skipped: Vec<(String, String)>,
    /// Verdicts obtained in this build, to append to the edge cache.
    pub new_records: Vec<EdgeRecord>,
}

/// Judges every ordered pair of API tools, reusing cached verdicts for the
/// same judge and prompt. With an empty cache this is a full rebuild; with
/// the previous cache only new pairs are judged.
pub fn build_tool_graph(
    registry: &Registry,
    judge: &dyn ChatService,
    cache: &EdgeCache,
) -> Result<GraphBuild, GraphError> {
    let hash = prompts::template_hash(prompts::GRAPH_JUDGE);
    let mut records = Vec::new();
    let mut new_records = Vec::new();
    let mut skipped = Vec::new();
    for (a, b) in candidate_pairs(registry) {
        if let Some(r) = cache.get(&a.name, &b.name, judge.model_id(), &hash) {
            records.push(r.clone());
            continue;
        }
        match judge_pair(judge, a, b) {
            Ok(Some(r)) => {
                records.push(r.clone());
                new_records.push(r);
            }
            Ok(None) => skipped.push((a.name.clone(), b.name.clone())),
            Err(source) => {
                return Err(GraphError::Judge {
                    src: a.name.clone(),
                    dst: b.name.clone(),
                    source,
                })
            }
        }
    }
    Ok(GraphBuild {
        graph: assemble_graph(registry, &records),
        skipped,
        new_records,
    })
}

/// Graph over the registry's API tools with the affirmative verdicts as
/// edges. Records naming tools outside the registry, or self-loops, are ignored.
pub fn assemble_graph(registry: &Registry, records: &[EdgeRecord]) -> ToolGraph {
    let nodes: BTreeSet<String> = registry.api_tools().map(|s| s.name.clone()).collect();
    let mut edges: BTreeMap<(String, String), Edge> = BTreeMap::new();
    for r in records {
        if r.verdict && r.src != r.dst && nodes.contains(&r.src) && nodes.contains(&r.dst) {
            edges.insert(
                (r.src.clone(), r.dst.clone()),
                Edge {
                    src: r.src.clone(),
                    dst: r.dst.clone(),
                    rationale: (!r.rationale.is_empty()).then(|| r.rationale.clone()),
                },
            );
        }
    }
    ToolGraph {
        nodes,
        edges: edges.into_values().collect(),
    }
}

impl ToolGraph {
    pub fn successors(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.src == name)
            .map(|e| e.dst.as_str())
            .collect()
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    /// Every edge endpoint is a node of the registry and no edge is a self-loop.
    pub fn check(&self, registry: &Registry) -> Result<(), GraphError> {
        for e in &self.edges {
            if e.src == e.dst {
                return Err(GraphError::SelfLoop(e.src.clone()));
            }
            if !registry.contains(&e.src) || !registry.contains(&e.dst) {
                return Err(GraphError::DanglingEdge(e.src.clone(), e.dst.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolChain {
    pub tools: Vec<String>,
    /// Set when the walk ran out of unvisited successors before `length`.
    pub truncated: bool,
}

/// Random directed walk of at most `length` distinct tools from `start`.
pub fn sample_tool_chain(graph: &ToolGraph, start: &str, length: usize, seed: u64) -> Result<ToolChain, GraphError> {
    if length == 0 {
        return Err(GraphError::ZeroLength);
    }
    if !graph.nodes.contains(start) {
        return Err(GraphError::UnknownTool(start.to_string()));
    }
    let mut rng = rng_from_seed(seed);
    let mut tools = alloc::vec![start.to_string()];
    while tools.len() < length {
        let current = tools.last().map(String::as_str).unwrap_or(start);
        let options: Vec<&str> = graph
            .successors(current)
            .into_iter()
            .filter(|n| !tools.iter().any(|t| t == n))
            .collect();
        if options.is_empty() {
            break;
        }
        let next = options[rng.random_range(0..options.len())].to_string();
        tools.push(next);
    }
    let truncated = tools.len() < length;
    Ok(ToolChain { tools, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FnChat, ScriptedChat};
    use crate::spec::fixtures::get_indications;

    fn named(name: &str) -> ToolSpec {
        let mut s = get_indications();
        s.name = name.into();
        s
    }

    fn graph(edges: &[(&str, &str)]) -> ToolGraph {
        let mut nodes = BTreeSet::new();
        for (a, b) in edges {
            nodes.insert(a.to_string());
            nodes.insert(b.to_string());
        }
        ToolGraph {
            nodes,
            edges: edges
                .iter()
                .map(|(a, b)| Edge {
                    src: a.to_string(),
                    dst: b.to_string(),
                    rationale: None,
                })
                .collect(),
        }
    }

    #[test]
    fn single_tool_has_no_edges() {
        let reg = Registry::from_specs([named("a")]).unwrap();
        let built = build_tool_graph(&reg, &ScriptedChat::new(Vec::<String>::new()), &EdgeCache::new()).unwrap();
        assert_eq!(built.graph.nodes.len(), 1);
        assert!(built.graph.edges.is_empty());
    }

    #[test]
    fn edges_are_the_yes_verdicts() {
        let reg = Registry::from_specs([named("get_disease_id_desc"), named("get_associated_targets")]).unwrap();
        // pairs in name order: (targets -> disease), (disease -> targets)
        let judge = ScriptedChat::new(["NO", "YES\nids feed the lookup"]);
        let built = build_tool_graph(&reg, &judge, &EdgeCache::new()).unwrap();
        assert_eq!(built.graph.edges.len(), 1);
        assert!(built.graph.has_edge("get_disease_id_desc", "get_associated_targets"));
        assert_eq!(built.graph.edges[0].rationale.as_deref(), Some("ids feed the lookup"));
        assert_eq!(built.graph.check(&reg), Ok(()));
    }

    #[test]
    fn ambiguous_replies_are_skipped() {
        let reg = Registry::from_specs([named("a"), named("b")]).unwrap();
        let judge = ScriptedChat::new(["maybe", "NO"]);
        let built = build_tool_graph(&reg, &judge, &EdgeCache::new()).unwrap();
        assert_eq!(built.skipped, alloc::vec![("a".into(), "b".into())]);
        assert!(built.graph.edges.is_empty());
    }

    #[test]
    fn cache_avoids_rejudging() {
        let reg = Registry::from_specs([named("a"), named("b")]).unwrap();
        let yes = FnChat::new("j", |_r: &ChatRequest| Ok("YES".into()));
        let first = build_tool_graph(&reg, &yes, &EdgeCache::new()).unwrap();
        let cache = EdgeCache::from_records(first.new_records);
        let fail = FnChat::new("j", |_r: &ChatRequest| Err(ChatError::Transport("down".into())));
        let second = build_tool_graph(&reg, &fail, &cache).unwrap();
        assert_eq!(second.graph, first.graph);
        assert!(second.new_records.is_empty());
    }

    #[test]
    fn judge_failure_is_an_error() {
        let reg = Registry::from_specs([named("a"), named("b")]).unwrap();
        let fail = FnChat::new("j", |_r: &ChatRequest| Err(ChatError::Transport("down".into())));
        assert!(matches!(
            build_tool_graph(&reg, &fail, &EdgeCache::new()),
            Err(GraphError::Judge { .. })
        ));
    }

    #[test]
    fn chain_follows_unique_walk() {
        let g = graph(&[("A", "B"), ("B", "C")]);
        let c = sample_tool_chain(&g, "A", 3, 1).unwrap();
        assert_eq!(c.tools, ["A", "B", "C"]);
        assert!(!c.truncated);
        assert_eq!(sample_tool_chain(&g, "A", 1, 1).unwrap().tools, ["A"]);
    }

    #[test]
    fn dead_end_truncates() {
        let g = graph(&[("A", "B")]);
        let c = sample_tool_chain(&g, "B", 3, 1).unwrap();
        assert_eq!(c.tools, ["B"]);
        assert!(c.truncated);
    }

    #[test]
    fn chain_is_reproducible() {
        let g = graph(&[("A", "B"), ("A", "C"), ("A", "D"), ("B", "E"), ("C", "E"), ("D", "E")]);
        for seed in 0..20 {
            let a = sample_tool_chain(&g, "A", 3, seed).unwrap();
            assert_eq!(a, sample_tool_chain(&g, "A", 3, seed).unwrap());
            for w in a.tools.windows(2) {
                assert!(g.has_edge(&w[0], &w[1]));
            }
        }
    }
}
