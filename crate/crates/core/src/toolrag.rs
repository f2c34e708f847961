//! Embedding index over tool descriptions and top-k tool retrieval.

use alloc::collections::BinaryHeap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::call::ResultStatus;
use crate::llm::{embed, EmbedError, EmbeddingService, EmbeddingVector};
use crate::registry::Registry;
use crate::spec::{SpecialTool, ToolSpec};
use crate::trace::ReasoningTrace;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{names} names but {vectors} vectors")]
    Shape { names: usize, vectors: usize },
    #[error("vector for `{name}` has dimension {got}, index has {expected}")]
    Dimension { name: String, expected: usize, got: usize },
    #[error("duplicate entry `{0}`")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("the index is empty")]
    EmptyIndex,
    #[error("index was built with `{index}` but the embedder is `{embedder}`")]
    FingerprintMismatch { index: String, embedder: String },
    #[error("query has dimension {got}, index has {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Persisted alongside the raw vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub dimension: usize,
    pub fingerprint: String,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    names: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    norms: Vec<f64>,
    dimension: usize,
    fingerprint: String,
}

/// The text embedded for a tool: its model-facing description.
pub fn index_text(spec: &ToolSpec) -> String {
    spec.description_json()
}

fn norm(v: &[f32]) -> f64 {
    libm::sqrt(v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>())
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Cosine similarity; zero vectors score 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let n = norm(a) * norm(b);
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}

impl EmbeddingIndex {
    pub fn from_parts(names: Vec<String>, vectors: Vec<EmbeddingVector>, fingerprint: String) -> Result<Self, IndexError> {
        if names.len() != vectors.len() {
            return Err(IndexError::Shape {
                names: names.len(),
                vectors: vectors.len(),
            });
        }
        let dimension = vectors.first().map(EmbeddingVector::dimension).unwrap_or(0);
        for (i, (name, v)) in names.iter().zip(&vectors).enumerate() {
            if v.dimension() != dimension {
                return Err(IndexError::Dimension {
                    name: name.clone(),
                    expected: dimension,
                    got: v.dimension(),
                });
            }
            if names[..i].contains(name) {
                return Err(IndexError::Duplicate(name.clone()));
            }
        }
        let norms = vectors.iter().map(|v| norm(v.values())).collect();
        Ok(EmbeddingIndex {
            names,
            vectors,
            norms,
            dimension,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            dimension: self.dimension,
            fingerprint: self.fingerprint.clone(),
            names: self.names.clone(),
        }
    }

    /// Top-k by cosine similarity, ties broken by name ascending.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Retrieval, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if query.len() != self.dimension {
            return Err(RetrievalError::QueryDimension {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let qn = norm(query);
        // Max-heap on "worse first", so the root is the weakest kept hit.
        let mut heap: BinaryHeap<Hit<'_>> = BinaryHeap::with_capacity(k + 1);
        for (i, v) in self.vectors.iter().enumerate() {
            let n = qn * self.norms[i];
            let score = if n == 0.0 { 0.0 } else { dot(query, v.values()) / n };
            heap.push(Hit {
                score,
                name: &self.names[i],
            });
            if heap.len() > k {
                heap.pop();
            }
        }
        let hits = heap.into_sorted_vec();
        Ok(Retrieval {
            names: hits.iter().map(|h| h.name.to_string()).collect(),
            scores: hits.iter().map(|h| h.score).collect(),
            truncated: k > self.len(),
        })
    }
}

/// Orders better hits first: higher score, then smaller name.
#[derive(Debug)]
struct Hit<'a> {
    score: f64,
    name: &'a str,
}

impl Ord for Hit<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.name.cmp(other.name))
    }
}

impl PartialOrd for Hit<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Hit<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit<'_> {}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub names: Vec<String>,
    pub scores: Vec<f64>,
    /// Set when k exceeded the index size and everything was returned.
    pub truncated: bool,
}

/// Embeds every non-Special tool. Fails as a whole if any embedding fails.
pub fn build_index(registry: &Registry, embedder: &dyn EmbeddingService) -> Result<EmbeddingIndex, IndexError> {
    let tools: Vec<&ToolSpec> = registry.api_tools().collect();
    let fingerprint = embedder.fingerprint();
    if tools.is_empty() {
        return EmbeddingIndex::from_parts(Vec::new(), Vec::new(), fingerprint);
    }
    let texts: Vec<String> = tools.iter().map(|s| index_text(s)).collect();
    let vectors = embed(embedder, &texts)?;
    EmbeddingIndex::from_parts(tools.iter().map(|s| s.name.clone()).collect(), vectors, fingerprint)
}

pub fn retrieve(
    index: &EmbeddingIndex,
    requirement: &str,
    k: usize,
    embedder: &dyn EmbeddingService,
) -> Result<Retrieval, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let fp = embedder.fingerprint();
    if fp != index.fingerprint {
        return Err(RetrievalError::FingerprintMismatch {
            index: index.fingerprint.clone(),
            embedder: fp,
        });
    }
    let mut q = embed(embedder, &[requirement.to_string()])?;
    let q = q.pop().ok_or(EmbedError::EmptyInput)?;
    index.search(q.values(), k)
}

/// What the agent's ToolRAG call needs.
pub trait ToolRetriever: Send + Sync {
    fn retrieve(&self, requirement: &str, k: usize) -> Result<Retrieval, RetrievalError>;
}

pub struct IndexRetriever<'a> {
    pub index: &'a EmbeddingIndex,
    pub embedder: &'a dyn EmbeddingService,
}

impl ToolRetriever for IndexRetriever<'_> {
    fn retrieve(&self, requirement: &str, k: usize) -> Result<Retrieval, RetrievalError> {
        retrieve(self.index, requirement, k, self.embedder)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPair {
    pub requirement: String,
    pub positive: String,
    pub trace_id: String,
    pub step: usize,
}

/// Tool names in a ToolRAG result payload (strings or `{"name": ...}` objects).
pub fn returned_tools(payload: &Value) -> Vec<String> {
    payload
        .as_array()
        .map(|items| {
            items
                .iter()
                .filter_map(|i| i.as_str().or_else(|| i.get("name").and_then(Value::as_str)))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

/// One pair per (ToolRAG call, returned tool) where the tool is called in a
/// later step.
pub fn extract_training_pairs(traces: &[ReasoningTrace], registry: &Registry) -> Vec<RetrievalPair> {
    let mut pairs = Vec::new();
    for trace in traces {
        for (pos, step) in trace.steps.iter().enumerate() {
            for call in &step.calls {
                if SpecialTool::from_name(&call.tool_name) != Some(SpecialTool::ToolRAG) {
                    continue;
                }
                let Some(requirement) = call.string_arg("description") else { continue };
                let Some(result) = step.result_for(&call.call_id) else { continue };
                if result.status != ResultStatus::Ok {
                    continue;
                }
                let mut emitted: Vec<String> = Vec::new();
                for tool in returned_tools(&result.payload) {
                    if emitted.contains(&tool) {
                        continue;
                    }
                    let used_later = trace.steps[pos + 1..]
                        .iter()
                        .any(|s| s.calls.iter().any(|c| c.tool_name == tool));
                    let Some(spec) = registry.get(&tool) else { continue };
                    if used_later {
                        pairs.push(RetrievalPair {
                            requirement: requirement.to_string(),
                            positive: index_text(spec),
                            trace_id: trace.trace_id.clone(),
                            step: step.i,
                        });
                        emitted.push(tool);
                    }
                }
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::call::{FunctionCall, ResultSource, ToolResult};
    use crate::llm::HashEmbedder;
    use crate::spec::fixtures::get_indications;
    use crate::trace::{ReasoningStep, Terminal};
    use alloc::vec;
    use serde_json::{json, Map};

    fn toy(entries: &[(&str, Vec<f32>)]) -> EmbeddingIndex {
        EmbeddingIndex::from_parts(
            entries.iter().map(|(n, _)| n.to_string()).collect(),
            entries.iter().map(|(_, v)| EmbeddingVector(v.clone())).collect(),
            "toy".into(),
        )
        .unwrap()
    }

    #[test]
    fn toy_index_ranks_by_cosine() {
        let idx = toy(&[("A", vec![1.0, 0.0]), ("B", vec![0.0, 1.0])]);
        assert_eq!(idx.search(&[1.0, 0.0], 1).unwrap().names, ["A"]);
        assert_eq!(idx.search(&[1.0, 0.0], 2).unwrap().names, ["A", "B"]);
    }

    #[test]
    fn ties_break_by_name() {
        let idx = toy(&[("y", vec![1.0, 0.0]), ("x", vec![2.0, 0.0])]);
        assert_eq!(idx.search(&[1.0, 0.0], 1).unwrap().names, ["x"]);
    }

    #[test]
    fn oversized_k_returns_all_flagged() {
        let idx = toy(&[("A", vec![1.0, 0.0])]);
        let r = idx.search(&[1.0, 0.0], 5).unwrap();
        assert_eq!(r.names, ["A"]);
        assert!(r.truncated);
    }

    #[test]
    fn special_tools_are_not_indexed() {
        let reg = Registry::from_specs([get_indications()]).unwrap();
        let idx = build_index(&reg, &HashEmbedder::new(32)).unwrap();
        assert_eq!(idx.names(), ["get_indications"]);
        assert!(build_index(&Registry::new(), &HashEmbedder::new(32)).unwrap().is_empty());
    }

    #[test]
    fn fingerprint_mismatch_is_an_error() {
        let reg = Registry::from_specs([get_indications()]).unwrap();
        let idx = build_index(&reg, &HashEmbedder::new(32)).unwrap();
        assert!(matches!(
            retrieve(&idx, "indications", 1, &HashEmbedder::new(16)),
            Err(RetrievalError::FingerprintMismatch { .. })
        ));
        assert_eq!(retrieve(&idx, "indications", 1, &HashEmbedder::new(32)).unwrap().names, ["get_indications"]);
    }

    fn trace_with(later: &[&str]) -> ReasoningTrace {
        let mut t = ReasoningTrace::new("What is the dosage of Kisunla?");
        t.trace_id = "t1".into();
        let mut s1 = ReasoningStep::new(1, "Need dosage tools.");
        let mut args = Map::new();
        args.insert("description".into(), json!("find dosage tools"));
        s1.calls.push(FunctionCall::new("r1", "ToolRAG", args));
        s1.results
            .push(ToolResult::ok("r1", json!(["get_indications", "other"]), ResultSource::Builtin));
        t.steps.push(s1);
        let mut s2 = ReasoningStep::new(2, "Call it.");
        for (i, name) in later.iter().enumerate() {
            let id = alloc::format!("c{i}");
            s2.calls.push(FunctionCall::new(id.clone(), *name, Map::new()));
            s2.results.push(ToolResult::empty(id, ResultSource::Fixture));
        }
        t.steps.push(s2);
        t.terminal = Terminal::Aborted;
        t
    }

    #[test]
    fn pairs_for_later_used_tools() {
        let mut other = get_indications();
        other.name = "other".into();
        let reg = Registry::from_specs([get_indications(), other]).unwrap();
        let pairs = extract_training_pairs(&[trace_with(&["get_indications"])], &reg);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].requirement, "find dosage tools");
        assert_eq!(pairs[0].step, 1);
        assert!(extract_training_pairs(&[trace_with(&[])], &reg).is_empty());
        assert_eq!(
            extract_training_pairs(&[trace_with(&["get_indications", "other"])], &reg).len(),
            2
        );
    }
}
