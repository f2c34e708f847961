mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use proptest::prelude::*;
use serde_json::{json, Map, Value};

use common::{registry_strategy, spec_and_args};
use toolverse_core::agent::{run_inference, AgentConfig, Question, Services, ToolExecutor};
use toolverse_core::augment::{augment_registry, augment_tool_spec, ArgumentPool, RephrasePool, RephraseSidecar};
use toolverse_core::call::{FunctionCall, ResultSource, ToolResult};
use toolverse_core::datagen::export::{export_training_samples, AugmentConfig};
use toolverse_core::datagen::{QuestionRecord, QuestionType};
use toolverse_core::eval::{compute_metrics, EvalOutcome, Family, Task, Verdict};
use toolverse_core::graph::{assemble_graph, sample_tool_chain, EdgeRecord};
use toolverse_core::llm::{embed, ChatError, ChatRequest, EmbedError, EmbeddingService, EmbeddingVector, FnChat};
use toolverse_core::registry::Registry;
use toolverse_core::request::{compile, Endpoints};
use toolverse_core::toolrag::{extract_training_pairs, index_text, EmbeddingIndex, Retrieval, RetrievalError, ToolRetriever};
use toolverse_core::trace::{ReasoningStep, ReasoningTrace, Terminal};
use toolverse_core::FINAL_ANSWER_MARKER;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn registry_round_trip(registry in registry_strategy(12)) {
        let text = registry.to_json();
        let back = Registry::from_json(&text).unwrap();
        prop_assert_eq!(&back, &registry);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn compile_is_deterministic((spec, args) in spec_and_args()) {
        let a = compile(&spec, &args, &Endpoints::default());
        let b = compile(&spec, &args, &Endpoints::default());
        prop_assert_eq!(&a, &b);
        if let Ok(req) = a {
            prop_assert_eq!(req.to_json(), b.unwrap().to_json());
        }
    }

    #[test]
    fn augmentation_is_neutral(
        (spec, args) in spec_and_args(),
        new_name in "[a-z]{3,10}",
        arg_names in proptest::collection::vec("[a-z]{2,8}", 4),
        seed in any::<u64>(),
    ) {
        let mut pool = RephrasePool {
            names: vec![format!("alt_{new_name}")],
            descriptions: vec!["Rephrased.".into()],
            arguments: BTreeMap::new(),
        };
        for (k, n) in arg_names.iter().enumerate() {
            pool.arguments.insert(format!("arg_{k}"), ArgumentPool { names: vec![format!("x_{n}_{k}")], descriptions: vec!["d".into()] });
        }
        let aug = augment_tool_spec(&spec, &pool, seed);
        let call = FunctionCall::new("abcd1234", spec.name.clone(), args.clone());
        let renamed = aug.remap.apply(&call);
        prop_assert_eq!(&renamed.tool_name, &aug.spec.name);
        let original = compile(&spec, &args, &Endpoints::default()).map(|r| r.to_json());
        let augmented = compile(&aug.spec, &renamed.arguments, &Endpoints::default()).map(|r| r.to_json());
        prop_assert!(original.is_ok());
        prop_assert_eq!(original, augmented);
    }

    #[test]
    fn graph_walks_follow_edges(registry in registry_strategy(10), mask in proptest::collection::vec(any::<bool>(), 100), seed in any::<u64>(), length in 1usize..6) {
        let names: Vec<String> = registry.api_tools().map(|s| s.name.clone()).collect();
        let mut records = Vec::new();
        let mut k = 0;
        for a in &names {
            for b in &names {
                if a != b {
                    records.push(EdgeRecord { src: a.clone(), dst: b.clone(), verdict: mask[k % mask.len()], rationale: String::new(), judge: "j".into(), prompt_hash: "h".into() });
                    k += 1;
                }
            }
        }
        let graph = assemble_graph(&registry, &records);
        prop_assert!(graph.check(&registry).is_ok());
        for start in &names {
            let chain = sample_tool_chain(&graph, start, length, seed).unwrap();
            prop_assert!(chain.tools.len() <= length);
            prop_assert_eq!(chain.truncated, chain.tools.len() < length);
            let distinct: BTreeSet<&String> = chain.tools.iter().collect();
            prop_assert_eq!(distinct.len(), chain.tools.len());
            for w in chain.tools.windows(2) {
                prop_assert!(graph.has_edge(&w[0], &w[1]));
            }
        }
    }
}

/// Encodes each text's length and first byte, and checks batch limits.
struct Probe {
    batch: usize,
    calls: AtomicUsize,
}

impl EmbeddingService for Probe {
    fn fingerprint(&self) -> String {
        "probe".into()
    }
    fn max_batch(&self) -> usize {
        self.batch
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        assert!(texts.len() <= self.batch);
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector(vec![t.len() as f32, t.bytes().next().unwrap_or(0) as f32, 1.0]))
            .collect())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embed_keeps_order_and_shape(texts in proptest::collection::vec("[a-z]{0,20}", 1..50), batch in 1usize..9) {
        let probe = Probe { batch, calls: AtomicUsize::new(0) };
        let out = embed(&probe, &texts).unwrap();
        prop_assert_eq!(out.len(), texts.len());
        prop_assert_eq!(probe.calls.load(Ordering::SeqCst), texts.len().div_ceil(batch));
        for (t, v) in texts.iter().zip(&out) {
            prop_assert_eq!(v.dimension(), 3);
            prop_assert_eq!(v.values()[0], t.len() as f32);
        }
    }

    #[test]
    fn retrieval_matches_brute_force(
        dim in 4usize..16,
        rows in proptest::collection::vec(proptest::collection::vec(-3i8..4, 16), 1..120),
        query in proptest::collection::vec(-3i8..4, 16),
        k in 1usize..12,
    ) {
        let names: Vec<String> = (0..rows.len()).map(|i| format!("tool_{:03}", (i * 37) % 1000)).collect();
        let unique: BTreeSet<&String> = names.iter().collect();
        prop_assume!(unique.len() == names.len());
        let vectors: Vec<EmbeddingVector> = rows.iter().map(|r| EmbeddingVector(r[..dim].iter().map(|x| *x as f32 / 2.0).collect())).collect();
        let q: Vec<f32> = query[..dim].iter().map(|x| *x as f32 / 2.0).collect();
        let index = EmbeddingIndex::from_parts(names.clone(), vectors.clone(), "fp".into()).unwrap();
        let got = index.search(&q, k).unwrap();

        let n = |v: &[f32]| v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
        let mut all: Vec<(f64, &String)> = names
            .iter()
            .zip(&vectors)
            .map(|(name, v)| {
                let d = n(&q) * n(v.values());
                let dot: f64 = q.iter().zip(v.values()).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                (if d == 0.0 { 0.0 } else { dot / d }, name)
            })
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let want: Vec<String> = all.iter().take(k).map(|(_, n)| (*n).clone()).collect();
        prop_assert_eq!(got.names, want);
        prop_assert_eq!(got.truncated, k > names.len());
    }
}

struct Stub;
impl ToolExecutor for Stub {
    fn execute(&self, call: &FunctionCall) -> ToolResult {
        match call.string_arg("drug_name") {
            Some("none") => ToolResult::empty(&call.call_id, ResultSource::Fixture),
            Some(d) => ToolResult::ok(&call.call_id, json!([{"brand": d}]), ResultSource::Fixture),
            None => ToolResult::ok(&call.call_id, json!({"terminal": true}), ResultSource::Builtin),
        }
    }
}

struct Fixed(Vec<String>);
impl ToolRetriever for Fixed {
    fn retrieve(&self, _r: &str, k: usize) -> Result<Retrieval, RetrievalError> {
        let names: Vec<String> = self.0.iter().take(k).cloned().collect();
        Ok(Retrieval { scores: vec![1.0; names.len()], names, truncated: false })
    }
}

fn label_registry() -> Registry {
    let specs = ["get_indications", "get_warnings", "get_dosage"].map(|n| {
        serde_json::from_value(common::spec_json(n, common::Kind::Fda, &[false], &[0], &[true])).unwrap()
    });
    let mut reg = Registry::from_specs(specs).unwrap();
    // Rename the single argument so the stub sees `drug_name`.
    let specs: Vec<_> = reg
        .api_tools()
        .map(|s| {
            let mut s = s.clone();
            s.arguments[0].name = "drug_name".into();
            if let toolverse_core::spec::MappingRule::FdaSearch { search_fields, .. } = &mut s.mapping {
                let f = search_fields.remove("arg_0").unwrap();
                search_fields.insert("drug_name".into(), f);
            }
            s
        })
        .collect();
    reg = Registry::from_specs(specs).unwrap();
    reg
}

fn reply(kind: u8, k: usize) -> String {
    let tools = ["get_indications", "get_warnings", "get_dosage"];
    match kind % 5 {
        0 => format!("Look something up. [{{\"name\": \"{}\", \"arguments\": {{\"drug_name\": \"drug{k}\"}}}}]", tools[k % 3]),
        1 => format!("Find a tool. [{{\"name\": \"ToolRAG\", \"arguments\": {{\"description\": \"need {k}\"}}}}]"),
        2 => "not a usable reply".to_string(),
        3 => format!("Done. {FINAL_ANSWER_MARKER} answer {k}"),
        _ => format!("Give up. [{{\"name\": \"GiveAnswer\", \"arguments\": {{\"answer\": \"ans {k}\"}}}}]"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn runs_terminate_with_well_formed_traces(script in proptest::collection::vec(0u8..5, 0..12), max_steps in 1usize..8) {
        let registry = label_registry();
        let turn = AtomicUsize::new(0);
        let chat = FnChat::new("m", |_r: &ChatRequest| {
            let t = turn.fetch_add(1, Ordering::SeqCst);
            script.get(t).map(|k| reply(*k, t)).ok_or(ChatError::Exhausted)
        });
        let retriever = Fixed(vec!["get_warnings".into(), "get_dosage".into()]);
        let config = AgentConfig { max_steps, ..AgentConfig::default() };
        let services = Services::new(&chat, &Stub).with_retriever(&retriever);
        let trace = run_inference(&Question::open("q"), &registry, services, &config);
        prop_assert!(trace.steps.len() <= max_steps);
        prop_assert!(trace.check().is_ok(), "{:?}", trace.check());
        if trace.terminal != Terminal::Aborted {
            prop_assert!(trace.final_answer.is_some());
        }
        for pair in extract_training_pairs(std::slice::from_ref(&trace), &registry) {
            let name = registry.api_tools().find(|s| index_text(s) == pair.positive).map(|s| s.name.clone()).unwrap();
            let pos = trace.steps.iter().position(|s| s.i == pair.step).unwrap();
            let step = &trace.steps[pos];
            let returned = step.calls.iter().zip(&step.results).any(|(c, r)| c.tool_name == "ToolRAG" && toolverse_core::toolrag::returned_tools(&r.payload).contains(&name));
            prop_assert!(returned);
            prop_assert!(trace.steps[pos + 1..].iter().any(|s| s.calls.iter().any(|c| c.tool_name == name)));
        }
    }

    #[test]
    fn step_limit_forces_exactly_m_generations(m in 1usize..9) {
        let registry = label_registry();
        let turn = AtomicUsize::new(0);
        let last = Mutex::new(String::new());
        let chat = FnChat::new("m", |r: &ChatRequest| {
            let t = turn.fetch_add(1, Ordering::SeqCst);
            *last.lock().unwrap() = r.render();
            Ok(reply(0, t))
        });
        let config = AgentConfig { max_steps: m, ..AgentConfig::default() };
        let trace = run_inference(&Question::open("q"), &registry, Services::new(&chat, &Stub), &config);
        prop_assert_eq!(turn.load(Ordering::SeqCst), m);
        prop_assert_eq!(trace.terminal, Terminal::StepLimitForced);
        prop_assert!(last.lock().unwrap().contains(FINAL_ANSWER_MARKER));
        prop_assert_eq!(trace.steps.len(), m);
    }
}

fn record() -> QuestionRecord {
    QuestionRecord {
        id: "r".into(),
        question: "q".into(),
        options: None,
        ground_truth: "a".into(),
        explanation: String::new(),
        question_type: QuestionType::ToolChain,
        reference_info: vec![json!({})],
        initial_tools: vec![],
    }
}

/// A finished trace of `m` steps: ToolRAG first when `rag`, then label calls.
fn built_trace(id: &str, m: usize, rag: bool) -> ReasoningTrace {
    let tools = ["get_indications", "get_warnings", "get_dosage"];
    let mut t = ReasoningTrace::new("q");
    t.trace_id = id.into();
    for i in 1..m {
        let mut s = ReasoningStep::new(i, format!("thought {i}"));
        let cid = format!("c{i:07}");
        if rag && i == 1 {
            let mut a = Map::new();
            a.insert("description".into(), json!("label data"));
            s.calls.push(FunctionCall::new(&cid, "ToolRAG", a));
            s.results.push(ToolResult::ok(&cid, json!(["get_warnings", "get_dosage"]), ResultSource::Builtin));
        } else {
            let mut a = Map::new();
            a.insert("drug_name".into(), json!(format!("d{i}")));
            s.calls.push(FunctionCall::new(&cid, tools[i % 3], a));
            s.results.push(ToolResult::ok(&cid, json!([{"x": i}]), ResultSource::Fixture));
        }
        t.steps.push(s);
    }
    let mut s = ReasoningStep::new(m, "final");
    let mut a = Map::new();
    a.insert("answer".into(), json!("a"));
    s.calls.push(FunctionCall::new("fin00000", "Finish", a));
    s.results.push(ToolResult::ok("fin00000", json!({"terminal": true}), ResultSource::Builtin));
    t.steps.push(s);
    t.final_answer = Some("a".into());
    t.terminal = Terminal::Finished;
    t
}

fn sidecar() -> RephraseSidecar {
    let mut s = RephraseSidecar::new();
    for n in ["get_indications", "get_warnings", "get_dosage"] {
        let mut args = BTreeMap::new();
        args.insert("drug_name".to_string(), ArgumentPool { names: vec!["medicine".into()], descriptions: vec![] });
        s.insert(n.to_string(), RephrasePool { names: vec![format!("{n}_v2")], descriptions: vec!["x".into()], arguments: args });
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_invariants(ms in proptest::collection::vec(1usize..9, 1..8), rags in proptest::collection::vec(any::<bool>(), 8), seed in any::<u64>(), augmented in any::<bool>()) {
        let registry = label_registry();
        let aug = augment_registry(&registry, &sidecar(), seed).unwrap();
        let renamed = augmented.then_some(&aug);
        let traces: Vec<ReasoningTrace> = ms.iter().enumerate().map(|(k, m)| built_trace(&format!("t{k}"), *m, rags[k])).collect();
        let cfg = AugmentConfig { seed, ..AugmentConfig::default() };
        let mut by_filter: Vec<BTreeSet<String>> = Vec::new();
        for filter in [Some(1), Some(2), Some(3), Some(4), Some(5), Some(6), Some(7), Some(8), None] {
            let mut set = BTreeSet::new();
            let mut total = 0;
            for t in &traces {
                let samples = export_training_samples(t, &record(), &registry, &cfg, renamed, filter);
                if filter.is_none() {
                    prop_assert_eq!(samples.len(), t.steps.len());
                }
                for (i, s) in samples.iter().enumerate() {
                    prop_assert_eq!(s.step, i + 1);
                    prop_assert_eq!(s.output.contains(FINAL_ANSWER_MARKER), i + 1 == samples.len());
                    if i + 1 < samples.len() {
                        let next = &samples[i + 1].input.trace_prefix;
                        prop_assert_eq!(&next[..i], &s.input.trace_prefix[..]);
                    }
                    let offered: BTreeSet<String> = s.tool_names().into_iter().collect();
                    for step in &s.input.trace_prefix {
                        for c in step["calls"].as_array().unwrap() {
                            prop_assert!(offered.contains(c["name"].as_str().unwrap()));
                        }
                    }
                    let out_calls = s.output.lines().last().unwrap();
                    let calls: Value = serde_json::from_str(out_calls).unwrap();
                    for c in calls.as_array().unwrap() {
                        prop_assert!(c.get("id").is_none());
                        prop_assert!(offered.contains(c["name"].as_str().unwrap()), "{} not offered", c["name"]);
                    }
                    set.insert(serde_json::to_string(s).unwrap());
                }
                total += samples.len();
            }
            prop_assert_eq!(total, set.len());
            by_filter.push(set);
        }
        for w in by_filter.windows(2) {
            prop_assert!(w[0].is_subset(&w[1]));
        }
        let all: usize = traces.iter().map(|t| t.steps.len()).sum();
        prop_assert_eq!(by_filter.last().unwrap().len(), all);
    }

    #[test]
    fn metrics_partition(verdicts in proptest::collection::vec((0u8..3, 0usize..12), 1..80), sets in 1usize..4) {
        let tasks = [Task::DrugOverview, Task::Ingredients, Task::Pharmacology, Task::Treatment];
        let outcomes: Vec<(String, Vec<EvalOutcome>)> = (0..sets)
            .map(|s| {
                let list = verdicts
                    .iter()
                    .enumerate()
                    .map(|(k, (v, task))| EvalOutcome {
                        item_id: format!("{s}-{k}"),
                        task: tasks[*task % tasks.len()],
                        family: Family::Original,
                        verdict: [Verdict::Correct, Verdict::Incorrect, Verdict::Invalid][((*v as usize) + s) % 3],
                        predicted: None,
                        open_answer: None,
                        identified_drug: None,
                        drug_correct: None,
                        near_miss: false,
                        ungated_verdict: None,
                        steps: k % 4,
                        tool_calls: k % 3,
                        trace_ref: None,
                        error: None,
                    })
                    .collect();
                (format!("set{s}"), list)
            })
            .collect();
        let report = compute_metrics(&outcomes).unwrap();
        for set in &report.sets {
            let c = &set.counts;
            prop_assert_eq!(c.correct + c.incorrect + c.invalid, c.total);
            let per: usize = set.per_task.values().map(|t| t.total).sum();
            prop_assert_eq!(per, c.total);
            for t in set.per_task.values() {
                prop_assert_eq!(t.correct + t.incorrect + t.invalid, t.total);
            }
        }
        prop_assert_eq!(compute_metrics(&outcomes).unwrap(), report);
    }
}
