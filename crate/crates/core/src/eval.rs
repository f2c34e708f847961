//! Benchmark items, the evaluation protocols and metric aggregation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    map_answer_to_choice, parse_choice_letter, run_with_options, AgentConfig, AnswerMode, Choice, Question, RunOptions,
    Services,
};
use crate::prompts;
use crate::registry::Registry;
use crate::trace::ReasoningTrace;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    DrugOverview,
    Ingredients,
    WarningsAndSafety,
    DependenceAndAbuse,
    DosageAndAdministration,
    SpecificPopulations,
    Pharmacology,
    ClinicalInformation,
    NonclinicalToxicology,
    PatientInformation,
    StorageAndSupply,
    Treatment,
}

impl Task {
    /// The eleven label-derived tasks.
    pub const DRUG_TASKS: [Task; 11] = [
        Task::DrugOverview,
        Task::Ingredients,
        Task::WarningsAndSafety,
        Task::DependenceAndAbuse,
        Task::DosageAndAdministration,
        Task::SpecificPopulations,
        Task::Pharmacology,
        Task::ClinicalInformation,
        Task::NonclinicalToxicology,
        Task::PatientInformation,
        Task::StorageAndSupply,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Task::DrugOverview => "drug_overview",
            Task::Ingredients => "ingredients",
            Task::WarningsAndSafety => "warnings_and_safety",
            Task::DependenceAndAbuse => "dependence_and_abuse",
            Task::DosageAndAdministration => "dosage_and_administration",
            Task::SpecificPopulations => "specific_populations",
            Task::Pharmacology => "pharmacology",
            Task::ClinicalInformation => "clinical_information",
            Task::NonclinicalToxicology => "nonclinical_toxicology",
            Task::PatientInformation => "patient_information",
            Task::StorageAndSupply => "storage_and_supply",
            Task::Treatment => "treatment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Original,
    Brand,
    Generic,
    Description,
    Treatment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub options: BTreeMap<String, String>,
    pub correct: String,
    pub task: Task,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acceptable_drugs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchmarkError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<(), String> {
        if !(2..=5).contains(&self.options.len()) {
            return Err(format!("{} options, expected 2 to 5", self.options.len()));
        }
        for k in self.options.keys() {
            if !matches!(k.as_str(), "A" | "B" | "C" | "D" | "E") {
                return Err(format!("option key `{k}` is not a letter A-E"));
            }
        }
        if !self.options.contains_key(&self.correct) {
            return Err(format!("correct letter `{}` is not an option", self.correct));
        }
        if self.family == Family::Description && self.acceptable_drugs.iter().all(|d| d.trim().is_empty()) {
            return Err("description item without acceptable_drugs".into());
        }
        Ok(())
    }
}

/// Parses a JSON-lines benchmark; blank lines are skipped.
pub fn load_benchmark(text: &str) -> Result<Vec<BenchmarkItem>, BenchmarkError> {
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| BenchmarkError::Line { line: n + 1, message };
        let item: BenchmarkItem = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        item.validate().map_err(err)?;
        items.push(item);
    }
    Ok(items)
}

pub fn family_counts(items: &[BenchmarkItem]) -> BTreeMap<Family, usize> {
    let mut counts = BTreeMap::new();
    for i in items {
        *counts.entry(i.family).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub item_id: String,
    pub task: Task,
    pub family: Family,
    /// For description items this is the gated verdict.
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identified_drug: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drug_correct: Option<bool>,
    /// The identified drug is within edit distance 2 of an acceptable name
    /// without matching it. Never credited.
    #[serde(default)]
    pub near_miss: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ungated_verdict: Option<Verdict>,
    pub steps: usize,
    pub tool_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalOutcome {
    pub fn invalid(item: &BenchmarkItem, error: impl Into<String>) -> Self {
        EvalOutcome {
            item_id: item.id.clone(),
            task: item.task,
            family: item.family,
            verdict: Verdict::Invalid,
            predicted: None,
            open_answer: None,
            identified_drug: None,
            drug_correct: None,
            near_miss: false,
            ungated_verdict: None,
            steps: 0,
            tool_calls: 0,
            trace_ref: None,
            error: Some(error.into()),
        }
    }
}

fn score(item: &BenchmarkItem, choice: &Choice) -> Verdict {
    match choice.letter() {
        Some(l) if l == item.correct => Verdict::Correct,
        Some(_) => Verdict::Incorrect,
        None => Verdict::Invalid,
    }
}

fn item_config(config: &AgentConfig, item: &BenchmarkItem, mode: AnswerMode, pass: &str) -> AgentConfig {
    let mut c = config.clone();
    c.answer_mode = mode;
    c.seed = derive_seed(config.seed, &format!("{}/{pass}", item.id));
    c
}

/// Every run of an item, for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRun {
    pub outcome: EvalOutcome,
    pub traces: Vec<ReasoningTrace>,
}

/// Letter committed by an answer: parsed directly, else mapped by `chat`.
fn choose(item: &BenchmarkItem, answer: Option<&str>, services: &Services<'_>) -> Choice {
    match answer {
        None => Choice::Invalid,
        Some(a) => match parse_choice_letter(a, &item.options) {
            Some(l) => Choice::Letter(l),
            None => map_answer_to_choice(&item.question, &item.options, a, services.chat),
        },
    }
}

/// Multiple-choice protocol: options in the prompt, answer mapped to a letter.
pub fn evaluate_mc_item(item: &BenchmarkItem, registry: &Registry, services: Services<'_>, config: &AgentConfig) -> ItemRun {
    let q = Question {
        text: item.question.clone(),
        options: Some(item.options.clone()),
    };
    let cfg = item_config(config, item, AnswerMode::MultipleChoice, "mc");
    let run = run_with_options(&q, registry, services, &cfg, &RunOptions { trace_id: item.id.clone(), ..Default::default() });
    let choice = choose(item, run.trace.final_answer.as_deref(), &services);
    let mut outcome = EvalOutcome::invalid(item, "");
    outcome.error = run.trace.error.clone();
    outcome.verdict = score(item, &choice);
    outcome.predicted = choice.letter().map(str::to_string);
    outcome.steps = run.trace.steps.len();
    outcome.tool_calls = run.trace.tool_call_count();
    ItemRun {
        outcome,
        traces: alloc::vec![run.trace],
    }
}

/// Open-ended protocol: an options-free run, then the free text is mapped
/// onto the original options.
pub fn evaluate_open_item(
    item: &BenchmarkItem,
    registry: &Registry,
    services: Services<'_>,
    mapper: &dyn crate::llm::ChatService,
    config: &AgentConfig,
) -> ItemRun {
    let q = Question::open(item.question.clone());
    let cfg = item_config(config, item, AnswerMode::OpenEnded, "open");
    let run = run_with_options(&q, registry, services, &cfg, &RunOptions { trace_id: item.id.clone(), ..Default::default() });
    let answer = run.trace.final_answer.clone().unwrap_or_default();
    let choice = map_answer_to_choice(&item.question, &item.options, &answer, mapper);
    let mut outcome = EvalOutcome::invalid(item, "");
    outcome.error = run.trace.error.clone();
    outcome.verdict = score(item, &choice);
    outcome.predicted = choice.letter().map(str::to_string);
    outcome.open_answer = Some(answer);
    outcome.steps = run.trace.steps.len();
    outcome.tool_calls = run.trace.tool_call_count();
    ItemRun {
        outcome,
        traces: alloc::vec![run.trace],
    }
}

fn normalize_drug(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .filter(|c| !matches!(c, '®' | '™'))
        .collect::<String>()
        .to_lowercase();
    cleaned
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut cur = alloc::vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Case-insensitive exact match against the acceptable names. The second
/// value flags a near miss (edit distance at most 2) that is not credited.
pub fn match_drug(identified: &str, acceptable: &[String]) -> (bool, bool) {
    let id = normalize_drug(identified);
    if id.is_empty() {
        return (false, false);
    }
    let names: Vec<String> = acceptable.iter().map(|a| normalize_drug(a)).collect();
    if names.contains(&id) {
        return (true, false);
    }
    (false, names.iter().any(|n| edit_distance(n, &id) <= 2))
}

/// Description protocol: identify the drug, then answer the question; the
/// gated verdict needs both.
pub fn evaluate_description_item(item: &BenchmarkItem, registry: &Registry, services: Services<'_>, config: &AgentConfig) -> ItemRun {
    let id_q = Question::open(prompts::fill(prompts::IDENTIFY_DRUG, &[("question", &item.question)]));
    let id_cfg = item_config(config, item, AnswerMode::OpenEnded, "identify");
    let id_run = run_with_options(&id_q, registry, services, &id_cfg, &RunOptions { trace_id: format!("{}/identify", item.id), ..Default::default() });
    let identified = id_run.trace.final_answer.clone().unwrap_or_default();
    let (drug_correct, near_miss) = match_drug(&identified, &item.acceptable_drugs);

    let mc = evaluate_mc_item(item, registry, services, config);
    let ungated = mc.outcome.verdict;
    let gated = match (drug_correct, ungated) {
        (true, v) => v,
        (false, Verdict::Invalid) => Verdict::Invalid,
        (false, _) => Verdict::Incorrect,
    };
    let mut outcome = mc.outcome;
    outcome.verdict = gated;
    outcome.ungated_verdict = Some(ungated);
    outcome.identified_drug = Some(identified);
    outcome.drug_correct = Some(drug_correct);
    outcome.near_miss = near_miss;
    outcome.steps += id_run.trace.steps.len();
    outcome.tool_calls += id_run.trace.tool_call_count();
    let mut traces = alloc::vec![id_run.trace];
    traces.extend(mc.traces);
    ItemRun { outcome, traces }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub invalid: usize,
}

impl Counts {
    fn add(&mut self, v: Verdict) {
        self.total += 1;
        match v {
            Verdict::Correct => self.correct += 1,
            Verdict::Incorrect => self.incorrect += 1,
            Verdict::Invalid => self.invalid += 1,
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionMetrics {
    pub drug_id_accuracy: f64,
    pub gated_accuracy: f64,
    pub ungated_accuracy: f64,
    pub near_misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub name: String,
    pub counts: Counts,
    pub accuracy: f64,
    pub accuracy_pct: f64,
    pub invalid_rate: f64,
    pub per_task: BTreeMap<Task, Counts>,
    pub mean_steps: f64,
    pub mean_tool_calls: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<DescriptionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sets: Vec<SetMetrics>,
    /// Population variance of the sets' percent accuracies.
    pub variance_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no outcome sets")]
    NoSets,
    #[error("outcome set `{0}` is empty")]
    EmptySet(String),
}

/// Divides by n.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn set_metrics(name: &str, outcomes: &[EvalOutcome]) -> Result<SetMetrics, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptySet(name.to_string()));
    }
    let mut counts = Counts::default();
    let mut per_task: BTreeMap<Task, Counts> = BTreeMap::new();
    for o in outcomes {
        counts.add(o.verdict);
        per_task.entry(o.task).or_default().add(o.verdict);
    }
    let n = outcomes.len();
    let described: Vec<&EvalOutcome> = outcomes.iter().filter(|o| o.drug_correct.is_some()).collect();
    let description = (!described.is_empty()).then(|| {
        let m = described.len();
        DescriptionMetrics {
            drug_id_accuracy: ratio(described.iter().filter(|o| o.drug_correct == Some(true)).count(), m),
            gated_accuracy: ratio(described.iter().filter(|o| o.verdict == Verdict::Correct).count(), m),
            ungated_accuracy: ratio(
                described
                    .iter()
                    .filter(|o| o.ungated_verdict == Some(Verdict::Correct))
                    .count(),
                m,
            ),
            near_misses: described.iter().filter(|o| o.near_miss).count(),
        }
    });
    Ok(SetMetrics {
        name: name.to_string(),
        accuracy: counts.accuracy(),
        accuracy_pct: 100.0 * counts.accuracy(),
        invalid_rate: ratio(counts.invalid, n),
        counts,
        per_task,
        mean_steps: outcomes.iter().map(|o| o.steps).sum::<usize>() as f64 / n as f64,
        mean_tool_calls: outcomes.iter().map(|o| o.tool_calls).sum::<usize>() as f64 / n as f64,
        description,
    })
}

/// Metrics per named outcome set plus the variance across sets.
pub fn compute_metrics(sets: &[(String, Vec<EvalOutcome>)]) -> Result<MetricsReport, MetricsError> {
    if sets.is_empty() {
        return Err(MetricsError::NoSets);
    }
    let sets: Vec<SetMetrics> = sets
        .iter()
        .map(|(name, outcomes)| set_metrics(name, outcomes))
        .collect::<Result<_, _>>()?;
    let accuracies: Vec<f64> = sets.iter().map(|s| s.accuracy_pct).collect();
    Ok(MetricsReport {
        variance_pct: population_variance(&accuracies),
        sets,
    })
}

impl MetricsReport {
    pub fn table(&self) -> String {
        let mut out = String::from("set                  n     acc%    invalid%  steps  calls\n");
        for s in &self.sets {
            out.push_str(&format!(
                "{:<20} {:<5} {:>7.2} {:>9.2} {:>6.2} {:>6.2}\n",
                s.name,
                s.counts.total,
                s.accuracy_pct,
                100.0 * s.invalid_rate,
                s.mean_steps,
                s.mean_tool_calls
            ));
            if let Some(d) = &s.description {
                out.push_str(&format!(
                    "  drug-id {:.2}%  gated {:.2}%  ungated {:.2}%  near-misses {}\n",
                    100.0 * d.drug_id_accuracy,
                    100.0 * d.gated_accuracy,
                    100.0 * d.ungated_accuracy,
                    d.near_misses
                ));
            }
        }
        out.push_str(&format!("variance of accuracy% across sets: {:.5}\n", self.variance_pct));
        out
    }
}
