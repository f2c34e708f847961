//! Source data for question generation: FDA label dumps and disease/drug
//! association tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use toolverse_core::datagen::questgen::{select_label_field, tools_returning, DrugCandidate, QuestionSource};
use toolverse_core::registry::Registry;

use crate::files::{self, FileError};

/// Labels of drugs approved after this year are kept out of generation.
pub const LEAKAGE_CUTOFF_YEAR: i32 = 2023;

/// Label fields compared between drugs for one disease.
pub const COMPARED_FIELDS: &[&str] = &[
    "indications_and_usage",
    "contraindications",
    "warnings_and_cautions",
    "drug_interactions",
    "use_in_specific_populations",
    "pregnancy",
    "pediatric_use",
    "geriatric_use",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error("{0}: expected a JSON array of labels or an object with `results`")]
    NotADump(PathBuf),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Labels from an openFDA-style dump: `{"results": [...]}` or a bare array.
pub fn load_label_dump(path: &Path) -> Result<Vec<Value>, IngestError> {
    match files::read_json::<Value>(path)? {
        Value::Array(labels) => Ok(labels),
        Value::Object(mut o) => match o.remove("results") {
            Some(Value::Array(labels)) => Ok(labels),
            _ => Err(IngestError::NotADump(path.to_path_buf())),
        },
        _ => Err(IngestError::NotADump(path.to_path_buf())),
    }
}

fn first_str<'a>(label: &'a Value, pointer: &str) -> Option<&'a str> {
    let v = label.pointer(pointer)?;
    match v {
        Value::String(s) => Some(s),
        Value::Array(a) => a.first()?.as_str(),
        _ => None,
    }
}

fn leading_year(s: &str) -> Option<i32> {
    let digits: String = s.trim().chars().take(4).collect();
    (digits.len() == 4 && digits.chars().all(|c| c.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

/// Approval year of a label: `approval_date` when the dump carries it,
/// else the year of `effective_time`.
pub fn label_year(label: &Value) -> Option<i32> {
    first_str(label, "/approval_date")
        .or_else(|| first_str(label, "/openfda/approval_date"))
        .and_then(leading_year)
        .or_else(|| first_str(label, "/effective_time").and_then(leading_year))
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LeakageReport {
    pub kept: usize,
    pub after_cutoff: usize,
    pub undated: usize,
}

/// Drops labels dated after `cutoff`, and labels with no date at all since
/// they cannot be shown to predate it.
pub fn filter_by_year(labels: Vec<Value>, cutoff: i32) -> (Vec<Value>, LeakageReport) {
    let mut report = LeakageReport::default();
    let kept: Vec<Value> = labels
        .into_iter()
        .filter(|l| match label_year(l) {
            Some(y) if y <= cutoff => true,
            Some(_) => {
                report.after_cutoff += 1;
                false
            }
            None => {
                report.undated += 1;
                false
            }
        })
        .collect();
    report.kept = kept.len();
    (kept, report)
}

/// Brand and generic names of a label.
pub fn label_names(label: &Value) -> Vec<String> {
    let mut out = Vec::new();
    for key in ["brand_name", "generic_name"] {
        if let Some(Value::Array(a)) = label.pointer(&format!("/openfda/{key}")) {
            out.extend(a.iter().filter_map(Value::as_str).map(str::to_string));
        }
    }
    out
}

/// Labels by lowercased brand or generic name; the first label wins.
pub fn index_labels(labels: &[Value]) -> BTreeMap<String, &Value> {
    let mut by_name = BTreeMap::new();
    for l in labels {
        for n in label_names(l) {
            by_name.entry(n.to_lowercase()).or_insert(l);
        }
    }
    by_name
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Association {
    pub disease_id: String,
    pub disease_name: String,
    pub drug_name: String,
}

/// Rows of a `disease_id,disease_name,drug_name` CSV with a header line.
pub fn load_associations(path: &Path) -> Result<Vec<Association>, IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

/// One drug-centered source per label, each from a randomly chosen field.
pub fn drug_sources<R: Rng + ?Sized>(labels: &[Value], rng: &mut R) -> Vec<QuestionSource> {
    labels.iter().filter_map(|l| select_label_field(l, rng)).collect()
}

fn excerpt(label: &Value) -> Value {
    let mut out = serde_json::Map::new();
    for f in COMPARED_FIELDS {
        if let Some(v) = label.get(*f) {
            out.insert((*f).to_string(), v.clone());
        }
    }
    Value::Object(out)
}

/// One disease-centered source per disease with at least two labelled drugs.
/// Drugs without a label in `labels` are skipped.
pub fn disease_sources(associations: &[Association], labels: &[Value], registry: &Registry) -> Vec<QuestionSource> {
    let by_name = index_labels(labels);
    let mut by_disease: BTreeMap<(&str, &str), Vec<DrugCandidate>> = BTreeMap::new();
    for a in associations {
        let Some(label) = by_name.get(&a.drug_name.trim().to_lowercase()) else { continue };
        let drugs = by_disease.entry((&a.disease_id, &a.disease_name)).or_default();
        if drugs.iter().all(|d| !d.name.eq_ignore_ascii_case(a.drug_name.trim())) {
            drugs.push(DrugCandidate {
                name: a.drug_name.trim().to_string(),
                label: excerpt(label),
            });
        }
    }
    by_disease
        .into_iter()
        .filter(|(_, drugs)| drugs.len() >= 2)
        .map(|((id, name), drugs)| {
            let mut tools: Vec<String> = Vec::new();
            for f in COMPARED_FIELDS {
                if drugs.iter().any(|d| d.label.get(*f).is_some()) {
                    for t in tools_returning(registry, f) {
                        if !tools.contains(&t) {
                            tools.push(t);
                        }
                    }
                }
            }
            QuestionSource::DiseaseCentered {
                disease: json!({"id": id, "name": name}),
                drugs,
                tools,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(brand: &str, generic: &str, effective: &str) -> Value {
        json!({
            "effective_time": effective,
            "openfda": {"brand_name": [brand], "generic_name": [generic]},
            "indications_and_usage": [format!("{brand} treats hypertension.")],
            "contraindications": ["None."]
        })
    }

    #[test]
    fn years_and_cutoff() {
        assert_eq!(label_year(&label("A", "a", "20230105")), Some(2023));
        let mut approved = label("B", "b", "20240105");
        approved["approval_date"] = json!("2019-06-01");
        assert_eq!(label_year(&approved), Some(2019));
        let (kept, report) = filter_by_year(vec![label("A", "a", "20230105"), label("C", "c", "20240301"), json!({"openfda": {}}), approved], LEAKAGE_CUTOFF_YEAR);
        assert_eq!(kept.len(), 2);
        assert_eq!(report, LeakageReport { kept: 2, after_cutoff: 1, undated: 1 });
    }

    #[test]
    fn dump_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        std::fs::write(&a, r#"{"meta": {}, "results": [{"x": 1}]}"#).unwrap();
        std::fs::write(&b, r#"[{"x": 1}, {"x": 2}]"#).unwrap();
        assert_eq!(load_label_dump(&a).unwrap().len(), 1);
        assert_eq!(load_label_dump(&b).unwrap().len(), 2);
        std::fs::write(&b, r#"{"x": 1}"#).unwrap();
        assert!(matches!(load_label_dump(&b), Err(IngestError::NotADump(_))));
    }

    #[test]
    fn diseases_need_two_labelled_drugs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("assoc.csv");
        std::fs::write(
            &p,
            "disease_id,disease_name,drug_name\nMONDO:1,hypertension,Altace\nMONDO:1,hypertension,lisinopril\nMONDO:1,hypertension,Unknown\nMONDO:2,gout,Altace\n",
        )
        .unwrap();
        let rows = load_associations(&p).unwrap();
        assert_eq!(rows.len(), 4);
        let labels = vec![label("Altace", "ramipril", "20200101"), label("Zestril", "lisinopril", "20200101")];
        let sources = disease_sources(&rows, &labels, &Registry::new());
        assert_eq!(sources.len(), 1);
        let QuestionSource::DiseaseCentered { drugs, disease, .. } = &sources[0] else { panic!() };
        assert_eq!(disease["name"], "hypertension");
        assert_eq!(drugs.len(), 2);
        assert!(drugs[0].label.get("contraindications").is_some());
    }
}
