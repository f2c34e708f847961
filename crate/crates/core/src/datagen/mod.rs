//! Data generation: tool specs from API docs, questions, reasoning traces,
//! trace filtering and step-wise training samples.

pub mod evaluate;
pub mod export;
pub mod questgen;
pub mod review;
pub mod toolgen;
pub mod tracegen;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::Question;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    DrugCentered,
    DiseaseCentered,
    ToolChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<BTreeMap<String, String>>,
    pub ground_truth: String,
    pub explanation: String,
    pub question_type: QuestionType,
    pub reference_info: Vec<Value>,
    #[serde(default)]
    pub initial_tools: Vec<String>,
}

impl QuestionRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if let Some(opts) = &self.options {
            if !(2..=5).contains(&opts.len()) {
                return Err(alloc::format!("{} options, expected 2 to 5", opts.len()));
            }
            if !opts.contains_key(&self.ground_truth) {
                return Err(alloc::format!("ground truth `{}` is not an option", self.ground_truth));
            }
        }
        if self.reference_info.is_empty() {
            return Err("no reference information".into());
        }
        Ok(())
    }

    pub fn to_question(&self) -> Question {
        Question {
            text: self.question.clone(),
            options: self.options.clone(),
        }
    }
}

/// First JSON object or array in a model reply, tolerating prose and code
/// fences around it.
pub fn extract_json(text: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        if v.is_object() || v.is_array() {
            return Some(v);
        }
    }
    for (i, c) in text.char_indices() {
        if c != '[' && c != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_inside_fences() {
        let v = extract_json("Here you go:\n```json\n{\"a\": [1, 2]}\n```").unwrap();
        assert_eq!(v["a"][1], 2);
        assert!(extract_json("no json here").is_none());
    }
}
