//! Manual review queue: generated specs and questions wait here until a
//! person approves or rejects them.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewKind {
    Spec,
    Question,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    #[default]
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub kind: ReviewKind,
    #[serde(default)]
    pub status: ReviewStatus,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReviewQueue {
    pub items: Vec<ReviewItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReviewError {
    #[error("review item `{0}` already queued")]
    Duplicate(String),
    #[error("no review item `{0}`")]
    Unknown(String),
}

impl ReviewQueue {
    pub fn enqueue(&mut self, id: impl Into<String>, kind: ReviewKind, payload: Value) -> Result<(), ReviewError> {
        let id = id.into();
        if self.items.iter().any(|i| i.id == id) {
            return Err(ReviewError::Duplicate(id));
        }
        self.items.push(ReviewItem {
            id,
            kind,
            status: ReviewStatus::Pending,
            payload,
            note: String::new(),
        });
        Ok(())
    }

    pub fn set_status(&mut self, id: &str, status: ReviewStatus, note: &str) -> Result<(), ReviewError> {
        let item = self
            .items
            .iter_mut()
            .find(|i| i.id == id)
            .ok_or_else(|| ReviewError::Unknown(id.to_string()))?;
        item.status = status;
        item.note = note.to_string();
        Ok(())
    }

    pub fn with_status(&self, kind: ReviewKind, status: ReviewStatus) -> impl Iterator<Item = &ReviewItem> {
        self.items.iter().filter(move |i| i.kind == kind && i.status == status)
    }

    /// Payloads cleared for use.
    pub fn approved(&self, kind: ReviewKind) -> Vec<&Value> {
        self.with_status(kind, ReviewStatus::Approved).map(|i| &i.payload).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn only_approved_items_are_released() {
        let mut q = ReviewQueue::default();
        q.enqueue("a", ReviewKind::Spec, json!({"name": "a"})).unwrap();
        q.enqueue("b", ReviewKind::Spec, json!({"name": "b"})).unwrap();
        assert!(q.enqueue("a", ReviewKind::Spec, json!({})).is_err());
        assert!(q.approved(ReviewKind::Spec).is_empty());
        q.set_status("b", ReviewStatus::Approved, "looks right").unwrap();
        assert_eq!(q.approved(ReviewKind::Spec), [&json!({"name": "b"})]);
        assert!(q.set_status("zz", ReviewStatus::Rejected, "").is_err());
    }
}
