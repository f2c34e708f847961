//! Contracts for chat-completion and embedding services, plus the scripted
//! and deterministic implementations the tests run against.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f32,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            max_tokens: 2048,
            stop_sequences: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub sampling: Sampling,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, messages: Vec<Message>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            messages,
            sampling: Sampling::default(),
        }
    }

    /// One-message request with no system prompt.
    pub fn single(user: impl Into<String>) -> Self {
        ChatRequest::new(String::new(), alloc::vec![Message::user(user)])
    }

    /// Flat text form of the prompt, used for echoing, size checks and logs.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.system_prompt.is_empty() {
            out.push_str("[system]\n");
            out.push_str(&self.system_prompt);
            out.push('\n');
        }
        for m in &self.messages {
            out.push('[');
            out.push_str(m.role.as_str());
            out.push_str("]\n");
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }

    pub fn prompt_chars(&self) -> usize {
        self.system_prompt.chars().count() + self.messages.iter().map(|m| m.content.chars().count()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("prompt of {actual} exceeds the context window of {limit}")]
    ContextOverflow { limit: usize, actual: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("scripted service has no replies left")]
    Exhausted,
}

/// A chat-completion backend (the agent model, the summarizer, judges, ...).
pub trait ChatService: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError>;
}

impl<T: ChatService + ?Sized> ChatService for &T {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError> {
        (**self).complete(request)
    }
}

impl<T: ChatService + ?Sized> ChatService for Box<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError> {
        (**self).complete(request)
    }
}

/// Cuts `text` before the earliest occurrence of any stop sequence.
pub fn apply_stop_sequences(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

/// Sends `request` and returns the completion text with stop sequences honored.
pub fn chat(service: &dyn ChatService, request: &ChatRequest) -> Result<String, ChatError> {
    if request.sampling.stop_sequences.iter().any(String::is_empty) {
        return Err(ChatError::InvalidRequest("empty stop sequence".into()));
    }
    let completion = service.complete(request)?;
    Ok(apply_stop_sequences(&completion.text, &request.sampling.stop_sequences))
}

/// Replies from a fixed queue, first in first out.
#[derive(Debug)]
pub struct ScriptedChat {
    model: String,
    replies: Vec<String>,
    cursor: AtomicUsize,
    context_limit: Option<usize>,
}

impl ScriptedChat {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedChat {
            model: "scripted".into(),
            replies: replies.into_iter().map(Into::into).collect(),
            cursor: AtomicUsize::new(0),
            context_limit: None,
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// Rejects prompts longer than `chars` with [`ChatError::ContextOverflow`].
    pub fn with_context_limit(mut self, chars: usize) -> Self {
        self.context_limit = Some(chars);
        self
    }

    pub fn consumed(&self) -> usize {
        self.cursor.load(Ordering::SeqCst).min(self.replies.len())
    }

    pub fn remaining(&self) -> usize {
        self.replies.len() - self.consumed()
    }
}

impl ChatService for ScriptedChat {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError> {
        if let Some(limit) = self.context_limit {
            let actual = request.prompt_chars();
            if actual > limit {
                return Err(ChatError::ContextOverflow { limit, actual });
            }
        }
        let idx = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.replies
            .get(idx)
            .map(|r| Completion::text(r.clone()))
            .ok_or(ChatError::Exhausted)
    }
}

/// Replies with the rendered prompt.
#[derive(Debug, Default)]
pub struct EchoChat;

impl ChatService for EchoChat {
    fn model_id(&self) -> &str {
        "echo"
    }
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError> {
        Ok(Completion::text(request.render()))
    }
}

/// Replies computed by a closure over the request; deterministic under
/// concurrency, unlike a shared FIFO.
pub struct FnChat<F> {
    model: String,
    f: F,
}

impl<F> FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, f: F) -> Self {
        FnChat { model: model.into(), f }
    }
}

impl<F> ChatService for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        &self.model
    }
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError> {
        (self.f)(request).map(Completion::text)
    }
}

/// First line of a judge reply as a YES/NO verdict, with the remaining lines
/// as rationale. Anything else is ambiguous and yields `None`.
pub fn parse_verdict(reply: &str) -> Option<(bool, String)> {
    let mut lines = reply.lines().skip_while(|l| l.trim().is_empty());
    let first = lines.next()?;
    let token = first
        .trim()
        .trim_matches(|c: char| c == '*' || c == '"' || c == '\'' || c == '`')
        .trim_end_matches(['.', '!', ':'])
        .trim();
    let verdict = if token.eq_ignore_ascii_case("yes") {
        true
    } else if token.eq_ignore_ascii_case("no") {
        false
    } else {
        return None;
    };
    let rationale = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    Some((verdict, rationale))
}

// ---- embeddings ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn values(&self) -> &[f32] {
        &self.0
    }
    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("no texts to embed")]
    EmptyInput,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("service returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding dimension changed from {expected} to {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedding has zero dimension")]
    ZeroDimension,
}

pub trait EmbeddingService: Send + Sync {
    /// Identifies model and query formatting; indexes refuse mismatched embedders.
    fn fingerprint(&self) -> String;
    fn max_batch(&self) -> usize {
        64
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

impl<T: EmbeddingService + ?Sized> EmbeddingService for &T {
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

/// Embeds `texts` in service-sized batches and checks the shape contract:
/// one finite vector per text, in order, all of one dimension.
pub fn embed(service: &dyn EmbeddingService, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let mut out: Vec<EmbeddingVector> = Vec::with_capacity(texts.len());
    let mut dimension: Option<usize> = None;
    for chunk in texts.chunks(service.max_batch().max(1)) {
        let vectors = service.embed_batch(chunk)?;
        if vectors.len() != chunk.len() {
            return Err(EmbedError::CountMismatch {
                expected: chunk.len(),
                got: vectors.len(),
            });
        }
        for v in vectors {
            if v.dimension() == 0 {
                return Err(EmbedError::ZeroDimension);
            }
            match dimension {
                None => dimension = Some(v.dimension()),
                Some(d) if d != v.dimension() => {
                    return Err(EmbedError::DimensionDrift {
                        expected: d,
                        got: v.dimension(),
                    })
                }
                _ => {}
            }
            if v.0.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite);
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Deterministic bag-of-words embedder: each lowercased token is hashed
/// (FNV-1a) into a signed bucket. Similar wording gives similar vectors,
/// which is enough for offline retrieval tests.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    batch: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        HashEmbedder {
            dimension: dimension.max(1),
            batch: 64,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.max(1);
        self
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = alloc::vec![0.0f32; self.dimension];
        for tok in crate::util::tokens(text) {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in tok.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            let idx = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign;
        }
        EmbeddingVector(v)
    }
}

impl EmbeddingService for HashEmbedder {
    fn fingerprint(&self) -> String {
        format!("hash-embedder-v1/d{}", self.dimension)
    }
    fn max_batch(&self) -> usize {
        self.batch
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
