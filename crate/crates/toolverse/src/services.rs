//! Chat and embedding backends: OpenAI-compatible HTTP clients with an
//! in-flight cap, and scripted services read from files.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use toolverse_core::gateway::{HttpResponse, TransportError};
use toolverse_core::llm::{ChatError, ChatRequest, ChatService, Completion, EmbedError, EmbeddingService, EmbeddingVector, ScriptedChat, Usage};

use crate::files::{self, FileError};
use crate::http::{http_agent, read_body, with_retries, RetryPolicy};

/// Counting semaphore bounding concurrent requests to one service.
#[derive(Debug)]
pub struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

impl InFlight {
    pub fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

/// Connection settings of one OpenAI-compatible endpoint.
#[derive(Clone)]
pub struct Endpoint {
    pub base: String,
    pub model: String,
    pub key: Option<String>,
    pub timeout: Duration,
    pub in_flight: usize,
}

fn url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

struct Client {
    agent: ureq::Agent,
    endpoint: Endpoint,
    limit: InFlight,
    policy: RetryPolicy,
}

impl Client {
    fn new(endpoint: Endpoint) -> Self {
        Client {
            agent: http_agent(endpoint.timeout),
            limit: InFlight::new(endpoint.in_flight),
            endpoint,
            policy: RetryPolicy::default(),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<String, String> {
        let _permit = self.limit.acquire();
        let target = url(&self.endpoint.base, path);
        let payload = body.to_string();
        let outcome = with_retries(&self.policy, std::thread::sleep, || {
            let mut req = self.agent.post(&target).header("Content-Type", "application/json");
            if let Some(key) = &self.endpoint.key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let response = req.send(payload.as_str()).map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout,
                other => TransportError::Network(other.to_string()),
            })?;
            let (status, body) = read_body(response)?;
            Ok(HttpResponse { status, body })
        });
        match outcome {
            Ok(r) if (200..300).contains(&r.status) => Ok(r.body),
            Ok(r) => Err(format!("HTTP {}: {}", r.status, truncate(&r.body, 300))),
            Err(e) => Err(e.to_string()),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Request body in the chat-completions wire format.
pub fn chat_body(model: &str, request: &ChatRequest) -> Value {
    let mut messages = Vec::with_capacity(request.messages.len() + 1);
    if !request.system_prompt.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_prompt}));
    }
    for m in &request.messages {
        messages.push(json!({"role": m.role.as_str(), "content": m.content}));
    }
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": request.sampling.temperature,
        "max_tokens": request.sampling.max_tokens,
    });
    if !request.sampling.stop_sequences.is_empty() {
        body["stop"] = json!(request.sampling.stop_sequences);
    }
    body
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub fn parse_chat_reply(body: &str) -> Result<Completion, ChatError> {
    let reply: ChatReply = serde_json::from_str(body).map_err(|e| ChatError::Transport(format!("malformed reply: {e}")))?;
    let choice = reply
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ChatError::Transport("reply has no choices".into()))?;
    Ok(Completion {
        text: choice.message.content.unwrap_or_default(),
        usage: reply.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
    })
}

/// Chat completions over HTTP.
pub struct HttpChat {
    client: Client,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl HttpChat {
    pub fn new(endpoint: Endpoint) -> Self {
        HttpChat {
            client: Client::new(endpoint),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    /// Tokens used so far, as reported by the service.
    pub fn usage(&self) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }
}

impl ChatService for HttpChat {
    fn model_id(&self) -> &str {
        &self.client.endpoint.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, ChatError> {
        let body = self
            .client
            .post("chat/completions", &chat_body(&self.client.endpoint.model, request))
            .map_err(ChatError::Transport)?;
        let completion = parse_chat_reply(&body)?;
        if let Some(u) = completion.usage {
            self.prompt_tokens.fetch_add(u.prompt_tokens, Ordering::Relaxed);
            self.completion_tokens.fetch_add(u.completion_tokens, Ordering::Relaxed);
        }
        Ok(completion)
    }
}

#[derive(Deserialize)]
struct EmbedReply {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f32>,
}

/// Vectors in input order; the service may list them in any order.
pub fn parse_embed_reply(body: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let reply: EmbedReply = serde_json::from_str(body).map_err(|e| EmbedError::Transport(format!("malformed reply: {e}")))?;
    let mut data = reply.data;
    data.sort_by_key(|d| d.index);
    Ok(data.into_iter().map(|d| EmbeddingVector(d.embedding)).collect())
}

/// Embeddings over HTTP. Queries are embedded as raw text.
pub struct HttpEmbedder {
    client: Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: Endpoint) -> Self {
        HttpEmbedder {
            client: Client::new(endpoint),
        }
    }
}

impl EmbeddingService for HttpEmbedder {
    fn fingerprint(&self) -> String {
        format!("{}#raw", self.client.endpoint.model)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = json!({"model": self.client.endpoint.model, "input": texts});
        let reply = self.client.post("embeddings", &body).map_err(EmbedError::Transport)?;
        parse_embed_reply(&reply)
    }
}

/// A scripted chat service from a JSON array of replies.
pub fn load_scripted_chat(path: &Path) -> Result<ScriptedChat, FileError> {
    let replies: Vec<String> = files::read_json(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ScriptedChat::new(replies).with_model(format!("scripted:{name}")))
}
