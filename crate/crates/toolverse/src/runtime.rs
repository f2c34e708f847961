//! Builds services, transports and loaded artifacts from a [`RunConfig`].

use std::path::Path;

use thiserror::Error;
use toolverse_core::gateway::{Gateway, GatewayMode, HttpTransport};
use toolverse_core::llm::{ChatService, EmbeddingService, HashEmbedder};
use toolverse_core::registry::Registry;
use toolverse_core::toolrag::EmbeddingIndex;

use crate::cassette::{CassetteTransport, Recorder};
use crate::config::RunConfig;
use crate::files::{self, FileError};
use crate::http::{ApiCredentials, LiveTransport};
use crate::services::{load_scripted_chat, Endpoint, HttpChat, HttpEmbedder};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("no chat service: set TOOLVERSE_CHAT_BASE or pass a scripted-service file")]
    NoChat,
    #[error(transparent)]
    File(#[from] FileError),
    #[error("index in {dir} was built with `{built}` but the embedder is `{current}`; rebuild it with `index build`")]
    Fingerprint { dir: String, built: String, current: String },
}

/// A chat service: the scripted file when given, else the configured endpoint.
pub fn chat_service(config: &RunConfig, script: Option<&Path>) -> Result<Box<dyn ChatService>, RuntimeError> {
    if let Some(path) = script.or(config.chat.script.as_deref()) {
        return Ok(Box::new(load_scripted_chat(path)?));
    }
    let base = config.chat.base.clone().ok_or(RuntimeError::NoChat)?;
    Ok(Box::new(HttpChat::new(Endpoint {
        base,
        model: config.chat.model.clone(),
        key: config.secrets.chat_key.clone(),
        timeout: config.http_timeout,
        in_flight: config.chat.in_flight,
    })))
}

/// A chat service for a secondary role (judge, helper, mapper): its own
/// script when given, else none so the caller falls back to the main model.
pub fn role_chat(script: Option<&Path>) -> Result<Option<Box<dyn ChatService>>, RuntimeError> {
    match script {
        Some(p) => Ok(Some(Box::new(load_scripted_chat(p)?))),
        None => Ok(None),
    }
}

/// The configured embedding endpoint, or the built-in hashing embedder when
/// none is set.
pub fn embedder(config: &RunConfig) -> Box<dyn EmbeddingService> {
    match &config.embed.base {
        Some(base) => Box::new(HttpEmbedder::new(Endpoint {
            base: base.clone(),
            model: config.embed.model.clone(),
            key: config.secrets.embed_key.clone(),
            timeout: config.http_timeout,
            in_flight: config.embed.in_flight,
        })),
        None => Box::new(HashEmbedder::new(config.embed.dimension)),
    }
}

/// Transport for the configured mode; simulated runs need none.
pub fn transport(config: &RunConfig, record: bool) -> Option<Box<dyn HttpTransport>> {
    match config.mode {
        GatewayMode::Live => {
            let live = LiveTransport::new(
                config.http_timeout,
                ApiCredentials {
                    fda_api_key: config.secrets.fda_key.clone(),
                },
            );
            if record {
                Some(Box::new(Recorder::new(live, config.cassette_dir.clone())))
            } else {
                Some(Box::new(live))
            }
        }
        GatewayMode::Fixture => Some(Box::new(CassetteTransport::new(config.cassette_dir.clone()))),
        GatewayMode::Simulated => None,
    }
}

pub fn gateway<'a>(
    config: &RunConfig,
    registry: &'a Registry,
    transport: Option<&'a dyn HttpTransport>,
    simulator: Option<&'a dyn ChatService>,
) -> Gateway<'a> {
    let mut g = Gateway::new(registry, config.mode).with_endpoints(config.endpoints.clone());
    if let Some(t) = transport {
        g = g.with_transport(t);
    }
    if let Some(s) = simulator {
        g = g.with_simulator(s);
    }
    g
}

pub fn registry(config: &RunConfig) -> Result<Registry, RuntimeError> {
    Ok(files::load_registry_dir(&config.specs_dir)?)
}

/// The persisted index, if one exists, checked against the embedder.
pub fn index(config: &RunConfig, embedder: &dyn EmbeddingService) -> Result<Option<EmbeddingIndex>, RuntimeError> {
    if !config.index_dir.join(files::MANIFEST_FILE).exists() {
        return Ok(None);
    }
    let ix = files::load_index(&config.index_dir)?;
    let current = embedder.fingerprint();
    if ix.fingerprint() != current {
        return Err(RuntimeError::Fingerprint {
            dir: config.index_dir.display().to_string(),
            built: ix.fingerprint().to_string(),
            current,
        });
    }
    Ok(Some(ix))
}
