//! Recorded request/response pairs for offline runs: one JSON file per
//! request hash holding the request, the status and the raw body.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toolverse_core::gateway::{HttpResponse, HttpTransport, TransportError};
use toolverse_core::request::CompiledRequest;

use crate::files::{self, FileError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub request: CompiledRequest,
    pub status: u16,
    pub body: String,
}

pub fn cassette_path(dir: &Path, request: &CompiledRequest) -> PathBuf {
    dir.join(format!("{}.json", request.hash()))
}

pub fn save_cassette(dir: &Path, cassette: &Cassette) -> Result<PathBuf, FileError> {
    let path = cassette_path(dir, &cassette.request);
    files::write_json(&path, cassette)?;
    Ok(path)
}

/// Replays cassettes from a directory. Unrecorded requests fail with
/// [`TransportError::NoFixture`]; nothing touches the network.
#[derive(Debug, Clone)]
pub struct CassetteTransport {
    dir: PathBuf,
}

impl CassetteTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CassetteTransport { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl HttpTransport for CassetteTransport {
    fn send(&self, request: &CompiledRequest) -> Result<HttpResponse, TransportError> {
        let path = cassette_path(&self.dir, request);
        if !path.exists() {
            return Err(TransportError::NoFixture(request.hash()));
        }
        let cassette: Cassette = files::read_json(&path).map_err(|e| TransportError::Network(e.to_string()))?;
        if cassette.request != *request {
            return Err(TransportError::Network(format!("{} records a different request", path.display())));
        }
        Ok(HttpResponse {
            status: cassette.status,
            body: cassette.body,
        })
    }
}

/// Forwards to another transport and records every response it gets.
pub struct Recorder<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: HttpTransport> Recorder<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        Recorder { inner, dir: dir.into() }
    }
}

impl<T: HttpTransport> HttpTransport for Recorder<T> {
    fn send(&self, request: &CompiledRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.send(request)?;
        let cassette = Cassette {
            request: request.clone(),
            status: response.status,
            body: response.body.clone(),
        };
        if let Err(e) = save_cassette(&self.dir, &cassette) {
            log::warn!("could not record cassette: {e}");
        }
        Ok(response)
    }
}
