//! Live HTTP: retries with exponential backoff, a TTL response cache, and
//! credentials attached only when a request goes on the wire.

use std::collections::HashMap;
use std::io::Read;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use toolverse_core::gateway::{HttpResponse, HttpTransport, TransportError};
use toolverse_core::request::{Api, CompiledRequest, Method};

/// Bodies larger than this are cut off when read.
const MAX_BODY_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Pause before attempt `n` (1-based; attempt 1 has none).
    pub fn backoff(&self, n: u32) -> Duration {
        if n <= 1 {
            Duration::ZERO
        } else {
            self.initial_backoff * 2u32.saturating_pow(n - 2)
        }
    }
}

/// Transport failures, 5xx and 429 are worth another attempt.
pub fn is_retryable(outcome: &Result<HttpResponse, TransportError>) -> bool {
    match outcome {
        Ok(r) => r.status == 429 || (500..600).contains(&r.status),
        Err(TransportError::NoFixture(_)) => false,
        Err(_) => true,
    }
}

/// Runs `attempt` until it gives a non-retryable outcome or the policy is
/// used up, and returns the last outcome.
pub fn with_retries<F, S>(policy: &RetryPolicy, mut sleep: S, mut attempt: F) -> Result<HttpResponse, TransportError>
where
    F: FnMut() -> Result<HttpResponse, TransportError>,
    S: FnMut(Duration),
{
    let mut n = 1;
    loop {
        let outcome = attempt();
        if n >= policy.attempts.max(1) || !is_retryable(&outcome) {
            return outcome;
        }
        n += 1;
        sleep(policy.backoff(n));
    }
}

/// Successful responses by request hash. Identical requests give
/// interchangeable responses, so concurrent writers simply overwrite.
#[derive(Debug)]
pub struct ResponseCache {
    ttl: Duration,
    entries: Mutex<HashMap<String, (Instant, HttpResponse)>>,
}

impl ResponseCache {
    pub fn new(ttl: Duration) -> Self {
        ResponseCache {
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, key: &str, now: Instant) -> Option<HttpResponse> {
        let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries
            .get(key)
            .filter(|(at, _)| now.duration_since(*at) < self.ttl)
            .map(|(_, r)| r.clone())
    }

    pub fn put(&self, key: String, response: HttpResponse, now: Instant) {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).insert(key, (now, response));
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const DEFAULT_CACHE_TTL: Duration = Duration::from_secs(24 * 60 * 60);

/// Optional upstream credentials.
#[derive(Clone, Default)]
pub struct ApiCredentials {
    pub fda_api_key: Option<String>,
}

/// The URL actually sent: the compiled URL plus any credential parameter.
pub fn wire_url(request: &CompiledRequest, credentials: &ApiCredentials) -> String {
    match (&request.api, &credentials.fda_api_key) {
        (Api::OpenFda, Some(key)) => {
            let sep = if request.url.contains('?') { '&' } else { '?' };
            let key = utf8_percent_encode(key, NON_ALPHANUMERIC);
            format!("{}{sep}api_key={key}", request.url)
        }
        _ => request.url.clone(),
    }
}

pub struct LiveTransport {
    agent: ureq::Agent,
    policy: RetryPolicy,
    cache: ResponseCache,
    credentials: ApiCredentials,
}

pub fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::new_with_config(
        ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build(),
    )
}

fn classify(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Network(other.to_string()),
    }
}

pub(crate) fn read_body(mut response: ureq::http::Response<ureq::Body>) -> Result<(u16, String), TransportError> {
    let status = response.status().as_u16();
    let mut body = String::new();
    response
        .body_mut()
        .as_reader()
        .take(MAX_BODY_BYTES)
        .read_to_string(&mut body)
        .map_err(|e| TransportError::Network(e.to_string()))?;
    Ok((status, body))
}

impl LiveTransport {
    pub fn new(timeout: Duration, credentials: ApiCredentials) -> Self {
        LiveTransport {
            agent: http_agent(timeout),
            policy: RetryPolicy::default(),
            cache: ResponseCache::new(DEFAULT_CACHE_TTL),
            credentials,
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_cache_ttl(mut self, ttl: Duration) -> Self {
        self.cache = ResponseCache::new(ttl);
        self
    }

    fn send_once(&self, request: &CompiledRequest) -> Result<HttpResponse, TransportError> {
        let url = wire_url(request, &self.credentials);
        let result = match request.method {
            Method::Get => self.agent.get(&url).header("Accept", &request.accept).call(),
            Method::Post => self
                .agent
                .post(&url)
                .header("Accept", &request.accept)
                .header("Content-Type", "application/json")
                .send(request.body.clone().unwrap_or_default()),
        };
        let (status, body) = read_body(result.map_err(classify)?)?;
        Ok(HttpResponse { status, body })
    }
}

impl HttpTransport for LiveTransport {
    fn send(&self, request: &CompiledRequest) -> Result<HttpResponse, TransportError> {
        let key = request.hash();
        if let Some(hit) = self.cache.get(&key, Instant::now()) {
            return Ok(hit);
        }
        let outcome = with_retries(&self.policy, std::thread::sleep, || self.send_once(request));
        if let Ok(r) = &outcome {
            if (200..300).contains(&r.status) {
                self.cache.put(key, r.clone(), Instant::now());
            }
        }
        outcome
    }
}
