//! Executes function calls: argument checking, request compilation, response
//! envelope unwrapping, Special tools, and language-model simulation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::call::{FunctionCall, ResultSource, ToolResult};
use crate::llm::{chat, ChatRequest, ChatService};
use crate::prompts;
use crate::registry::Registry;
use crate::request::{compile, Api, CompiledRequest, Endpoints};
use crate::spec::{check_arguments, ArgumentError, MappingRule, SpecialTool, ToolSpec};
use crate::util::canonical_json;

/// Error kinds carried in `payload.error.kind` of failed results.
pub mod kind {
    pub const UNKNOWN_TOOL: &str = "unknown_tool";
    pub const MISSING_ARGUMENT: &str = "missing_argument";
    pub const UNKNOWN_ARGUMENT: &str = "unknown_argument";
    pub const TYPE_MISMATCH: &str = "type_mismatch";
    pub const REQUEST: &str = "request_build";
    pub const TRANSPORT: &str = "transport";
    pub const NO_FIXTURE: &str = "no_fixture";
    pub const HTTP_STATUS: &str = "http_status";
    pub const BAD_RESPONSE: &str = "bad_response";
    pub const API_ERROR: &str = "api_error";
    pub const AGENT_HANDLED: &str = "agent_handled";
    pub const NO_SIMULATOR: &str = "no_simulator";
    pub const SIMULATOR: &str = "simulator";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("no recorded response for request {0}")]
    NoFixture(String),
}

/// Sends compiled requests: a live HTTP client or a cassette player.
pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &CompiledRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: HttpTransport + ?Sized> HttpTransport for &T {
    fn send(&self, request: &CompiledRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

/// Anything that turns function calls into results.
pub trait ToolExecutor: Send + Sync {
    fn execute(&self, call: &FunctionCall) -> ToolResult;

    /// Results in call order. Implementations may run calls concurrently.
    fn execute_batch(&self, calls: &[FunctionCall]) -> Vec<ToolResult> {
        calls.iter().map(|c| self.execute(c)).collect()
    }
}

impl<T: ToolExecutor + ?Sized> ToolExecutor for &T {
    fn execute(&self, call: &FunctionCall) -> ToolResult {
        (**self).execute(call)
    }
    fn execute_batch(&self, calls: &[FunctionCall]) -> Vec<ToolResult> {
        (**self).execute_batch(calls)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    #[default]
    Live,
    Fixture,
    /// Every API tool is answered by the simulator chat service.
    Simulated,
}

impl GatewayMode {
    fn source(self) -> ResultSource {
        match self {
            GatewayMode::Live => ResultSource::Live,
            GatewayMode::Fixture => ResultSource::Fixture,
            GatewayMode::Simulated => ResultSource::Simulated,
        }
    }
}

/// Outcome of unwrapping an API response envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Unwrapped {
    Records(Value),
    Empty,
    Error { kind: &'static str, message: String },
}

fn lookup<'v>(record: &'v Value, dotted: &str) -> Option<&'v Value> {
    dotted.split('.').try_fold(record, |v, key| v.get(key))
}

fn project(record: &Value, fields: &[String]) -> Option<Value> {
    if fields.is_empty() {
        return Some(record.clone());
    }
    let mut out = Map::new();
    for f in fields {
        if let Some(v) = lookup(record, f) {
            out.insert(f.clone(), v.clone());
        }
    }
    (!out.is_empty()).then_some(Value::Object(out))
}

/// Null, empty containers, and containers of only empty values carry no records.
pub fn is_vacant(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Array(items) => items.iter().all(is_vacant),
        Value::Object(m) => m.values().all(is_vacant),
        Value::String(s) => s.trim().is_empty(),
        _ => false,
    }
}

/// Applies the per-API envelope rules:
///
/// * openFDA: records are `results`, projected to the return fields; 404 is
///   the API's "no matches" and counts as empty.
/// * Open Targets: the `data` object; `errors` without data is an error;
///   data whose fields are all null or empty is empty.
/// * Monarch: records are `items` when present, otherwise the object itself;
///   404 is empty.
pub fn unwrap_response(request: &CompiledRequest, response: &HttpResponse) -> Unwrapped {
    let status = response.status;
    if status == 404 && matches!(request.api, Api::OpenFda | Api::Monarch) {
        return Unwrapped::Empty;
    }
    if !(200..300).contains(&status) {
        return Unwrapped::Error {
            kind: kind::HTTP_STATUS,
            message: alloc::format!("HTTP {status}: {}", crate::util::truncate_chars(&response.body, 200)),
        };
    }
    let body: Value = match serde_json::from_str(&response.body) {
        Ok(v) => v,
        Err(e) => {
            return Unwrapped::Error {
                kind: kind::BAD_RESPONSE,
                message: e.to_string(),
            }
        }
    };
    match request.api {
        Api::OpenFda => {
            let Some(results) = body.get("results").and_then(Value::as_array) else {
                return Unwrapped::Empty;
            };
            let records: Vec<Value> = results
                .iter()
                .filter_map(|r| project(r, &request.projection))
                .filter(|r| !is_vacant(r))
                .collect();
            if records.is_empty() {
                Unwrapped::Empty
            } else {
                Unwrapped::Records(Value::Array(records))
            }
        }
        Api::OpenTargets => {
            let data = body.get("data").cloned().unwrap_or(Value::Null);
            let errors = body.get("errors").filter(|e| !is_vacant(e));
            if let (Some(errors), true) = (errors, data.is_null()) {
                return Unwrapped::Error {
                    kind: kind::API_ERROR,
                    message: canonical_json(errors),
                };
            }
            if is_vacant(&data) {
                Unwrapped::Empty
            } else {
                Unwrapped::Records(data)
            }
        }
        Api::Monarch => {
            let records = match body.get("items") {
                Some(items) => items.clone(),
                None => body,
            };
            if is_vacant(&records) {
                Unwrapped::Empty
            } else {
                Unwrapped::Records(records)
            }
        }
    }
}

/// Answers a call with a chat model prompted to act as the tool.
pub fn llm_simulate_tool(spec: &ToolSpec, call: &FunctionCall, chat_service: &dyn ChatService) -> ToolResult {
    let prompt = simulation_prompt(spec, call);
    match chat(chat_service, &ChatRequest::single(prompt)) {
        Ok(text) if text.trim().is_empty() => ToolResult::empty(&call.call_id, ResultSource::Simulated),
        Ok(text) => ToolResult::ok(&call.call_id, Value::String(text), ResultSource::Simulated),
        Err(e) => ToolResult::error(&call.call_id, kind::SIMULATOR, e.to_string(), ResultSource::Simulated),
    }
}

pub fn simulation_prompt(spec: &ToolSpec, call: &FunctionCall) -> String {
    let description = spec.description_json();
    let arguments = canonical_json(&Value::Object(call.arguments.clone()));
    prompts::fill(
        prompts::LLM_AS_TOOL,
        &[("description", &description), ("arguments", &arguments)],
    )
}

fn argument_error(call: &FunctionCall, e: &ArgumentError) -> ToolResult {
    let k = match e {
        ArgumentError::UnknownArgument { .. } => kind::UNKNOWN_ARGUMENT,
        ArgumentError::MissingArgument { .. } => kind::MISSING_ARGUMENT,
        ArgumentError::TypeMismatch { .. } => kind::TYPE_MISMATCH,
    };
    let mut r = ToolResult::error(&call.call_id, k, e.to_string(), ResultSource::Builtin);
    if let Some(err) = r.payload.get_mut("error").and_then(Value::as_object_mut) {
        err.insert("argument".into(), Value::String(e.argument().to_string()));
    }
    r
}

/// Executes calls against a registry.
pub struct Gateway<'a> {
    registry: &'a Registry,
    transport: Option<&'a dyn HttpTransport>,
    simulator: Option<&'a dyn ChatService>,
    mode: GatewayMode,
    endpoints: Endpoints,
}

impl<'a> Gateway<'a> {
    pub fn new(registry: &'a Registry, mode: GatewayMode) -> Self {
        Gateway {
            registry,
            transport: None,
            simulator: None,
            mode,
            endpoints: Endpoints::default(),
        }
    }

    pub fn with_transport(mut self, transport: &'a dyn HttpTransport) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn with_simulator(mut self, chat: &'a dyn ChatService) -> Self {
        self.simulator = Some(chat);
        self
    }

    pub fn with_endpoints(mut self, endpoints: Endpoints) -> Self {
        self.endpoints = endpoints;
        self
    }

    /// The same transport, simulator, mode and endpoints over another registry.
    pub fn with_registry<'b>(&self, registry: &'b Registry) -> Gateway<'b>
    where
        'a: 'b,
    {
        Gateway {
            registry,
            transport: self.transport,
            simulator: self.simulator,
            mode: self.mode,
            endpoints: self.endpoints.clone(),
        }
    }

    pub fn registry(&self) -> &'a Registry {
        self.registry
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.endpoints
    }

    /// Compiles a call without sending it.
    pub fn compile(&self, call: &FunctionCall) -> Result<CompiledRequest, ToolResult> {
        let spec = self.registry.get(&call.tool_name).ok_or_else(|| {
            ToolResult::error(&call.call_id, kind::UNKNOWN_TOOL, call.tool_name.clone(), ResultSource::Builtin)
        })?;
        let args = check_arguments(spec, &call.arguments).map_err(|e| argument_error(call, &e))?;
        compile(spec, &args, &self.endpoints)
            .map_err(|e| ToolResult::error(&call.call_id, kind::REQUEST, e.to_string(), ResultSource::Builtin))
    }

    fn simulate(&self, spec: &ToolSpec, call: &FunctionCall) -> ToolResult {
        match self.simulator {
            Some(chat_service) => llm_simulate_tool(spec, call, chat_service),
            None => ToolResult::error(
                &call.call_id,
                kind::NO_SIMULATOR,
                "no simulator service configured",
                ResultSource::Simulated,
            ),
        }
    }

    fn send(&self, call: &FunctionCall, request: &CompiledRequest) -> ToolResult {
        let source = self.mode.source();
        let Some(transport) = self.transport else {
            return ToolResult::error(&call.call_id, kind::TRANSPORT, "no transport configured", source);
        };
        match transport.send(request) {
            Ok(response) => match unwrap_response(request, &response) {
                Unwrapped::Records(payload) => ToolResult::ok(&call.call_id, payload, source),
                Unwrapped::Empty => ToolResult::empty(&call.call_id, source),
                Unwrapped::Error { kind, message } => ToolResult::error(&call.call_id, kind, message, source),
            },
            Err(TransportError::NoFixture(h)) => ToolResult::error(&call.call_id, kind::NO_FIXTURE, h, source),
            Err(e) => ToolResult::error(&call.call_id, kind::TRANSPORT, e.to_string(), source),
        }
    }

    pub fn execute_call(&self, call: &FunctionCall) -> ToolResult {
        let Some(spec) = self.registry.get(&call.tool_name) else {
            return ToolResult::error(&call.call_id, kind::UNKNOWN_TOOL, call.tool_name.clone(), ResultSource::Builtin);
        };
        let args = match check_arguments(spec, &call.arguments) {
            Ok(a) => a,
            Err(e) => return argument_error(call, &e),
        };
        match &spec.mapping {
            MappingRule::Special { builtin } => special_result(*builtin, &call.call_id, &args),
            MappingRule::LlmSimulated {} => self.simulate(spec, call),
            _ if self.mode == GatewayMode::Simulated => self.simulate(spec, call),
            _ => match compile(spec, &args, &self.endpoints) {
                Ok(request) => self.send(call, &request),
                Err(e) => ToolResult::error(&call.call_id, kind::REQUEST, e.to_string(), self.mode.source()),
            },
        }
    }
}

/// Local handling of the builtins. ToolRAG needs the agent's index and is
/// reported as such when it reaches the gateway.
pub fn special_result(builtin: SpecialTool, call_id: &str, args: &Map<String, Value>) -> ToolResult {
    match builtin {
        SpecialTool::ToolRAG => ToolResult::error(
            call_id,
            kind::AGENT_HANDLED,
            "ToolRAG is executed by the agent",
            ResultSource::Builtin,
        ),
        _ => {
            let mut payload = Map::new();
            payload.insert("terminal".into(), Value::Bool(true));
            if let Some(answer) = args.get("answer") {
                payload.insert("answer".into(), answer.clone());
            }
            ToolResult::ok(call_id, Value::Object(payload), ResultSource::Builtin)
        }
    }
}

impl ToolExecutor for Gateway<'_> {
    fn execute(&self, call: &FunctionCall) -> ToolResult {
        self.execute_call(call)
    }
}
