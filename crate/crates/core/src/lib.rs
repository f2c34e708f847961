//! Core of the toolverse runtime.
//!
//! Everything in this crate is allocation-only (`no_std` + `alloc`): tool
//! specifications and their validation, compilation of function calls into
//! HTTP requests, the multi-step reasoning loop, embedding retrieval, the
//! data-generation pipelines and the evaluation protocols. Anything that
//! touches the network, the filesystem, clocks or threads sits behind one of
//! the service traits ([`llm::ChatService`], [`llm::EmbeddingService`],
//! [`gateway::HttpTransport`], [`agent::ToolExecutor`]) and is provided by the
//! `toolverse` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod augment;
pub mod call;
pub mod category;
pub mod datagen;
pub mod eval;
pub mod gateway;
pub mod graph;
pub mod llm;
pub mod prompts;
pub mod registry;
pub mod request;
pub mod spec;
pub mod toolrag;
pub mod trace;
pub mod util;

pub use call::{FunctionCall, ResultSource, ResultStatus, ToolResult};
pub use registry::Registry;
pub use spec::{ArgSpec, MappingRule, SpecialTool, ToolSpec, ValueType};
pub use trace::{ReasoningStep, ReasoningTrace, Terminal};

/// Marker that switches a reasoning step from function calls to the final answer.
pub const FINAL_ANSWER_MARKER: &str = "[FinalAnswer]";
