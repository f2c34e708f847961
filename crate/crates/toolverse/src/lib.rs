//! Std companion to `toolverse-core`: configuration, file formats,
//! HTTP transports, service clients and the command-line front end.

pub mod cassette;
pub mod config;
pub mod files;
pub mod http;
pub mod services;
pub mod exec;
pub mod harness;
pub mod ingest;
pub mod pipeline;
pub mod runtime;
pub mod cli;
