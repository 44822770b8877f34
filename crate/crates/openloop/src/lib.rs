//! Runtime for an open-ended agent: a model gateway, jailed file tools, an
//! append-only memory file, the agent loop, and a small HTTP service.

pub mod cli;
pub mod config;
pub mod events;
pub mod gateway;
pub mod goal;
pub mod orchestrator;
pub mod react;
pub mod service;
pub mod store;
pub mod tools;
