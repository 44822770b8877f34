//! Allocation-only building blocks of the openloop agent runtime.
//!
//! Everything here is pure: no filesystem, no network, no clock. The std
//! companion crate `openloop` wires these pieces to real IO.
//!
//! - [`message`]: conversation messages and the per-run transcript buffer.
//! - [`template`]: system prompt templates, nudges and prompt windowing.
//! - [`parse`]: extraction of task tags, action blocks, final answers and
//!   run records from model replies.
//! - [`action`]: the structured tool-call program the model emits.
//! - [`record`]: long-term memory records, their line codec and the digest.
//! - [`dedup`]: task normalization and Jaccard repetition checks.
//! - [`jail`]: lexical normalization of workspace-relative paths.
//! - [`model`]: chat parameters, the model trait, wire format and the
//!   scripted test model.
#![no_std]

extern crate alloc;

pub mod action;
pub mod dedup;
pub mod goal;
pub mod jail;
pub mod loop_detect;
pub mod message;
pub mod model;
pub mod parse;
pub mod record;
pub mod summary;
pub mod template;
mod text;

pub use action::{ActionProgram, ToolCall, ToolKind};
pub use goal::{DuplicatePolicy, TaskOrigin, TaskSpec};
pub use message::{Message, Role, StepTag, Transcript};
pub use model::{ChatModel, ChatParams, FinishReason, ModelError, ModelReply, ScriptedModel};
pub use record::{RecordKind, RunRecord};
