//! Extraction of structured artifacts from free-form model replies.
//!
//! All functions here are pure and total: every input maps to exactly one
//! value or one error.

use alloc::string::{String, ToString};

use serde_json::Value;

use crate::action::{ActionError, ActionProgram};

pub const TASK_OPEN: &str = "<task>";
pub const TASK_CLOSE: &str = "</task>";
pub const FINAL_OPEN: &str = "<final>";
pub const FINAL_CLOSE: &str = "</final>";
pub const ACTION_LABEL: &str = "action";
pub const RECORD_LABEL: &str = "record";

/// Task text pulled out of `<task>…</task>`: trimmed, non-empty and free of
/// task tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTask(String);

impl ParsedTask {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("NoTaskTag: reply contains no <task>...</task> pair")]
    NoTaskTag,
    #[error("EmptyTask: the <task> tags are empty")]
    EmptyTask,
}

/// Content of the first well-formed tag pair: the first closing tag and the
/// nearest opening tag before it.
fn first_pair<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let mut from = 0;
    while let Some(rel) = text[from..].find(close) {
        let close_at = from + rel;
        if let Some(open_at) = text[from..close_at].rfind(open) {
            return Some(&text[from + open_at + open.len()..close_at]);
        }
        from = close_at + close.len();
    }
    None
}

pub fn extract_task(reply: &str) -> Result<ParsedTask, TaskError> {
    let inner = first_pair(reply, TASK_OPEN, TASK_CLOSE).ok_or(TaskError::NoTaskTag)?;
    let text = inner.trim();
    if text.is_empty() {
        return Err(TaskError::EmptyTask);
    }
    Ok(ParsedTask(text.to_string()))
}

/// Outcome of a fence lookup.
enum Fence<'a> {
    Absent,
    Unterminated,
    Body(&'a str),
}

/// Finds the first fenced block whose info string is exactly `label`.
///
/// The opening fence is "```label" followed by a line break (spaces and a
/// carriage return may precede it). The block ends at the next "```".
fn find_fence<'a>(text: &'a str, label: &str) -> Fence<'a> {
    let mut from = 0;
    while let Some(rel) = text[from..].find("```") {
        let open = from + rel;
        let after = &text[open + 3..];
        if let Some(rest) = after.strip_prefix(label) {
            let line_end = rest.find('\n');
            let head = match line_end {
                Some(i) => &rest[..i],
                None => rest,
            };
            if head.trim().is_empty() {
                let Some(nl) = line_end else {
                    return Fence::Unterminated;
                };
                let body_start = open + 3 + label.len() + nl + 1;
                return match text[body_start..].find("```") {
                    Some(end) => Fence::Body(&text[body_start..body_start + end]),
                    None => Fence::Unterminated,
                };
            }
        }
        from = open + 3;
    }
    Fence::Absent
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Program(ActionProgram),
    Final(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplyError {
    #[error("MalformedAction: {0}")]
    MalformedAction(ActionError),
    #[error("NoActionOrFinal: reply contains neither an ```action block nor <final>...</final>")]
    NoActionOrFinal,
}

/// Classifies a reply during the act step. An action block takes
/// precedence over a final answer.
pub fn extract_action(reply: &str) -> Result<Action, ReplyError> {
    match find_fence(reply, ACTION_LABEL) {
        Fence::Body(body) => ActionProgram::parse(body)
            .map(Action::Program)
            .map_err(ReplyError::MalformedAction),
        Fence::Unterminated => Err(ReplyError::MalformedAction(ActionError::Unterminated)),
        Fence::Absent => extract_final(reply)
            .map(|s| Action::Final(s.to_string()))
            .ok_or(ReplyError::NoActionOrFinal),
    }
}

/// Raw body of the first action block, for executors that run source code
/// instead of tool calls.
pub fn extract_action_source(reply: &str) -> Result<Option<&str>, ActionError> {
    match find_fence(reply, ACTION_LABEL) {
        Fence::Body(body) => Ok(Some(body)),
        Fence::Unterminated => Err(ActionError::Unterminated),
        Fence::Absent => Ok(None),
    }
}

pub fn extract_final(reply: &str) -> Option<&str> {
    first_pair(reply, FINAL_OPEN, FINAL_CLOSE).map(str::trim)
}

/// The three model-authored fields of a run record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordFields {
    pub task: String,
    pub action: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("NoRecordBlock: reply contains no ```record block")]
    NoRecordBlock,
    #[error("MissingField: record has no `{0}`")]
    MissingField(&'static str),
    #[error("InvalidRecord: {0}")]
    Invalid(String),
}

pub fn extract_record(reply: &str) -> Result<RecordFields, RecordError> {
    let body = match find_fence(reply, RECORD_LABEL) {
        Fence::Body(b) => b,
        Fence::Unterminated => return Err(RecordError::Invalid("unterminated record block".into())),
        Fence::Absent => return Err(RecordError::NoRecordBlock),
    };
    let value: Value =
        serde_json::from_str(body).map_err(|e| RecordError::Invalid(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(RecordError::Invalid("record must be a JSON object".into()));
    };
    let field = |name: &'static str| -> Result<String, RecordError> {
        match obj.get(name) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(RecordError::Invalid(alloc::format!("`{name}` must be a string"))),
            None => Err(RecordError::MissingField(name)),
        }
    };
    Ok(RecordFields {
        task: field("task")?,
        action: field("action")?,
        outcome: field("outcome")?,
    })
}
