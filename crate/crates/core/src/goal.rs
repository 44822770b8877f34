use alloc::string::String;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrigin {
    UserGiven,
    SelfGenerated,
    UserRefined,
}

/// The task chosen for one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub text: String,
    pub origin: TaskOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_user_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

impl TaskSpec {
    /// Classifies a generated task against the user's prompt: no prompt is
    /// self-generated, an identical (trimmed) task is user-given, anything
    /// else is a refinement.
    pub fn classify(text: String, user_input: Option<&str>) -> Self {
        let (origin, source) = match user_input.map(str::trim).filter(|s| !s.is_empty()) {
            None => (TaskOrigin::SelfGenerated, None),
            Some(input) if input == text.trim() => (TaskOrigin::UserGiven, Some(String::from(input))),
            Some(input) => (TaskOrigin::UserRefined, Some(String::from(input))),
        };
        TaskSpec {
            text,
            origin,
            source_user_prompt: source,
            duplicate_of: None,
        }
    }
}

/// What to do when a generated task repeats an earlier one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicatePolicy {
    Allow,
    #[default]
    Warn,
    RegenerateOnce,
}
