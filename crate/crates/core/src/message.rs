use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    /// Executor observations only.
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// Which loop step produced a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepTag {
    UserInput,
    TaskGeneration,
    Plan,
    Act,
    Observe,
    Summary,
    Nudge,
    Feedback,
}

impl StepTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StepTag::UserInput => "user_input",
            StepTag::TaskGeneration => "task_generation",
            StepTag::Plan => "plan",
            StepTag::Act => "act",
            StepTag::Observe => "observe",
            StepTag::Summary => "summary",
            StepTag::Nudge => "nudge",
            StepTag::Feedback => "feedback",
        }
    }
}

impl fmt::Display for StepTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    pub step_tag: StepTag,
    pub seq: u64,
}

/// Short-term memory: every message of the current run, in order.
///
/// Sequence numbers start at 1 and increase by one per appended message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    run_id: String,
    created_at: String,
    messages: Vec<Message>,
}

impl Transcript {
    pub fn new(run_id: impl Into<String>, created_at: impl Into<String>) -> Self {
        Transcript {
            run_id: run_id.into(),
            created_at: created_at.into(),
            messages: Vec::new(),
        }
    }

    /// Rebuilds a transcript from logged messages, rejecting any break in
    /// sequence monotonicity.
    pub fn from_messages(
        run_id: impl Into<String>,
        created_at: impl Into<String>,
        messages: Vec<Message>,
    ) -> Option<Self> {
        if messages.windows(2).any(|w| w[0].seq >= w[1].seq) {
            return None;
        }
        Some(Transcript {
            run_id: run_id.into(),
            created_at: created_at.into(),
            messages,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last(&self) -> Option<&Message> {
        self.messages.last()
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>, step_tag: StepTag) -> &Message {
        let seq = self.messages.last().map_or(1, |m| m.seq + 1);
        self.messages.push(Message {
            role,
            content: content.into(),
            step_tag,
            seq,
        });
        self.messages.last().expect("just pushed")
    }

    /// Ends the run: returns an empty transcript under a new run id.
    ///
    /// Persisting the old buffer is the caller's job.
    pub fn reset(self, run_id: impl Into<String>, created_at: impl Into<String>) -> Transcript {
        Transcript::new(run_id, created_at)
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages
    }
}
