//! Long-term memory records and the digest that feeds them back into the
//! system prompt.
//!
//! On disk a record is one JSON object per line with the keys `run_id`,
//! `kind`, `task`, `action`, `outcome`, `artifacts` and `ts`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::jail;
use crate::text::{char_len, take_chars, truncate_marked};

pub const DEFAULT_DIGEST_ENTRIES: usize = 20;
pub const DEFAULT_DIGEST_BUDGET: usize = 4000;
pub const EMPTY_DIGEST: &str = "(no prior runs)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Run,
    Feedback,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Run => "run",
            RecordKind::Feedback => "feedback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub kind: RecordKind,
    pub task: String,
    #[serde(rename = "action")]
    pub action_summary: String,
    pub outcome: String,
    pub artifacts: Vec<String>,
    pub ts: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("run record has an empty task")]
    EmptyTask,
    #[error("artifact `{0}` is not a workspace-relative path")]
    InvalidArtifact(String),
    #[error("malformed record line: {0}")]
    Malformed(String),
}

impl RunRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.kind == RecordKind::Run && self.task.trim().is_empty() {
            return Err(RecordError::EmptyTask);
        }
        for a in &self.artifacts {
            if !is_relative_artifact(a) {
                return Err(RecordError::InvalidArtifact(a.clone()));
            }
        }
        Ok(())
    }

    /// One line of the memory file, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, RecordError> {
        let rec: RunRecord =
            serde_json::from_str(line).map_err(|e| RecordError::Malformed(format!("{e}")))?;
        rec.validate()?;
        Ok(rec)
    }
}

fn is_relative_artifact(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.starts_with('\\')
        && !jail::has_drive_prefix(path)
        && !path.split(['/', '\\']).any(|seg| seg == "..")
}

const LINE_PREFIX_FIXED: usize = "- [] task= outcome=".len();

/// Renders the most recent records, newest last, one line each:
/// `- [kind] task=… outcome=…`.
///
/// The result never exceeds `char_budget` chars. Each line gets an equal
/// share of the budget; within a line the task may take up to three
/// quarters of the room, and both fields are cut with a trailing `…`.
pub fn digest(records: &[RunRecord], max_entries: usize, char_budget: usize) -> String {
    let take = max_entries.min(records.len());
    if take == 0 {
        return take_chars(EMPTY_DIGEST, char_budget).into();
    }
    let recent = &records[records.len() - take..];
    // Lines are joined by '\n', so n lines cost n-1 separators.
    let per_line = (char_budget + 1) / take;
    let mut lines = Vec::with_capacity(take);
    for rec in recent {
        let kind = rec.kind.as_str();
        let overhead = LINE_PREFIX_FIXED + kind.len() + 1;
        let room = per_line.saturating_sub(overhead);
        let task_len = char_len(&rec.task);
        let outcome_len = char_len(&rec.outcome);
        let task_room = task_len.min(room - outcome_len.min(room / 4));
        let outcome_room = room - task_room;
        lines.push(format!(
            "- [{kind}] task={} outcome={}",
            truncate_marked(&rec.task, task_room),
            truncate_marked(&rec.outcome, outcome_room),
        ));
    }
    let joined = lines.join("\n");
    if char_len(&joined) <= char_budget {
        joined
    } else {
        // Only reachable when the budget cannot hold even the fixed parts.
        take_chars(&joined, char_budget).into()
    }
}
