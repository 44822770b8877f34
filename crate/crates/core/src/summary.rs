//! Deterministic end-of-run record used when the model's own summary is
//! missing or unparseable.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::action::ToolKind;
use crate::record::{RecordKind, RunRecord};
use crate::text::truncate_marked;

pub const ACTION_SUMMARY_MAX: usize = 200;
pub const OUTCOME_MAX: usize = 280;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    FinalAnswer,
    StepLimit,
    Aborted,
}

impl EpisodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::FinalAnswer => "final_answer",
            EpisodeStatus::StepLimit => "step_limit",
            EpisodeStatus::Aborted => "aborted",
        }
    }
}

impl fmt::Display for EpisodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the framework itself observed during an episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpisodeTrace {
    /// Tool calls that ran, in order.
    pub tools: Vec<ToolKind>,
    /// Paths written, deduplicated, in order of first write.
    pub written: Vec<String>,
    pub last_observation: Option<String>,
}

impl EpisodeTrace {
    pub fn note_write(&mut self, path: &str) {
        if !self.written.iter().any(|p| p == path) {
            self.written.push(String::from(path));
        }
    }
}

pub fn fallback_record(
    run_id: &str,
    task: &str,
    status: EpisodeStatus,
    final_text: Option<&str>,
    trace: &EpisodeTrace,
    ts: &str,
) -> RunRecord {
    let tools: Vec<&str> = trace.tools.iter().map(|t| t.name()).collect();
    let outcome = match (final_text, &trace.last_observation) {
        (Some(text), _) => truncate_marked(text, OUTCOME_MAX),
        (None, Some(obs)) => {
            let mut s = String::from(status.as_str());
            s.push_str(": ");
            s.push_str(&truncate_marked(obs, OUTCOME_MAX));
            s
        }
        (None, None) => String::from(status.as_str()),
    };
    RunRecord {
        run_id: String::from(run_id),
        kind: RecordKind::Run,
        task: String::from(task),
        action_summary: truncate_marked(&tools.join(", "), ACTION_SUMMARY_MAX),
        outcome,
        artifacts: trace.written.clone(),
        ts: String::from(ts),
    }
}
