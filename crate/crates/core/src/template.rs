//! Prompt construction: system prompt templates, nudges and the windowed
//! view of a transcript that is actually sent to the model.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::message::{Message, Role, StepTag, Transcript};
use crate::text::char_len;

/// Curiosity instruction bound to `{{curiosity_clause}}` by default.
pub const CURIOSITY_CLAUSE: &str = "Be curious: explore the environment, read, summarize, and understand its files, and write down your progress and tasks.";

pub const DEFAULT_SYSTEM_TEMPLATE: &str = include_str!("../prompts/system.txt");
pub const DEFAULT_NUDGES: &str = include_str!("../prompts/nudges.txt");

pub const DEFAULT_CHAR_BUDGET: usize = 24_000;

pub mod placeholder {
    pub const TOOLS: &str = "tools";
    pub const MEMORY_DIGEST: &str = "memory_digest";
    pub const CURIOSITY_CLAUSE: &str = "curiosity_clause";
    pub const WORKSPACE_LISTING: &str = "workspace_listing";
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("no binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        PromptTemplate {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn default_system() -> Self {
        PromptTemplate::new("system", DEFAULT_SYSTEM_TEMPLATE)
    }

    fn segments(&self) -> Result<Vec<Segment<'_>>, TemplateError> {
        let body = self.body.as_str();
        let mut out = Vec::new();
        let mut rest = 0;
        while let Some(open) = body[rest..].find("{{").map(|i| i + rest) {
            let close = body[open + 2..]
                .find("}}")
                .map(|i| i + open + 2)
                .ok_or(TemplateError::Unterminated(open))?;
            out.push(Segment::Text(&body[rest..open]));
            out.push(Segment::Slot(body[open + 2..close].trim()));
            rest = close + 2;
        }
        out.push(Segment::Text(&body[rest..]));
        Ok(out)
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<&str>, TemplateError> {
        let mut names: Vec<&str> = Vec::new();
        for seg in self.segments()? {
            if let Segment::Slot(name) = seg {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        Ok(names)
    }
}

/// Substitutes every `{{name}}` in the template body.
///
/// Bound values are inserted verbatim and never rescanned. Extra bindings
/// are ignored.
pub fn render_system_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let segments = template.segments()?;
    let mut out = String::with_capacity(template.body.len());
    for seg in segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                let value = bindings
                    .get(name)
                    .ok_or_else(|| TemplateError::MissingBinding(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NudgeError {
    #[error("line {0}: expected `<step>: <text>`")]
    BadLine(usize),
    #[error("line {line}: `{step}` does not take a nudge (task_generation, act, summary)")]
    UnknownStep { line: usize, step: String },
    #[error("no nudge defined for `{0}`")]
    Missing(&'static str),
}

/// Fixed nudge texts for the three steps that take one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NudgeSet {
    pub task_generation: String,
    pub act: String,
    pub summary: String,
}

impl Default for NudgeSet {
    fn default() -> Self {
        NudgeSet::parse(DEFAULT_NUDGES).expect("shipped nudges parse")
    }
}

impl NudgeSet {
    /// Parses `<step>: <text>` lines; blank lines and `#` comments are skipped.
    pub fn parse(source: &str) -> Result<Self, NudgeError> {
        let (mut task_generation, mut act, mut summary) = (None, None, None);
        for (i, raw) in source.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (step, text) = line.split_once(':').ok_or(NudgeError::BadLine(i + 1))?;
            let text = text.trim().to_string();
            match step.trim() {
                "task_generation" => task_generation = Some(text),
                "act" => act = Some(text),
                "summary" => summary = Some(text),
                other => {
                    return Err(NudgeError::UnknownStep {
                        line: i + 1,
                        step: other.to_string(),
                    })
                }
            }
        }
        Ok(NudgeSet {
            task_generation: task_generation.ok_or(NudgeError::Missing("task_generation"))?,
            act: act.ok_or(NudgeError::Missing("act"))?,
            summary: summary.ok_or(NudgeError::Missing("summary"))?,
        })
    }

    pub fn text(&self, step: NudgeStep) -> &str {
        match step {
            NudgeStep::TaskGeneration => &self.task_generation,
            NudgeStep::Act => &self.act,
            NudgeStep::Summary => &self.summary,
        }
    }
}

/// Steps that are preceded by a nudge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NudgeStep {
    TaskGeneration,
    Act,
    Summary,
}

impl NudgeStep {
    pub fn tag(self) -> StepTag {
        match self {
            NudgeStep::TaskGeneration => StepTag::TaskGeneration,
            NudgeStep::Act => StepTag::Act,
            NudgeStep::Summary => StepTag::Summary,
        }
    }
}

/// Appends the system-role nudge for `step` and returns it.
///
/// The message carries the `nudge` step tag; the step it precedes is
/// implied by its text.
pub fn insert_nudge(transcript: &mut Transcript, nudges: &NudgeSet, step: NudgeStep) -> Message {
    transcript
        .push(Role::System, nudges.text(step), StepTag::Nudge)
        .clone()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("transcript has no leading system message")]
    NoSystemMessage,
    #[error("system messages need {needed} chars, budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
}

/// Builds the message list for one model call.
///
/// The leading run of system messages (the system prompt) is always kept.
/// The remaining messages are kept as the longest suffix that fits in
/// `char_budget`, so the oldest are dropped first. Messages are never split.
/// Sizes are counted in chars of `content`.
pub fn render_prompt(transcript: &Transcript, char_budget: usize) -> Result<Vec<Message>, PromptError> {
    let messages = transcript.messages();
    let pinned = messages
        .iter()
        .take_while(|m| m.role == Role::System)
        .count();
    if pinned == 0 {
        return Err(PromptError::NoSystemMessage);
    }
    let head: usize = messages[..pinned].iter().map(|m| char_len(&m.content)).sum();
    if head > char_budget {
        return Err(PromptError::BudgetTooSmall {
            needed: head,
            budget: char_budget,
        });
    }
    let mut used = head;
    let mut first_kept = messages.len();
    for (idx, m) in messages.iter().enumerate().skip(pinned).rev() {
        let len = char_len(&m.content);
        if used + len > char_budget {
            break;
        }
        used += len;
        first_kept = idx;
    }
    let mut out = Vec::with_capacity(pinned + messages.len() - first_kept);
    out.extend_from_slice(&messages[..pinned]);
    out.extend_from_slice(&messages[first_kept..]);
    Ok(out)
}
