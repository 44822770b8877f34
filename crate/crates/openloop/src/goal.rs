//! Task generation: optional user input in, a [`TaskSpec`] out, with
//! repetition detection against long-term memory.

use openloop_core::dedup::dedup_check;
use openloop_core::model::{ChatModel, ChatParams, ModelError};
use openloop_core::parse::{extract_task, TaskError};
use openloop_core::template::{render_prompt, NudgeSet, NudgeStep, PromptError};
use openloop_core::{DuplicatePolicy, Role, RunRecord, StepTag, TaskSpec};

use crate::events::Session;

/// Attempts per generation: the first try plus one re-nudge.
const ATTEMPTS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum GoalError {
    #[error("TaskGenerationFailed: {0}")]
    TaskGenerationFailed(TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone)]
pub struct GoalContext<'a> {
    pub params: &'a ChatParams,
    pub nudges: &'a NudgeSet,
    pub char_budget: usize,
    pub policy: DuplicatePolicy,
    pub threshold: f64,
}

/// Asks the model for a task: nudge, call, parse; one re-nudge on a
/// missing or empty tag.
fn request_task(
    session: &mut Session<'_>,
    model: &mut dyn ChatModel,
    ctx: &GoalContext<'_>,
) -> Result<String, GoalError> {
    let mut last_err = TaskError::NoTaskTag;
    for _ in 0..ATTEMPTS {
        session.push(Role::System, ctx.nudges.text(NudgeStep::TaskGeneration), StepTag::Nudge);
        let prompt = render_prompt(session.transcript(), ctx.char_budget)?;
        let reply = model.complete(&prompt, ctx.params)?;
        session.push(Role::Assistant, reply.content.as_str(), StepTag::TaskGeneration);
        match extract_task(&reply.content) {
            Ok(task) => return Ok(task.into_string()),
            Err(e) => last_err = e,
        }
    }
    Err(GoalError::TaskGenerationFailed(last_err))
}

/// Appends the user's input (if any), then has the model produce the task.
///
/// The system prompt, which carries the memory digest, must already be in
/// the transcript.
pub fn generate_task(
    session: &mut Session<'_>,
    user_input: Option<&str>,
    model: &mut dyn ChatModel,
    ctx: &GoalContext<'_>,
) -> Result<TaskSpec, GoalError> {
    let input = user_input.map(str::trim).filter(|s| !s.is_empty());
    if let Some(text) = input {
        session.push(Role::User, text, StepTag::UserInput);
    }
    let text = request_task(session, model, ctx)?;
    Ok(TaskSpec::classify(text, input))
}

/// Applies `ctx.policy` to a freshly generated task that duplicates the
/// run `duplicate`.
///
/// `allow` keeps the task untouched, `warn` marks it, `regenerate_once`
/// tells the model what it already did and asks once more; a second
/// duplicate (or a failed retry) proceeds marked.
pub fn apply_duplicate_policy(
    session: &mut Session<'_>,
    spec: TaskSpec,
    duplicate: Option<&RunRecord>,
    records: &[RunRecord],
    model: &mut dyn ChatModel,
    ctx: &GoalContext<'_>,
) -> Result<TaskSpec, GoalError> {
    let Some(dup) = duplicate else {
        return Ok(spec);
    };
    let marked = |mut s: TaskSpec, id: &str| {
        s.duplicate_of = Some(id.to_string());
        s
    };
    match ctx.policy {
        DuplicatePolicy::Allow => Ok(spec),
        DuplicatePolicy::Warn => Ok(marked(spec, &dup.run_id)),
        DuplicatePolicy::RegenerateOnce => {
            session.push(
                Role::System,
                format!(
                    "You already did: {} (run {}). Choose a different task.",
                    dup.task, dup.run_id
                ),
                StepTag::Nudge,
            );
            let text = match request_task(session, model, ctx) {
                Ok(text) => text,
                Err(GoalError::TaskGenerationFailed(_)) => return Ok(marked(spec, &dup.run_id)),
                Err(e) => return Err(e),
            };
            let retry = TaskSpec::classify(text, spec.source_user_prompt.as_deref());
            match dedup_check(&retry.text, records, ctx.threshold) {
                Some(again) => Ok(marked(retry, &again.run_id)),
                None => Ok(retry),
            }
        }
    }
}

/// Task generation plus the duplicate check and policy.
pub fn choose_task(
    session: &mut Session<'_>,
    user_input: Option<&str>,
    records: &[RunRecord],
    model: &mut dyn ChatModel,
    ctx: &GoalContext<'_>,
) -> Result<TaskSpec, GoalError> {
    let spec = generate_task(session, user_input, model, ctx)?;
    let duplicate = dedup_check(&spec.text, records, ctx.threshold);
    apply_duplicate_policy(session, spec, duplicate, records, model, ctx)
}
