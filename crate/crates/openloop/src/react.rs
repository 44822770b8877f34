//! One episode: act nudge, model call, execute, observe, until a final
//! answer or the step limit, then the end-of-run record.

use openloop_core::loop_detect::{loop_detector, DEFAULT_WINDOW};
use openloop_core::model::{ChatModel, ChatParams};
use openloop_core::parse::{extract_action, extract_action_source, extract_final, extract_record, Action, ReplyError};
use openloop_core::summary::{fallback_record, EpisodeStatus, EpisodeTrace};
use openloop_core::template::{render_prompt, NudgeSet, NudgeStep};
use openloop_core::{RecordKind, Role, RunRecord, StepTag, TaskSpec};

use crate::events::Session;
use crate::tools::{ExecutorMode, Observation, Toolbelt};

pub const DEFAULT_MAX_STEPS: usize = 8;

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub char_budget: usize,
    pub loop_window: usize,
    pub params: ChatParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: DEFAULT_MAX_STEPS,
            char_budget: openloop_core::template::DEFAULT_CHAR_BUDGET,
            loop_window: DEFAULT_WINDOW,
            params: ChatParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeResult {
    pub status: EpisodeStatus,
    pub final_text: Option<String>,
    pub steps_used: usize,
    pub trace: EpisodeTrace,
    /// Why the episode aborted.
    pub error: Option<String>,
}

fn observe(session: &mut Session<'_>, trace: &mut EpisodeTrace, text: String) {
    session.push(Role::Tool, text.as_str(), StepTag::Observe);
    trace.last_observation = Some(text);
}

/// Runs the act/observe loop for `task`.
///
/// Each step costs exactly one model call. Malformed replies become
/// observations and still use up the step. A model failure aborts.
pub fn run_episode(
    session: &mut Session<'_>,
    task: &TaskSpec,
    config: &EpisodeConfig,
    model: &mut dyn ChatModel,
    toolbelt: &Toolbelt,
    nudges: &NudgeSet,
) -> EpisodeResult {
    log::debug!("episode {} starts: {}", session.run_id(), task.text);
    let mut trace = EpisodeTrace::default();
    let mut warned = false;
    for step in 1..=config.max_steps {
        session.push(Role::System, nudges.text(NudgeStep::Act), StepTag::Nudge);
        let reply = render_prompt(session.transcript(), config.char_budget)
            .map_err(|e| e.to_string())
            .and_then(|prompt| model.complete(&prompt, &config.params).map_err(|e| e.to_string()));
        let reply = match reply {
            Ok(r) => r,
            Err(error) => {
                return EpisodeResult {
                    status: EpisodeStatus::Aborted,
                    final_text: None,
                    steps_used: step,
                    trace,
                    error: Some(error),
                }
            }
        };
        session.push(Role::Assistant, reply.content.as_str(), StepTag::Act);

        let observation = match toolbelt.mode() {
            ExecutorMode::Toolcalls => match extract_action(&reply.content) {
                Ok(Action::Final(text)) => return finished(step, text, trace),
                Ok(Action::Program(program)) => toolbelt.execute(&program, &mut trace).render(),
                Err(e) => e.to_string(),
            },
            ExecutorMode::Subprocess => match extract_action_source(&reply.content) {
                Ok(Some(source)) => toolbelt.run_source(source).render(),
                Ok(None) => match extract_final(&reply.content) {
                    Some(text) => return finished(step, text.to_string(), trace),
                    None => ReplyError::NoActionOrFinal.to_string(),
                },
                Err(e) => Observation::error_only(ReplyError::MalformedAction(e).to_string()).render(),
            },
        };
        observe(session, &mut trace, observation);

        if !warned {
            if let Some(warning) = loop_detector(session.transcript(), config.loop_window) {
                session.push(Role::System, warning, StepTag::Nudge);
                warned = true;
            }
        }
    }
    EpisodeResult {
        status: EpisodeStatus::StepLimit,
        final_text: None,
        steps_used: config.max_steps,
        trace,
        error: None,
    }
}

fn finished(step: usize, text: String, trace: EpisodeTrace) -> EpisodeResult {
    EpisodeResult {
        status: EpisodeStatus::FinalAnswer,
        final_text: Some(text),
        steps_used: step,
        trace,
        error: None,
    }
}

/// Asks the model for the run record; any failure falls back to a record
/// built from what the framework observed. Artifacts always come from the
/// framework.
pub fn summarize_run(
    session: &mut Session<'_>,
    task: &TaskSpec,
    result: &EpisodeResult,
    config: &EpisodeConfig,
    model: &mut dyn ChatModel,
    nudges: &NudgeSet,
    ts: &str,
) -> RunRecord {
    let run_id = session.run_id().to_string();
    let fallback = || {
        fallback_record(
            &run_id,
            &task.text,
            result.status,
            result.final_text.as_deref(),
            &result.trace,
            ts,
        )
    };
    session.push(Role::System, nudges.text(NudgeStep::Summary), StepTag::Nudge);
    let reply = match render_prompt(session.transcript(), config.char_budget) {
        Ok(prompt) => model.complete(&prompt, &config.params),
        Err(e) => {
            log::warn!("summary prompt failed: {e}");
            return fallback();
        }
    };
    let reply = match reply {
        Ok(r) => r,
        Err(e) => {
            log::warn!("summary call failed: {e}");
            return fallback();
        }
    };
    session.push(Role::Assistant, reply.content.as_str(), StepTag::Summary);
    match extract_record(&reply.content) {
        Ok(fields) => RunRecord {
            run_id: run_id.clone(),
            kind: RecordKind::Run,
            task: if fields.task.trim().is_empty() {
                task.text.clone()
            } else {
                fields.task
            },
            action_summary: fields.action,
            outcome: fields.outcome,
            artifacts: result.trace.written.clone(),
            ts: ts.to_string(),
        },
        Err(e) => {
            log::info!("model record unusable ({e}), using fallback");
            fallback()
        }
    }
}
