use alloc::string::String;
use alloc::vec::Vec;

use crate::action::ActionProgram;
use crate::message::{Role, StepTag, Transcript};
use crate::parse::{extract_action, Action};

pub const DEFAULT_WINDOW: usize = 3;

pub const REPEAT_WARNING: &str = "You are repeating the same action without making progress. Try something different, or give the final answer inside <final>...</final> tags.";

/// Warns when the last `window` action programs in the transcript are all
/// identical. Replies without a valid program do not count.
pub fn loop_detector(transcript: &Transcript, window: usize) -> Option<String> {
    if window == 0 {
        return None;
    }
    let recent: Vec<ActionProgram> = transcript
        .messages()
        .iter()
        .rev()
        .filter(|m| m.role == Role::Assistant && m.step_tag == StepTag::Act)
        .filter_map(|m| match extract_action(&m.content) {
            Ok(Action::Program(p)) => Some(p),
            _ => None,
        })
        .take(window)
        .collect();
    if recent.len() < window {
        return None;
    }
    recent
        .windows(2)
        .all(|w| w[0] == w[1])
        .then(|| String::from(REPEAT_WARNING))
}
