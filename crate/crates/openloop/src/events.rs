//! Loop events: a process-wide, seq-numbered log that observers can replay
//! from any point and then follow live.

use std::collections::VecDeque;
use std::sync::Mutex;

use openloop_core::{Message, Role, StepTag, Transcript};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Events kept for replay. Older ones are dropped first.
const HISTORY_LIMIT: usize = 50_000;
const CHANNEL_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStarted,
    TaskGenerated,
    MessageAppended,
    Observation,
    RunCompleted,
    AwaitingInput,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RunStarted => "run_started",
            EventKind::TaskGenerated => "task_generated",
            EventKind::MessageAppended => "message_appended",
            EventKind::Observation => "observation",
            EventKind::RunCompleted => "run_completed",
            EventKind::AwaitingInput => "awaiting_input",
            EventKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub run_id: String,
    pub payload: String,
}

struct Inner {
    next_seq: u64,
    history: VecDeque<LoopEvent>,
    live: Option<broadcast::Sender<LoopEvent>>,
}

/// Single-producer event log with replay.
pub struct EventBus {
    inner: Mutex<Inner>,
}

impl Default for EventBus {
    fn default() -> Self {
        let (tx, _) = broadcast::channel(CHANNEL_CAPACITY);
        EventBus {
            inner: Mutex::new(Inner {
                next_seq: 1,
                history: VecDeque::new(),
                live: Some(tx),
            }),
        }
    }
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus").finish_non_exhaustive()
    }
}

impl EventBus {
    pub fn emit(&self, kind: EventKind, run_id: &str, payload: impl Into<String>) -> u64 {
        let mut inner = self.inner.lock().expect("event bus poisoned");
        let event = LoopEvent {
            seq: inner.next_seq,
            kind,
            run_id: run_id.to_string(),
            payload: payload.into(),
        };
        inner.next_seq += 1;
        if inner.history.len() == HISTORY_LIMIT {
            inner.history.pop_front();
        }
        inner.history.push_back(event.clone());
        if let Some(tx) = &inner.live {
            // No receivers is fine.
            let _ = tx.send(event.clone());
        }
        event.seq
    }

    /// Events with `seq > after`.
    pub fn since(&self, after: u64) -> Vec<LoopEvent> {
        let inner = self.inner.lock().expect("event bus poisoned");
        inner.history.iter().filter(|e| e.seq > after).cloned().collect()
    }

    /// Replay of everything after `after` plus a live receiver that starts
    /// where the replay ends. `None` for the receiver once closed.
    pub fn subscribe(&self, after: u64) -> (Vec<LoopEvent>, Option<broadcast::Receiver<LoopEvent>>) {
        let inner = self.inner.lock().expect("event bus poisoned");
        let backlog = inner.history.iter().filter(|e| e.seq > after).cloned().collect();
        (backlog, inner.live.as_ref().map(broadcast::Sender::subscribe))
    }

    /// Ends every live subscription; the history stays readable.
    pub fn close(&self) {
        self.inner.lock().expect("event bus poisoned").live = None;
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("event bus poisoned").live.is_none()
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("event bus poisoned").next_seq - 1
    }
}

/// A run's transcript whose every append is mirrored to the event bus, so
/// the event stream alone reconstructs the transcript.
pub struct Session<'a> {
    transcript: Transcript,
    events: &'a EventBus,
}

impl<'a> Session<'a> {
    pub fn new(transcript: Transcript, events: &'a EventBus) -> Self {
        Session { transcript, events }
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>, tag: StepTag) -> Message {
        let msg = self.transcript.push(role, content, tag).clone();
        let kind = if role == Role::Tool {
            EventKind::Observation
        } else {
            EventKind::MessageAppended
        };
        let payload = serde_json::to_string(&msg).expect("message serializes");
        self.events.emit(kind, self.transcript.run_id(), payload);
        msg
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn run_id(&self) -> &str {
        self.transcript.run_id()
    }

    pub fn events(&self) -> &'a EventBus {
        self.events
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

/// Rebuilds a run's messages from its message and observation events.
pub fn replay_messages(events: &[LoopEvent], run_id: &str) -> Vec<Message> {
    events
        .iter()
        .filter(|e| e.run_id == run_id)
        .filter(|e| matches!(e.kind, EventKind::MessageAppended | EventKind::Observation))
        .filter_map(|e| serde_json::from_str(&e.payload).ok())
        .collect()
}
