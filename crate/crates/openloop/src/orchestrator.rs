//! The outer loop: one run after another, each with a fresh transcript,
//! sharing only the memory file, the workspace and the feedback mailbox.

use std::collections::VecDeque;
use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};

use chrono::{SecondsFormat, Utc};
use openloop_core::model::ChatModel;
use openloop_core::record::digest;
use openloop_core::summary::EpisodeStatus;
use openloop_core::{Message, RecordKind, Role, RunRecord, ScriptedModel, StepTag, TaskOrigin, Transcript};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{AgentConfig, ConfigError, PromptSet, Provider};
use crate::events::{replay_messages, EventBus, EventKind, Session};
use crate::gateway::HttpGateway;
use crate::goal::{choose_task, GoalContext};
use crate::react::{run_episode, summarize_run, EpisodeConfig};
use crate::store::{read_run_log, write_run_log, MemoryStore};
use crate::tools::{render_listing, ExecutorMode, Jail, Toolbelt};

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workspace {path}: {source}")]
    Workspace {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("memory file {path}: {source}")]
    Memory {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("model script {path}: {detail}")]
    Script { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeedbackError {
    #[error("feedback text is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub text: String,
    pub submitted_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumed_in_run: Option<String>,
}

/// FIFO of user feedback, drained once per run at its start.
#[derive(Debug, Clone, Default)]
pub struct Mailbox {
    queue: Arc<Mutex<VecDeque<FeedbackItem>>>,
}

impl Mailbox {
    pub fn submit(&self, text: &str) -> Result<FeedbackItem, FeedbackError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(FeedbackError::Empty);
        }
        let item = FeedbackItem {
            text: text.to_string(),
            submitted_at: now(),
            consumed_in_run: None,
        };
        self.queue.lock().expect("mailbox poisoned").push_back(item.clone());
        Ok(item)
    }

    pub fn pending(&self) -> Vec<FeedbackItem> {
        self.queue.lock().expect("mailbox poisoned").iter().cloned().collect()
    }

    /// Takes everything queued, marking it consumed by `run_id`.
    pub fn drain(&self, run_id: &str) -> Vec<FeedbackItem> {
        let mut q = self.queue.lock().expect("mailbox poisoned");
        q.drain(..)
            .map(|mut item| {
                item.consumed_in_run = Some(run_id.to_string());
                item
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCommand {
    Pause,
    Resume,
    Stop,
    /// While paused: allow exactly one more run.
    Step,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ControlState {
    pub paused: bool,
    pub stopped: bool,
    #[serde(skip)]
    step_once: bool,
}

/// Pause/resume/stop flags, honoured at run boundaries only.
#[derive(Debug, Clone, Default)]
pub struct Control {
    inner: Arc<(Mutex<ControlState>, Condvar)>,
}

impl Control {
    pub fn apply(&self, cmd: ControlCommand) {
        let (lock, cv) = &*self.inner;
        let mut s = lock.lock().expect("control poisoned");
        match cmd {
            ControlCommand::Pause => s.paused = true,
            ControlCommand::Resume => {
                s.paused = false;
                s.step_once = false;
            }
            ControlCommand::Stop => s.stopped = true,
            ControlCommand::Step => {
                if s.paused {
                    s.step_once = true;
                }
            }
        }
        cv.notify_all();
    }

    pub fn state(&self) -> ControlState {
        *self.inner.0.lock().expect("control poisoned")
    }

    /// Blocks while paused. Returns `false` once a stop was requested.
    /// `on_wait` runs once if the call has to wait.
    pub fn wait_boundary(&self, mut on_wait: impl FnMut()) -> bool {
        let (lock, cv) = &*self.inner;
        let mut s = lock.lock().expect("control poisoned");
        let mut announced = false;
        loop {
            if s.stopped {
                return false;
            }
            if !s.paused {
                return true;
            }
            if s.step_once {
                s.step_once = false;
                return true;
            }
            if !announced {
                on_wait();
                announced = true;
            }
            s = cv.wait(s).expect("control poisoned");
        }
    }
}

/// What the run list shows about one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<TaskOrigin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<EpisodeStatus>,
    pub steps_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub feedback_consumed: usize,
}

impl RunSummary {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitSummary {
    pub runs_attempted: u64,
    pub runs_completed: u64,
    pub errors: u64,
}

/// Read side of a running loop, cheap to clone into other threads.
#[derive(Debug, Clone)]
pub struct LoopHandle {
    pub events: Arc<EventBus>,
    pub mailbox: Mailbox,
    pub control: Control,
    runs: Arc<RwLock<Vec<RunSummary>>>,
    memory: Arc<RwLock<Vec<RunRecord>>>,
    current: Arc<Mutex<Option<String>>>,
    runs_dir: PathBuf,
}

impl LoopHandle {
    /// Newest first.
    pub fn runs(&self) -> Vec<RunSummary> {
        let runs = self.runs.read().expect("run list poisoned");
        runs.iter().rev().cloned().collect()
    }

    pub fn run(&self, run_id: &str) -> Option<RunSummary> {
        let runs = self.runs.read().expect("run list poisoned");
        runs.iter().find(|r| r.run_id == run_id).cloned()
    }

    pub fn current_run(&self) -> Option<String> {
        self.current.lock().expect("current run poisoned").clone()
    }

    /// The transcript of a finished run from its log, or of the live run
    /// from the event history.
    pub fn messages(&self, run_id: &str) -> Option<Vec<Message>> {
        let live = self.current_run().as_deref() == Some(run_id);
        if !live {
            if let Ok(messages) = read_run_log(&self.runs_dir, run_id) {
                return Some(messages);
            }
        }
        let messages = replay_messages(&self.events.since(0), run_id);
        (live || !messages.is_empty()).then_some(messages)
    }

    pub fn memory(&self) -> Vec<RunRecord> {
        self.memory.read().expect("memory cache poisoned").clone()
    }
}

/// Where user prompts come from.
pub enum InputSource {
    /// One run per prompt, then exit. An empty list means self-generated
    /// tasks until `max_runs` or a stop.
    Batch(Vec<String>),
    /// One line per run; an empty line lets the agent choose; EOF exits.
    Interactive(Box<dyn BufRead + Send>),
    /// No prompts: self-generated tasks, steered through the mailbox.
    Service,
}

struct RunIds {
    next: u64,
    rng: StdRng,
}

impl RunIds {
    fn next(&mut self) -> String {
        let id = format!("r{:04}-{:04x}", self.next, self.rng.random::<u16>());
        self.next += 1;
        id
    }
}

fn run_number(id: &str) -> Option<u64> {
    id.strip_prefix('r')?.split('-').next()?.parse().ok()
}

/// Continues numbering after every run found in memory or the runs dir.
fn first_run_number(records: &[RunRecord], runs_dir: &Path) -> u64 {
    let logged = fs::read_dir(runs_dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".jsonl")).and_then(run_number));
    records
        .iter()
        .filter_map(|r| run_number(&r.run_id))
        .chain(logged)
        .max()
        .map_or(1, |n| n + 1)
}

/// Builds the configured model client.
pub fn build_model(config: &AgentConfig) -> Result<Box<dyn ChatModel + Send>, AgentError> {
    match config.model.provider {
        Provider::Openai => Ok(Box::new(HttpGateway::from_env(
            &config.model.endpoint,
            config.model.api_key.clone(),
        ))),
        Provider::Scripted => {
            let path = config.model.script.clone().unwrap_or_default();
            let text = fs::read_to_string(&path).map_err(|e| AgentError::Script {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            let model = ScriptedModel::from_json(&text).map_err(|e| AgentError::Script {
                path,
                detail: e.to_string(),
            })?;
            Ok(Box::new(model))
        }
    }
}

/// The system prompt the next run would start with, built without
/// touching the model or creating any file.
pub fn preview_system_prompt(config: &AgentConfig) -> Result<String, AgentError> {
    let prompts = config.prompts()?;
    let memory = config.memory_path();
    let records = crate::store::load_records(&memory)
        .map_err(|source| AgentError::Memory { path: memory, source })?
        .records;
    let listing = match Jail::new(&config.workspace_root) {
        Ok(jail) => Toolbelt::new(jail, config.run_loop.observation_cap).workspace_listing(),
        Err(_) => render_listing(&[]),
    };
    let d = digest(&records, config.memory.digest_max_entries, config.memory.digest_char_budget);
    Ok(prompts.render_system(&d, &listing).map_err(ConfigError::from)?)
}

pub struct Agent {
    config: AgentConfig,
    prompts: PromptSet,
    episode: EpisodeConfig,
    model: Box<dyn ChatModel + Send>,
    store: MemoryStore,
    toolbelt: Toolbelt,
    handle: LoopHandle,
    ids: RunIds,
}

impl Agent {
    /// Creates the workspace if needed and loads memory. `model` is used
    /// as is; see [`build_model`] for the configured one.
    pub fn new(config: AgentConfig, model: Box<dyn ChatModel + Send>) -> Result<Self, AgentError> {
        config.validate()?;
        let prompts = config.prompts()?;
        let ws = &config.workspace_root;
        let ws_err = |source| AgentError::Workspace {
            path: ws.clone(),
            source,
        };
        fs::create_dir_all(ws).map_err(ws_err)?;
        let jail = Jail::new(ws).map_err(ws_err)?;
        let mut toolbelt = Toolbelt::new(jail, config.run_loop.observation_cap);
        if config.executor.mode == ExecutorMode::Subprocess {
            toolbelt = toolbelt.with_subprocess(config.subprocess());
        }
        let memory_path = config.memory_path();
        let store = MemoryStore::open(&memory_path).map_err(|source| AgentError::Memory {
            path: memory_path,
            source,
        })?;
        if store.skipped() > 0 {
            log::warn!("{} unreadable memory lines skipped", store.skipped());
        }
        let runs_dir = config.runs_dir();
        let rng = match config.run_loop.seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_os_rng(),
        };
        let ids = RunIds {
            next: first_run_number(&store.snapshot(), &runs_dir),
            rng,
        };
        let handle = LoopHandle {
            events: Arc::new(EventBus::default()),
            mailbox: Mailbox::default(),
            control: Control::default(),
            runs: Arc::default(),
            memory: store.shared(),
            current: Arc::default(),
            runs_dir,
        };
        let episode = EpisodeConfig {
            max_steps: config.run_loop.max_steps,
            char_budget: config.run_loop.char_budget,
            loop_window: config.run_loop.loop_window,
            params: config.model.params(),
        };
        Ok(Agent {
            config,
            prompts,
            episode,
            model,
            store,
            toolbelt,
            handle,
            ids,
        })
    }

    pub fn from_config(config: AgentConfig) -> Result<Self, AgentError> {
        let model = build_model(&config)?;
        Self::new(config, model)
    }

    pub fn handle(&self) -> LoopHandle {
        self.handle.clone()
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn system_prompt(&self, records: &[RunRecord]) -> String {
        let mem = &self.config.memory;
        let d = digest(records, mem.digest_max_entries, mem.digest_char_budget);
        self.prompts
            .render_system(&d, &self.toolbelt.workspace_listing())
            .expect("template validated at construction")
    }

    /// One complete run. Never panics on model, tool or storage failures;
    /// they end up in the returned summary.
    pub fn run_once(&mut self, user_input: Option<&str>) -> RunSummary {
        let events = Arc::clone(&self.handle.events);
        let run_id = self.ids.next();
        let started_at = now();
        let user_input = user_input.map(str::trim).filter(|s| !s.is_empty());
        *self.handle.current.lock().expect("current run poisoned") = Some(run_id.clone());
        events.emit(
            EventKind::RunStarted,
            &run_id,
            json!({ "run_id": run_id, "started_at": started_at, "user_input": user_input }).to_string(),
        );
        let mut summary = RunSummary {
            run_id: run_id.clone(),
            started_at: started_at.clone(),
            finished_at: None,
            user_input: user_input.map(str::to_string),
            task: None,
            origin: None,
            duplicate_of: None,
            status: None,
            steps_used: 0,
            outcome: None,
            error: None,
            feedback_consumed: 0,
        };

        let records = self.store.snapshot();
        let feedback = self.handle.mailbox.drain(&run_id);
        summary.feedback_consumed = feedback.len();
        if self.config.memory.store_feedback {
            for item in &feedback {
                let record = RunRecord {
                    run_id: run_id.clone(),
                    kind: RecordKind::Feedback,
                    task: item.text.clone(),
                    action_summary: String::new(),
                    outcome: String::new(),
                    artifacts: Vec::new(),
                    ts: item.submitted_at.clone(),
                };
                if let Err(e) = self.store.append(&record) {
                    log::error!("{e}");
                    events.emit(EventKind::Error, &run_id, json!({ "message": e.to_string() }).to_string());
                }
            }
        }

        let mut session = Session::new(Transcript::new(run_id.as_str(), started_at.as_str()), &events);
        session.push(Role::System, self.system_prompt(&records), StepTag::Plan);
        for item in &feedback {
            session.push(Role::User, format!("User feedback: {}", item.text), StepTag::Feedback);
        }

        let ctx = GoalContext {
            params: &self.episode.params,
            nudges: &self.prompts.nudges,
            char_budget: self.episode.char_budget,
            policy: self.config.run_loop.duplicate_policy,
            threshold: self.config.run_loop.dedup_threshold,
        };
        let model: &mut dyn ChatModel = self.model.as_mut();
        match choose_task(&mut session, user_input, &records, model, &ctx) {
            Err(e) => summary.error = Some(e.to_string()),
            Ok(task) => {
                events.emit(
                    EventKind::TaskGenerated,
                    &run_id,
                    serde_json::to_string(&task).expect("task serializes"),
                );
                summary.task = Some(task.text.clone());
                summary.origin = Some(task.origin);
                summary.duplicate_of = task.duplicate_of.clone();
                let result = run_episode(&mut session, &task, &self.episode, model, &self.toolbelt, &self.prompts.nudges);
                summary.status = Some(result.status);
                summary.steps_used = result.steps_used;
                if let Some(error) = &result.error {
                    // An aborted run leaves no record behind.
                    summary.error = Some(error.clone());
                } else {
                    let record = summarize_run(&mut session, &task, &result, &self.episode, model, &self.prompts.nudges, &now());
                    summary.outcome = Some(record.outcome.clone());
                    if let Err(e) = self.store.append(&record) {
                        summary.error = Some(e.to_string());
                    }
                }
            }
        }

        let transcript = session.into_transcript();
        if let Err(e) = write_run_log(&self.handle.runs_dir, &run_id, transcript.messages()) {
            log::error!("cannot write run log for {run_id}: {e}");
            summary.error.get_or_insert_with(|| format!("StorageError: run log: {e}"));
        }
        if let Some(error) = &summary.error {
            events.emit(EventKind::Error, &run_id, json!({ "message": error }).to_string());
        }
        summary.finished_at = Some(now());
        self.handle.runs.write().expect("run list poisoned").push(summary.clone());
        *self.handle.current.lock().expect("current run poisoned") = None;
        events.emit(
            EventKind::RunCompleted,
            &run_id,
            serde_json::to_string(&summary).expect("summary serializes"),
        );
        summary
    }

    /// Runs until the input is exhausted, `max_runs` is reached or a stop
    /// arrives. Closes the event stream on the way out.
    pub fn run(&mut self, input: InputSource) -> ExitSummary {
        let mut exit = ExitSummary::default();
        let events = Arc::clone(&self.handle.events);
        let batch_given = matches!(&input, InputSource::Batch(q) if !q.is_empty());
        let mut queue: VecDeque<String> = match &input {
            InputSource::Batch(q) => q.iter().cloned().collect(),
            _ => VecDeque::new(),
        };
        let mut reader = match input {
            InputSource::Interactive(r) => Some(r),
            _ => None,
        };
        let mut last_run = String::new();
        loop {
            if self.config.run_loop.max_runs.is_some_and(|max| exit.runs_attempted >= max) {
                break;
            }
            let proceed = self.handle.control.wait_boundary(|| {
                events.emit(EventKind::AwaitingInput, &last_run, json!({ "reason": "paused" }).to_string());
            });
            if !proceed {
                break;
            }
            let prompt = if let Some(r) = reader.as_mut() {
                events.emit(EventKind::AwaitingInput, &last_run, json!({ "reason": "prompt" }).to_string());
                eprint!("openloop> ");
                let mut line = String::new();
                match r.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => Some(line),
                    Err(e) => {
                        log::error!("cannot read input: {e}");
                        break;
                    }
                }
            } else if batch_given {
                match queue.pop_front() {
                    Some(q) => Some(q),
                    None => break,
                }
            } else {
                None
            };
            let summary = self.run_once(prompt.as_deref());
            exit.runs_attempted += 1;
            if summary.is_error() {
                exit.errors += 1;
            } else {
                exit.runs_completed += 1;
            }
            last_run = summary.run_id;
        }
        events.close();
        exit
    }
}
