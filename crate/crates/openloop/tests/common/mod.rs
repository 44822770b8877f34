//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod scenarios;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use openloop::config::AgentConfig;
use openloop_core::model::{check_request, ChatModel, ChatParams, ModelError, ModelReply};
use openloop_core::Message;
use tempfile::TempDir;

/// A temp dir holding `ws/` (the workspace) next to `outside/`, which no
/// run may touch.
pub struct Sandbox {
    pub dir: TempDir,
    outside_before: BTreeMap<String, Vec<u8>>,
}

impl Sandbox {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("ws")).unwrap();
        fs::create_dir_all(dir.path().join("outside")).unwrap();
        fs::write(dir.path().join("outside/secret.txt"), "do not touch").unwrap();
        let outside_before = snapshot(&dir.path().join("outside"));
        Sandbox { dir, outside_before }
    }

    pub fn ws(&self) -> PathBuf {
        self.dir.path().join("ws")
    }

    pub fn outside(&self) -> PathBuf {
        self.dir.path().join("outside")
    }

    pub fn write(&self, rel: &str, content: &str) {
        let p = self.ws().join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, content).unwrap();
    }

    pub fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.ws().join(rel)).unwrap()
    }

    pub fn config(&self) -> AgentConfig {
        let mut c = AgentConfig {
            workspace_root: self.ws(),
            ..Default::default()
        };
        c.run_loop.seed = Some(7);
        c
    }

    /// Everything outside the workspace is byte-for-byte unchanged, and
    /// nothing new appeared next to it besides the test's own inputs.
    pub fn confined(&self) -> bool {
        let top_level_ok = fs::read_dir(self.dir.path()).unwrap().all(|e| {
            let name = e.unwrap().file_name();
            ["ws", "outside", "cfg.json", "script.json"].iter().any(|n| name == *n)
        });
        top_level_ok && snapshot(&self.outside()) == self.outside_before
    }
}

/// Relative path → contents (directories map to an empty marker).
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let ft = entry.file_type().unwrap();
            if ft.is_dir() {
                out.insert(format!("{rel}/"), Vec::new());
                stack.push(path);
            } else if ft.is_symlink() {
                out.insert(format!("{rel}@"), fs::read_link(&path).unwrap().to_string_lossy().into_owned().into_bytes());
            } else {
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Memory file with every `ts` blanked.
pub fn normalized_memory(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["ts"] = serde_json::Value::String(String::new());
            v.to_string() + "\n"
        })
        .collect()
}

pub type Prompts = Arc<Mutex<Vec<Vec<Message>>>>;

/// Passes calls through to `inner`, keeping every prompt it was sent.
pub struct Recording<M> {
    pub inner: M,
    pub prompts: Prompts,
}

impl<M> Recording<M> {
    pub fn new(inner: M) -> (Self, Prompts) {
        let prompts = Prompts::default();
        (
            Recording {
                inner,
                prompts: Arc::clone(&prompts),
            },
            prompts,
        )
    }
}

impl<M: ChatModel> ChatModel for Recording<M> {
    fn complete(&mut self, messages: &[Message], params: &ChatParams) -> Result<ModelReply, ModelError> {
        self.prompts.lock().unwrap().push(messages.to_vec());
        self.inner.complete(messages, params)
    }
}

/// A model computed from the prompt.
pub struct FnModel<F>(pub F);

impl<F: FnMut(&[Message]) -> Result<String, ModelError>> ChatModel for FnModel<F> {
    fn complete(&mut self, messages: &[Message], _params: &ChatParams) -> Result<ModelReply, ModelError> {
        check_request(messages)?;
        (self.0)(messages).map(ModelReply::stop)
    }
}

/// Which step a prompt is for, judged by its final nudge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Task,
    Act,
    Summary,
}

pub fn phase(messages: &[Message]) -> Phase {
    let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
    if last.contains("generate the task") || last.contains("Choose a different task") {
        Phase::Task
    } else if last.contains("summarize this run") {
        Phase::Summary
    } else {
        Phase::Act
    }
}

pub fn action(json: &str) -> String {
    format!("```action\n{json}\n```")
}

pub fn record_block(task: &str, action: &str, outcome: &str) -> String {
    format!(
        "```record\n{}\n```",
        serde_json::json!({ "task": task, "action": action, "outcome": outcome })
    )
}

/// Task phase: the next task from `tasks` (cycling). Act phase: a final
/// answer. Summary phase: a record block for the task.
pub fn task_model(tasks: &[&str]) -> FnModel<impl FnMut(&[Message]) -> Result<String, ModelError> + Send> {
    let tasks: Vec<String> = tasks.iter().map(|t| t.to_string()).collect();
    let mut next = 0;
    let mut current = String::new();
    FnModel(move |messages: &[Message]| {
        Ok(match phase(messages) {
            Phase::Task => {
                current = tasks[next % tasks.len()].clone();
                next += 1;
                format!("<task>{current}</task>")
            }
            Phase::Act => "<final>done</final>".to_string(),
            Phase::Summary => record_block(&current, "answered directly", "done"),
        })
    })
}
