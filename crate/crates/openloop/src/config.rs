//! Agent configuration: one JSON file, every field optional except where
//! validation says otherwise. Relative paths are resolved against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use openloop_core::action::tool_schemas;
use openloop_core::model::{ChatParams, ParamsError};
use openloop_core::template::{
    placeholder, render_system_prompt, NudgeError, NudgeSet, PromptTemplate, TemplateError,
    CURIOSITY_CLAUSE, DEFAULT_CHAR_BUDGET,
};
use openloop_core::DuplicatePolicy;
use serde::{Deserialize, Serialize};

use crate::tools::{ExecutorMode, SubprocessConfig, DEFAULT_OBSERVATION_CAP};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid model parameters: {0}")]
    Params(#[from] ParamsError),
    #[error("cannot read prompt file {path}: {source}")]
    Prompt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("system prompt template: {0}")]
    Template(#[from] TemplateError),
    #[error("nudges file: {0}")]
    Nudges(#[from] NudgeError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// An OpenAI-compatible HTTP endpoint.
    #[default]
    Openai,
    /// A [`ScriptedModel`](openloop_core::ScriptedModel) replayed from `script`.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub provider: Provider,
    pub endpoint: String,
    pub name: String,
    pub api_key: Option<String>,
    pub script: Option<PathBuf>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u8,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = ChatParams::default();
        ModelConfig {
            provider: Provider::Openai,
            endpoint: "http://127.0.0.1:8000".into(),
            name: p.model_name,
            api_key: None,
            script: None,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            timeout_secs: p.timeout.as_secs(),
            max_retries: p.max_retries,
        }
    }
}

impl ModelConfig {
    pub fn params(&self) -> ChatParams {
        ChatParams {
            model_name: self.name.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    /// Defaults to `<workspace>/memory.jsonl`.
    pub path: Option<PathBuf>,
    /// Defaults to `<workspace>/runs`.
    pub runs_dir: Option<PathBuf>,
    pub store_feedback: bool,
    pub digest_max_entries: usize,
    pub digest_char_budget: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            path: None,
            runs_dir: None,
            store_feedback: true,
            digest_max_entries: openloop_core::record::DEFAULT_DIGEST_ENTRIES,
            digest_char_budget: openloop_core::record::DEFAULT_DIGEST_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub max_steps: usize,
    /// No limit when absent: the loop runs until stopped.
    pub max_runs: Option<u64>,
    pub duplicate_policy: DuplicatePolicy,
    pub dedup_threshold: f64,
    pub observation_cap: usize,
    pub char_budget: usize,
    pub loop_window: usize,
    /// Batch mode user prompts, one per run.
    pub queries: Vec<String>,
    /// Seeds run-id suffixes; random when absent.
    pub seed: Option<u64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_steps: crate::react::DEFAULT_MAX_STEPS,
            max_runs: None,
            duplicate_policy: DuplicatePolicy::Warn,
            dedup_threshold: openloop_core::dedup::DEFAULT_THRESHOLD,
            observation_cap: DEFAULT_OBSERVATION_CAP,
            char_budget: DEFAULT_CHAR_BUDGET,
            loop_window: openloop_core::loop_detect::DEFAULT_WINDOW,
            queries: Vec::new(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub mode: ExecutorMode,
    pub command_template: String,
    pub timeout_secs: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        let sub = SubprocessConfig::default();
        ExecutorConfig {
            mode: ExecutorMode::Toolcalls,
            command_template: sub.command_template,
            timeout_secs: sub.timeout.as_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsConfig {
    pub system: Option<PathBuf>,
    pub nudges: Option<PathBuf>,
    pub curiosity_clause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub bind: String,
    /// Console files served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: 8080,
            bind: "127.0.0.1".into(),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub model: ModelConfig,
    pub workspace_root: PathBuf,
    pub memory: MemoryConfig,
    #[serde(rename = "loop")]
    pub run_loop: LoopConfig,
    pub executor: ExecutorConfig,
    pub prompts: PromptsConfig,
    pub service: ServiceConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            model: ModelConfig::default(),
            workspace_root: PathBuf::from("workspace"),
            memory: MemoryConfig::default(),
            run_loop: LoopConfig::default(),
            executor: ExecutorConfig::default(),
            prompts: PromptsConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AgentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: AgentConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        config.validate()?;
        Ok(config)
    }

    /// Makes every relative path relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.workspace_root);
        for p in [
            self.memory.path.as_mut(),
            self.memory.runs_dir.as_mut(),
            self.model.script.as_mut(),
            self.prompts.system.as_mut(),
            self.prompts.nudges.as_mut(),
            self.service.static_dir.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.params().validate()?;
        let l = &self.run_loop;
        if l.max_steps == 0 {
            return Err(ConfigError::Invalid("loop.max_steps must be at least 1".into()));
        }
        if !(l.dedup_threshold > 0.0 && l.dedup_threshold <= 1.0) {
            return Err(ConfigError::Invalid("loop.dedup_threshold must be in (0, 1]".into()));
        }
        if l.observation_cap == 0 || l.char_budget == 0 {
            return Err(ConfigError::Invalid(
                "loop.observation_cap and loop.char_budget must be positive".into(),
            ));
        }
        if self.memory.digest_max_entries == 0 || self.memory.digest_char_budget == 0 {
            return Err(ConfigError::Invalid("memory digest limits must be positive".into()));
        }
        if self.executor.mode == ExecutorMode::Subprocess && !self.executor.command_template.contains("{file}") {
            return Err(ConfigError::Invalid(
                "executor.command_template needs a {file} placeholder".into(),
            ));
        }
        if self.model.provider == Provider::Scripted && self.model.script.is_none() {
            return Err(ConfigError::Invalid("model.script is required for the scripted provider".into()));
        }
        self.prompts()?;
        Ok(())
    }

    pub fn memory_path(&self) -> PathBuf {
        self.memory
            .path
            .clone()
            .unwrap_or_else(|| self.workspace_root.join("memory.jsonl"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.memory
            .runs_dir
            .clone()
            .unwrap_or_else(|| self.workspace_root.join("runs"))
    }

    pub fn subprocess(&self) -> SubprocessConfig {
        SubprocessConfig {
            command_template: self.executor.command_template.clone(),
            timeout: Duration::from_secs(self.executor.timeout_secs),
        }
    }

    /// Loads the templates, falling back to the shipped defaults.
    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        let read = |p: &PathBuf| {
            fs::read_to_string(p).map_err(|source| ConfigError::Prompt {
                path: p.clone(),
                source,
            })
        };
        let system = match &self.prompts.system {
            Some(p) => PromptTemplate::new("system", read(p)?),
            None => PromptTemplate::default_system(),
        };
        system.placeholders()?;
        let nudges = match &self.prompts.nudges {
            Some(p) => NudgeSet::parse(&read(p)?)?,
            None => NudgeSet::default(),
        };
        let curiosity = self
            .prompts
            .curiosity_clause
            .clone()
            .unwrap_or_else(|| CURIOSITY_CLAUSE.to_string());
        Ok(PromptSet {
            system,
            nudges,
            curiosity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub system: PromptTemplate,
    pub nudges: NudgeSet,
    pub curiosity: String,
}

impl PromptSet {
    pub fn render_system(&self, digest: &str, listing: &str) -> Result<String, TemplateError> {
        let bindings: BTreeMap<String, String> = [
            (placeholder::TOOLS, tool_schemas()),
            (placeholder::MEMORY_DIGEST, digest.to_string()),
            (placeholder::CURIOSITY_CLAUSE, self.curiosity.clone()),
            (placeholder::WORKSPACE_LISTING, listing.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        render_system_prompt(&self.system, &bindings)
    }
}
