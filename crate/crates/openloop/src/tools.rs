//! The agent's effectors: jailed file tools and program execution.
//!
//! Every path goes through [`Jail::resolve`], which normalizes it lexically
//! and then checks that the deepest existing ancestor canonicalizes to a
//! location under the canonical root, so symlinks cannot lead outside.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use openloop_core::action::{substitute, ActionProgram, ToolCall, ToolKind};
use openloop_core::jail::{self, PathError, RelPath};
use openloop_core::summary::EpisodeTrace;
use serde::{Deserialize, Serialize};

pub const DEFAULT_OBSERVATION_CAP: usize = 16_384;
pub const DEFAULT_SUBPROCESS_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("NotFound: {0}")]
    NotFound(String),
    #[error("NotAFile: {0}")]
    NotAFile(String),
    #[error("NotADirectory: {0}")]
    NotADirectory(String),
    #[error("NotUtf8: {0}")]
    NotUtf8(String),
    #[error("IoError: {path}: {detail}")]
    Io { path: String, detail: String },
}

impl ToolError {
    fn io(path: &JailedPath, err: io::Error) -> Self {
        match err.kind() {
            io::ErrorKind::NotFound => ToolError::NotFound(path.to_string()),
            _ => ToolError::Io {
                path: path.to_string(),
                detail: err.to_string(),
            },
        }
    }
}

/// The workspace root every tool is confined to.
#[derive(Debug, Clone)]
pub struct Jail {
    root: PathBuf,
}

impl Jail {
    /// `root` must exist and be a directory; it is canonicalized once.
    pub fn new(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().canonicalize()?;
        if !root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotADirectory,
                format!("{} is not a directory", root.display()),
            ));
        }
        Ok(Jail { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, requested: &str) -> Result<JailedPath, PathError> {
        let rel = jail::normalize(requested)?;
        let full = rel.segments().fold(self.root.clone(), |p, s| p.join(s));
        let mut probe = full.as_path();
        loop {
            if probe.symlink_metadata().is_ok() {
                let canonical = probe
                    .canonicalize()
                    .map_err(|_| PathError::JailEscape(requested.to_string()))?;
                if !canonical.starts_with(&self.root) {
                    return Err(PathError::JailEscape(requested.to_string()));
                }
                break;
            }
            match probe.parent() {
                Some(parent) if parent.starts_with(&self.root) => probe = parent,
                _ => break,
            }
        }
        Ok(JailedPath {
            root: self.root.clone(),
            rel,
        })
    }
}

/// A path that passed the jail check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JailedPath {
    root: PathBuf,
    rel: RelPath,
}

impl JailedPath {
    pub fn rel(&self) -> &RelPath {
        &self.rel
    }

    pub fn absolute(&self) -> PathBuf {
        self.rel.segments().fold(self.root.clone(), |p, s| p.join(s))
    }
}

impl std::fmt::Display for JailedPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.rel.display())
    }
}

/// First `cap` chars of `s`, and whether anything was cut.
pub fn cap_text(s: &str, cap: usize) -> (&str, bool) {
    match s.char_indices().nth(cap) {
        Some((idx, _)) => (&s[..idx], true),
        None => (s, false),
    }
}

pub fn read_file(path: &JailedPath, cap: usize) -> Result<(String, bool), ToolError> {
    let abs = path.absolute();
    let meta = fs::metadata(&abs).map_err(|e| ToolError::io(path, e))?;
    if !meta.is_file() {
        return Err(ToolError::NotAFile(path.to_string()));
    }
    let bytes = fs::read(&abs).map_err(|e| ToolError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| ToolError::NotUtf8(path.to_string()))?;
    let (kept, truncated) = cap_text(&text, cap);
    Ok((kept.to_string(), truncated))
}

/// Overwrites the file with `content`, creating missing parents.
pub fn write_file(path: &JailedPath, content: &str) -> Result<usize, ToolError> {
    if path.rel.is_root() {
        return Err(ToolError::NotAFile(path.to_string()));
    }
    let abs = path.absolute();
    if let Some(parent) = abs.parent() {
        fs::create_dir_all(parent).map_err(|e| ToolError::io(path, e))?;
    }
    fs::write(&abs, content).map_err(|e| ToolError::io(path, e))?;
    Ok(content.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    File,
    Dir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirEntry {
    pub name: String,
    pub kind: EntryKind,
    pub size: u64,
}

/// Entries sorted by name, hidden ones included. Directories report size 0.
pub fn list_files(path: &JailedPath) -> Result<Vec<DirEntry>, ToolError> {
    let abs = path.absolute();
    let meta = fs::metadata(&abs).map_err(|e| ToolError::io(path, e))?;
    if !meta.is_dir() {
        return Err(ToolError::NotADirectory(path.to_string()));
    }
    let mut entries = Vec::new();
    for entry in fs::read_dir(&abs).map_err(|e| ToolError::io(path, e))? {
        let entry = entry.map_err(|e| ToolError::io(path, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let meta = match entry.metadata() {
            Ok(m) => m,
            Err(_) => continue,
        };
        let (kind, size) = if meta.is_dir() {
            (EntryKind::Dir, 0)
        } else {
            (EntryKind::File, meta.len())
        };
        entries.push(DirEntry { name, kind, size });
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(entries)
}

pub fn render_listing(entries: &[DirEntry]) -> String {
    if entries.is_empty() {
        return "(empty)".to_string();
    }
    entries
        .iter()
        .map(|e| match e.kind {
            EntryKind::Dir => format!("{}/", e.name),
            EntryKind::File => format!("{} ({} bytes)", e.name, e.size),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Executor output as it is fed back to the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub body: String,
    pub error: Option<String>,
    pub truncated: bool,
    pub duration: Duration,
}

impl Observation {
    pub fn error_only(error: impl Into<String>) -> Self {
        Observation {
            body: String::new(),
            error: Some(error.into()),
            truncated: false,
            duration: Duration::ZERO,
        }
    }

    /// Text of the tool message appended to the transcript.
    pub fn render(&self) -> String {
        let mut out = self.body.clone();
        if self.truncated {
            out.push_str("\n[output truncated]");
        }
        if let Some(err) = &self.error {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str("error: ");
            out.push_str(err);
        }
        if out.is_empty() {
            out.push_str("(no output)");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorMode {
    #[default]
    Toolcalls,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubprocessConfig {
    pub command_template: String,
    pub timeout: Duration,
}

impl Default for SubprocessConfig {
    fn default() -> Self {
        SubprocessConfig {
            command_template: "python3 {file}".to_string(),
            timeout: DEFAULT_SUBPROCESS_TIMEOUT,
        }
    }
}

/// Runs a structured program call by call, stopping at the first error.
///
/// Each successful call adds a line `[k] tool → result`. A call with `bind`
/// makes its result available as `$name` to later calls. Errors are never
/// thrown; they land in [`Observation::error`].
pub fn execute(program: &ActionProgram, jail: &Jail, cap: usize) -> Observation {
    execute_traced(program, jail, cap, &mut EpisodeTrace::default())
}

pub fn execute_traced(
    program: &ActionProgram,
    jail: &Jail,
    cap: usize,
    trace: &mut EpisodeTrace,
) -> Observation {
    let started = Instant::now();
    let mut lines = Vec::with_capacity(program.calls.len());
    let mut bindings = BTreeMap::new();
    let mut error = None;
    let mut truncated = false;
    for (i, call) in program.calls.iter().enumerate() {
        trace.tools.push(call.tool);
        match run_call(call, &bindings, jail, cap, trace) {
            Ok((result, cut)) => {
                truncated |= cut;
                lines.push(format!("[{}] {} → {}", i + 1, call.tool, result));
                if let Some(var) = &call.bind {
                    bindings.insert(var.clone(), result);
                }
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let joined = lines.join("\n");
    let (body, cut) = cap_text(&joined, cap);
    Observation {
        body: body.to_string(),
        error,
        truncated: truncated || cut,
        duration: started.elapsed(),
    }
}

fn run_call(
    call: &ToolCall,
    bindings: &BTreeMap<String, String>,
    jail: &Jail,
    cap: usize,
    trace: &mut EpisodeTrace,
) -> Result<(String, bool), ToolError> {
    let path = jail.resolve(&substitute(call.arg("path"), bindings))?;
    match call.tool {
        ToolKind::ReadFile => read_file(&path, cap),
        ToolKind::WriteFile => {
            let content = substitute(call.arg("content"), bindings);
            let n = write_file(&path, &content)?;
            trace.note_write(path.rel().as_str());
            Ok((format!("wrote {n} bytes to {path}"), false))
        }
        ToolKind::ListFiles => Ok((render_listing(&list_files(&path)?), false)),
    }
}

/// Runs model-written source with an external interpreter.
///
/// The source is written to a scratch file inside the jail, the command
/// runs with the jail root as working directory, and combined stdout and
/// stderr are captured up to `cap` chars. The process is killed at
/// `timeout`.
pub fn execute_subprocess(
    source: &str,
    jail: &Jail,
    cap: usize,
    command_template: &str,
    timeout: Duration,
) -> Observation {
    let started = Instant::now();
    if !command_template.contains("{file}") {
        return Observation::error_only("command template has no {file} placeholder");
    }
    let scratch = jail.root().join(format!(".openloop-exec-{}.src", std::process::id()));
    if let Err(e) = fs::write(&scratch, source) {
        return Observation::error_only(format!("cannot write source file: {e}"));
    }
    let scratch_arg = scratch.to_string_lossy().into_owned();
    let mut parts = command_template
        .split_whitespace()
        .map(|p| p.replace("{file}", &scratch_arg));
    let Some(program) = parts.next() else {
        let _ = fs::remove_file(&scratch);
        return Observation::error_only("empty command template");
    };
    let spawned = Command::new(&program)
        .args(parts)
        .current_dir(jail.root())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn();
    let mut child = match spawned {
        Ok(c) => c,
        Err(e) => {
            let _ = fs::remove_file(&scratch);
            return Observation::error_only(format!("cannot spawn `{program}`: {e}"));
        }
    };
    let readers: Vec<_> = [
        child.stdout.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
        child.stderr.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
    ]
    .into_iter()
    .flatten()
    .map(|mut r| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = r.read_to_end(&mut buf);
            buf
        })
    })
    .collect();

    let mut error = None;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => {
                if !status.success() {
                    error = Some(match status.code() {
                        Some(code) => format!("exit status {code}"),
                        None => "terminated by signal".to_string(),
                    });
                }
                break;
            }
            Ok(None) if started.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                error = Some(format!("Timeout after {}s", timeout.as_secs_f64()));
                break;
            }
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                error = Some(format!("wait failed: {e}"));
                break;
            }
        }
    }
    let mut output = Vec::new();
    for handle in readers {
        output.extend(handle.join().unwrap_or_default());
    }
    let _ = fs::remove_file(&scratch);
    let text = String::from_utf8_lossy(&output);
    let (body, truncated) = cap_text(&text, cap);
    Observation {
        body: body.to_string(),
        error,
        truncated,
        duration: started.elapsed(),
    }
}

/// The configured executor for one agent loop.
#[derive(Debug, Clone)]
pub struct Toolbelt {
    jail: Jail,
    cap: usize,
    mode: ExecutorMode,
    subprocess: SubprocessConfig,
}

impl Toolbelt {
    pub fn new(jail: Jail, cap: usize) -> Self {
        Toolbelt {
            jail,
            cap,
            mode: ExecutorMode::Toolcalls,
            subprocess: SubprocessConfig::default(),
        }
    }

    pub fn with_subprocess(mut self, config: SubprocessConfig) -> Self {
        self.mode = ExecutorMode::Subprocess;
        self.subprocess = config;
        self
    }

    pub fn jail(&self) -> &Jail {
        &self.jail
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn mode(&self) -> ExecutorMode {
        self.mode
    }

    pub fn execute(&self, program: &ActionProgram, trace: &mut EpisodeTrace) -> Observation {
        execute_traced(program, &self.jail, self.cap, trace)
    }

    pub fn run_source(&self, source: &str) -> Observation {
        if self.mode != ExecutorMode::Subprocess {
            return Observation::error_only("subprocess execution disabled");
        }
        execute_subprocess(
            source,
            &self.jail,
            self.cap,
            &self.subprocess.command_template,
            self.subprocess.timeout,
        )
    }

    /// Top-level listing for the system prompt.
    pub fn workspace_listing(&self) -> String {
        let root = self.jail.resolve(".").expect("root resolves");
        match list_files(&root) {
            Ok(entries) => render_listing(&entries),
            Err(e) => format!("(unavailable: {e})"),
        }
    }
}
