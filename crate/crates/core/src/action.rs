//! The structured program a model emits to act on its workspace.
//!
//! A program is a JSON array of calls:
//!
//! ```text
//! [{"tool": "read_file", "args": {"path": "in.txt"}, "bind": "x"},
//!  {"tool": "write_file", "args": {"path": "out.txt", "content": "$x"}}]
//! ```
//!
//! `$name` inside a string argument is replaced by the result of the earlier
//! call bound to `name`. `$$` is a literal dollar sign, and a `$` not followed
//! by an identifier start is left as is.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MAX_CALLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    ReadFile,
    WriteFile,
    ListFiles,
}

impl ToolKind {
    pub const ALL: [ToolKind; 3] = [ToolKind::ReadFile, ToolKind::WriteFile, ToolKind::ListFiles];

    pub fn name(self) -> &'static str {
        match self {
            ToolKind::ReadFile => "read_file",
            ToolKind::WriteFile => "write_file",
            ToolKind::ListFiles => "list_files",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Argument names, all required.
    pub fn arg_names(self) -> &'static [&'static str] {
        match self {
            ToolKind::ReadFile | ToolKind::ListFiles => &["path"],
            ToolKind::WriteFile => &["path", "content"],
        }
    }

    /// Signature as shown to the model, e.g. `write_file(path, content)`.
    pub fn signature(self) -> String {
        format!("{}({})", self.name(), self.arg_names().join(", "))
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tool signatures, one per line, for the `{{tools}}` placeholder.
pub fn tool_schemas() -> String {
    ToolKind::ALL
        .iter()
        .map(|t| t.signature())
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: ToolKind,
    pub args: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
}

impl ToolCall {
    pub fn new(tool: ToolKind, args: &[(&str, &str)]) -> Self {
        ToolCall {
            tool,
            args: args
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            bind: None,
        }
    }

    pub fn bind(mut self, var: &str) -> Self {
        self.bind = Some(var.to_string());
        self
    }

    pub fn arg(&self, name: &str) -> &str {
        self.args.get(name).map_or("", String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionProgram {
    pub calls: Vec<ToolCall>,
}

/// Why an action block could not become a program.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("action block is not terminated by a closing fence")]
    Unterminated,
    #[error("syntax error at line {line} column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("call {index}: unknown tool `{name}` (known: read_file, write_file, list_files)")]
    UnknownTool { index: usize, name: String },
    #[error("call {index}: {detail}")]
    BadCall { index: usize, detail: String },
    #[error("call {index} `{tool}`: {detail}")]
    BadArgs {
        index: usize,
        tool: ToolKind,
        detail: String,
    },
    #[error("program has {0} calls, at most {MAX_CALLS} allowed")]
    TooManyCalls(usize),
    #[error("call {index}: invalid bind name `{name}`")]
    InvalidBind { index: usize, name: String },
    #[error("call {index}: `${name}` is not bound by an earlier call")]
    UnboundVariable { index: usize, name: String },
}

impl ActionProgram {
    /// Parses and validates the JSON body of an action block.
    pub fn parse(body: &str) -> Result<Self, ActionError> {
        let value: Value = serde_json::from_str(body).map_err(|e| ActionError::Syntax {
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })?;
        let Value::Array(items) = value else {
            return Err(ActionError::Syntax {
                line: 1,
                column: 1,
                message: "expected a JSON array of tool calls".into(),
            });
        };
        if items.len() > MAX_CALLS {
            return Err(ActionError::TooManyCalls(items.len()));
        }
        let calls = items
            .into_iter()
            .enumerate()
            .map(|(i, item)| call_from_value(i + 1, item))
            .collect::<Result<Vec<_>, _>>()?;
        let program = ActionProgram { calls };
        program.validate()?;
        Ok(program)
    }

    /// Checks the call limit, argument schemas and variable bindings.
    pub fn validate(&self) -> Result<(), ActionError> {
        if self.calls.len() > MAX_CALLS {
            return Err(ActionError::TooManyCalls(self.calls.len()));
        }
        let mut bound = BTreeSet::new();
        for (i, call) in self.calls.iter().enumerate() {
            let index = i + 1;
            check_args(index, call)?;
            for value in call.args.values() {
                for var in variables(value) {
                    if !bound.contains(var) {
                        return Err(ActionError::UnboundVariable {
                            index,
                            name: var.to_string(),
                        });
                    }
                }
            }
            if let Some(name) = &call.bind {
                if !is_identifier(name) {
                    return Err(ActionError::InvalidBind {
                        index,
                        name: name.clone(),
                    });
                }
                bound.insert(name.as_str());
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(idx) => msg[..idx].to_string(),
        None => msg.to_string(),
    }
}

fn call_from_value(index: usize, item: Value) -> Result<ToolCall, ActionError> {
    let Value::Object(mut obj) = item else {
        return Err(ActionError::BadCall {
            index,
            detail: "expected an object with `tool` and `args`".into(),
        });
    };
    let name = match obj.remove("tool") {
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(ActionError::BadCall {
                index,
                detail: "`tool` must be a string".into(),
            })
        }
        None => {
            return Err(ActionError::BadCall {
                index,
                detail: "missing `tool`".into(),
            })
        }
    };
    let tool = ToolKind::from_name(&name).ok_or(ActionError::UnknownTool { index, name })?;
    let args = match obj.remove("args") {
        Some(Value::Object(map)) => {
            let mut args = BTreeMap::new();
            for (k, v) in map {
                match v {
                    Value::String(s) => {
                        args.insert(k, s);
                    }
                    _ => {
                        return Err(ActionError::BadArgs {
                            index,
                            tool,
                            detail: format!("argument `{k}` must be a string"),
                        })
                    }
                }
            }
            args
        }
        Some(_) => {
            return Err(ActionError::BadCall {
                index,
                detail: "`args` must be an object".into(),
            })
        }
        None => BTreeMap::new(),
    };
    let bind = match obj.remove("bind") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => {
            return Err(ActionError::BadCall {
                index,
                detail: "`bind` must be a string".into(),
            })
        }
    };
    if let Some(extra) = obj.keys().next() {
        return Err(ActionError::BadCall {
            index,
            detail: format!("unexpected key `{extra}`"),
        });
    }
    Ok(ToolCall { tool, args, bind })
}

fn check_args(index: usize, call: &ToolCall) -> Result<(), ActionError> {
    let expected = call.tool.arg_names();
    for name in expected {
        if !call.args.contains_key(*name) {
            return Err(ActionError::BadArgs {
                index,
                tool: call.tool,
                detail: format!("missing argument `{name}`"),
            });
        }
    }
    if let Some(extra) = call.args.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(ActionError::BadArgs {
            index,
            tool: call.tool,
            detail: format!("unexpected argument `{extra}`"),
        });
    }
    Ok(())
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_continue)
}

enum Piece<'a> {
    Literal(&'a str),
    Var(&'a str),
}

fn pieces(s: &str) -> Vec<Piece<'_>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'$' {
            i += 1;
            continue;
        }
        match bytes.get(i + 1) {
            Some(b'$') => {
                out.push(Piece::Literal(&s[start..i + 1]));
                i += 2;
                start = i;
            }
            Some(&b) if is_ident_start(b as char) => {
                out.push(Piece::Literal(&s[start..i]));
                let mut end = i + 1;
                while end < bytes.len() && is_ident_continue(bytes[end] as char) {
                    end += 1;
                }
                out.push(Piece::Var(&s[i + 1..end]));
                i = end;
                start = end;
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Literal(&s[start..]));
    out
}

/// Variable names referenced in `s`, in order of appearance.
pub fn variables(s: &str) -> impl Iterator<Item = &str> {
    pieces(s).into_iter().filter_map(|p| match p {
        Piece::Var(v) => Some(v),
        Piece::Literal(_) => None,
    })
}

/// Replaces `$name` references with bound values and `$$` with `$`.
///
/// Unbound names are left verbatim; validation rejects them before
/// execution.
pub fn substitute(s: &str, bindings: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(s.len());
    for piece in pieces(s) {
        match piece {
            Piece::Literal(text) => out.push_str(text),
            Piece::Var(name) => match bindings.get(name) {
                Some(value) => out.push_str(value),
                None => {
                    out.push('$');
                    out.push_str(name);
                }
            },
        }
    }
    out
}
