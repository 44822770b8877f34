//! Lexical half of the workspace jail.
//!
//! [`normalize`] turns a requested path into a clean relative path or
//! rejects it. It never consults the filesystem; the std side resolves
//! symlinks and checks the canonical prefix on top of this.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("AbsolutePathRejected: {0}")]
    AbsolutePathRejected(String),
    #[error("JailEscape: {0}")]
    JailEscape(String),
    #[error("InvalidPath: {0:?}")]
    InvalidPath(String),
}

/// `C:` style prefix.
pub fn has_drive_prefix(path: &str) -> bool {
    let b = path.as_bytes();
    b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':'
}

/// A normalized, workspace-relative path.
///
/// Segments are joined with `/`. The workspace root itself is the empty
/// path and displays as `.`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelPath(String);

impl RelPath {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/').filter(|s| !s.is_empty())
    }

    pub fn display(&self) -> &str {
        if self.0.is_empty() {
            "."
        } else {
            &self.0
        }
    }
}

/// Normalizes `requested` against the jail root.
///
/// Both `/` and `\` separate segments. Empty and `.` segments vanish and
/// `..` pops the previous segment; popping past the root is an escape.
/// Absolute paths (leading separator or drive prefix) are rejected outright.
pub fn normalize(requested: &str) -> Result<RelPath, PathError> {
    if requested.is_empty() || requested.contains('\0') {
        return Err(PathError::InvalidPath(requested.to_string()));
    }
    if requested.starts_with(['/', '\\']) || has_drive_prefix(requested) {
        return Err(PathError::AbsolutePathRejected(requested.to_string()));
    }
    let mut stack: Vec<&str> = Vec::new();
    for seg in requested.split(['/', '\\']) {
        match seg {
            "" | "." => {}
            ".." => {
                if stack.pop().is_none() {
                    return Err(PathError::JailEscape(requested.to_string()));
                }
            }
            s => stack.push(s),
        }
    }
    Ok(RelPath(stack.join("/")))
}
