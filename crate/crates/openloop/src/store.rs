//! Long-term memory on disk and per-run transcript logs.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use openloop_core::record::RecordError;
use openloop_core::{Message, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid record: {0}")]
    Invalid(#[from] RecordError),
    #[error("StorageError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Result of reading a memory file: the good records plus how many
/// malformed lines were skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Loaded {
    pub records: Vec<RunRecord>,
    pub skipped: usize,
}

/// Parses a memory file line by line. A missing file is an empty store;
/// corrupt or invalid lines are counted and skipped.
pub fn load_records(path: &Path) -> io::Result<Loaded> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Loaded::default()),
        Err(e) => return Err(e),
    };
    let mut loaded = Loaded::default();
    for raw in bytes.split(|b| *b == b'\n') {
        if raw.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match std::str::from_utf8(raw).ok().map(RunRecord::from_line) {
            Some(Ok(rec)) => loaded.records.push(rec),
            _ => loaded.skipped += 1,
        }
    }
    Ok(loaded)
}

/// Append-only record file with an in-memory cache.
///
/// The cache is shared so readers can snapshot it while the single writer
/// appends.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    path: PathBuf,
    records: Arc<RwLock<Vec<RunRecord>>>,
    skipped: usize,
}

impl MemoryStore {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let loaded = load_records(&path)?;
        Ok(MemoryStore {
            path,
            records: Arc::new(RwLock::new(loaded.records)),
            skipped: loaded.skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn snapshot(&self) -> Vec<RunRecord> {
        self.records.read().expect("memory cache poisoned").clone()
    }

    pub fn shared(&self) -> Arc<RwLock<Vec<RunRecord>>> {
        Arc::clone(&self.records)
    }

    /// Writes one line at the end of the file and syncs it before
    /// returning. A torn final line from an earlier crash is closed off
    /// with a newline first, so the new record always starts its own line.
    pub fn append(&self, record: &RunRecord) -> Result<(), StoreError> {
        record.validate()?;
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&self.path)
            .map_err(io_err)?;
        let mut line = String::new();
        if needs_leading_newline(&mut file).map_err(io_err)? {
            line.push('\n');
        }
        line.push_str(&record.to_line());
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;
        self.records
            .write()
            .expect("memory cache poisoned")
            .push(record.clone());
        Ok(())
    }
}

fn needs_leading_newline(file: &mut File) -> io::Result<bool> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}

/// Writes `runs/<run_id>.jsonl`, one message per line.
pub fn write_run_log(dir: &Path, run_id: &str, messages: &[Message]) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{run_id}.jsonl"));
    let mut out = String::new();
    for m in messages {
        out.push_str(&serde_json::to_string(m).map_err(io::Error::other)?);
        out.push('\n');
    }
    fs::write(&path, out)?;
    Ok(path)
}

pub fn read_run_log(dir: &Path, run_id: &str) -> io::Result<Vec<Message>> {
    let text = fs::read_to_string(dir.join(format!("{run_id}.jsonl")))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(io::Error::other))
        .collect()
}
