//! Append-only transcripts of request digests and responses.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_digest: String,
    pub response: ChatResponse,
}

/// In-memory transcript, optionally mirrored to an append-only file.
#[derive(Debug, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    index: HashMap<String, usize>,
    sink: Option<(PathBuf, File)>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Result<Self, LlmError> {
        let mut t = Transcript::new();
        for e in entries {
            t.insert(e)?;
        }
        Ok(t)
    }

    pub fn read(reader: impl BufRead) -> Result<Self, LlmError> {
        let mut t = Transcript::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| LlmError::Transcript(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| LlmError::Transcript(format!("line {}: {e}", i + 1)))?;
            t.insert(entry)
                .map_err(|e| LlmError::Transcript(format!("line {}: {e}", i + 1)))?;
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Self::read(BufReader::new(file))
    }

    /// Loads `path` if it exists and appends every new entry to it.
    pub fn open_for_recording(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let mut t = if path.exists() {
            Self::load(path)?
        } else {
            Transcript::new()
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| LlmError::Transcript(format!("{}: {e}", parent.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        t.sink = Some((path.to_path_buf(), file));
        Ok(t)
    }

    fn insert(&mut self, entry: TranscriptEntry) -> Result<(), LlmError> {
        if self.index.contains_key(&entry.request_digest) {
            return Err(LlmError::Transcript(format!(
                "duplicate request digest {}",
                entry.request_digest
            )));
        }
        self.index
            .insert(entry.request_digest.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    /// Adds an entry, writing it through to the backing file when recording.
    pub fn append(&mut self, entry: TranscriptEntry) -> Result<(), LlmError> {
        if let Some((path, file)) = &mut self.sink {
            let mut line = serde_json::to_string(&entry)
                .map_err(|e| LlmError::Transcript(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        }
        self.insert(entry)
    }

    pub fn get(&self, digest: &str) -> Option<&ChatResponse> {
        self.index.get(digest).map(|&i| &self.entries[i].response)
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
