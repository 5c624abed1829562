//! Run-directory layout, content hashes, stage manifests and the run lock.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::UsageLedger;

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const CORPUS: &str = "corpus.jsonl";
pub const SAMPLE: &str = "sample.jsonl";
pub const PLAN: &str = "plan.json";
pub const PLAN_SCORE: &str = "plan_score.json";
pub const STAGE2: &str = "stage2.jsonl";
pub const STAGE3: &str = "stage3.jsonl";
pub const EVAL: &str = "eval.json";
pub const REPORT: &str = "report.json";
pub const SUMMARY: &str = "summary.md";
pub const TRANSCRIPT: &str = "transcript.jsonl";
pub const TABLES_DIR: &str = "tables";
pub const MANIFEST_DIR: &str = "manifests";
const LOCK: &str = ".faultloom.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> io::Result<String> {
    fs::read(path).map(|b| sha256_hex(&b))
}

/// What a completed stage leaves behind; its presence marks the stage done.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub input_hash: String,
    /// Relative artifact path -> content hash.
    pub outputs: Vec<(String, String)>,
    pub wall_time_ms: u64,
    pub items: u64,
    pub usage: UsageLedger,
    pub failures: u64,
    pub invalid: u64,
}

#[derive(Debug)]
pub enum ManifestState {
    Missing,
    Current(StageManifest),
    /// Completed under different inputs.
    Stale(StageManifest),
    /// Manifest present but an output was altered or removed.
    Damaged(String),
}

/// Held for the lifetime of a run; removes the lock file on drop.
#[derive(Debug)]
struct RunLock(PathBuf);

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    _lock: RunLock,
}

#[derive(Debug)]
pub enum OpenError {
    Io(PathBuf, io::Error),
    Locked(PathBuf),
}

impl RunDir {
    /// Creates the directory if needed and takes the run lock.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, OpenError> {
        let root = root.into();
        for dir in [root.clone(), root.join(MANIFEST_DIR), root.join(TABLES_DIR)] {
            fs::create_dir_all(&dir).map_err(|e| OpenError::Io(dir.clone(), e))?;
        }
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(OpenError::Locked(lock)),
            Err(e) => return Err(OpenError::Io(lock, e)),
        }
        Ok(RunDir {
            root,
            _lock: RunLock(lock),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes via a temporary file and rename so readers never see partial artifacts.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> io::Result<String> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(sha256_hex(bytes))
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.root.join(MANIFEST_DIR).join(format!("{stage}.json"))
    }

    pub fn read_manifest(&self, stage: &str) -> Option<StageManifest> {
        let bytes = fs::read(self.manifest_path(stage)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn write_manifest(&self, manifest: &StageManifest) -> io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(manifest).map_err(io::Error::other)?;
        bytes.push(b'\n');
        self.write(&format!("{MANIFEST_DIR}/{}.json", manifest.stage), &bytes)
            .map(|_| ())
    }

    pub fn manifest_state(&self, stage: &str, input_hash: &str) -> ManifestState {
        let Some(m) = self.read_manifest(stage) else {
            return ManifestState::Missing;
        };
        if m.input_hash != input_hash {
            return ManifestState::Stale(m);
        }
        for (rel, hash) in &m.outputs {
            match file_digest(&self.path(rel)) {
                Ok(h) if h == *hash => {}
                _ => return ManifestState::Damaged(rel.clone()),
            }
        }
        ManifestState::Current(m)
    }

    /// Content hash of a completed upstream artifact, or `None` if it is absent
    /// or not backed by a manifest.
    pub fn completed_artifact(&self, stage: &str, rel: &str) -> Option<String> {
        let m = self.read_manifest(stage)?;
        let (_, hash) = m.outputs.iter().find(|(r, _)| r == rel)?;
        (file_digest(&self.path(rel)).ok()? == *hash).then(|| hash.clone())
    }
}
