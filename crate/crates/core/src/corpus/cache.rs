//! Local cache of fetched API pages.
//!
//! Page bodies are stored content-addressed under `objects/`; each cache
//! scope (repo, window, record kind) has an index under `index/` mapping
//! request URLs to objects. A scope expires as a whole once its TTL passes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedPage {
    pub body: String,
    pub next: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScopeIndex {
    scope: String,
    created_at: DateTime<Utc>,
    pages: BTreeMap<String, IndexEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    object: String,
    next: Option<String>,
}

pub struct PageCache {
    dir: PathBuf,
    ttl: Duration,
    write_lock: Mutex<()>,
}

fn sha_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, data)?;
    std::fs::rename(tmp, path)
}

impl PageCache {
    pub fn new(dir: impl Into<PathBuf>, ttl: Duration) -> Self {
        PageCache {
            dir: dir.into(),
            ttl,
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn index_path(&self, scope: &str) -> PathBuf {
        self.dir.join("index").join(format!("{}.json", sha_hex(scope.as_bytes())))
    }

    fn read_index(&self, scope: &str, now: DateTime<Utc>) -> Option<ScopeIndex> {
        let text = std::fs::read_to_string(self.index_path(scope)).ok()?;
        let index: ScopeIndex = serde_json::from_str(&text).ok()?;
        let age = now.signed_duration_since(index.created_at).to_std().ok()?;
        (index.scope == scope && age <= self.ttl).then_some(index)
    }

    pub fn lookup(&self, scope: &str, url: &str, now: DateTime<Utc>) -> Option<CachedPage> {
        let index = self.read_index(scope, now)?;
        let entry = index.pages.get(url)?;
        let body = std::fs::read_to_string(self.dir.join("objects").join(&entry.object)).ok()?;
        // content address doubles as an integrity check
        if sha_hex(body.as_bytes()) != entry.object {
            return None;
        }
        Some(CachedPage {
            body,
            next: entry.next.clone(),
        })
    }

    pub fn store(
        &self,
        scope: &str,
        url: &str,
        page: &CachedPage,
        now: DateTime<Utc>,
    ) -> std::io::Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        std::fs::create_dir_all(self.dir.join("objects"))?;
        std::fs::create_dir_all(self.dir.join("index"))?;

        let object = sha_hex(page.body.as_bytes());
        let object_path = self.dir.join("objects").join(&object);
        if !object_path.exists() {
            write_atomic(&object_path, page.body.as_bytes())?;
        }

        let mut index = self.read_index(scope, now).unwrap_or_else(|| ScopeIndex {
            scope: scope.to_string(),
            created_at: now,
            pages: BTreeMap::new(),
        });
        index.pages.insert(
            url.to_string(),
            IndexEntry {
                object,
                next: page.next.clone(),
            },
        );
        let text = serde_json::to_vec_pretty(&index).map_err(std::io::Error::other)?;
        write_atomic(&self.index_path(scope), &text)
    }
}
