//! Issue records, corpora, gold labels, and their file formats.

mod cache;
mod fetch;
mod sample;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;

pub use cache::PageCache;
pub use fetch::{fetch_many, DateWindow, FetchConfig, IssueFetcher, VCS_TOKEN_ENV};
pub use sample::{sample_balanced, PortableRng};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IssueKey {
    pub repo: String,
    pub number: u64,
}

impl IssueKey {
    pub fn new(repo: impl Into<String>, number: u64) -> Self {
        IssueKey {
            repo: repo.into(),
            number,
        }
    }
}

impl fmt::Display for IssueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.repo, self.number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comment {
    pub author_role: String,
    pub created_at: DateTime<Utc>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssueRecord {
    pub repo: String,
    pub number: u64,
    pub title: String,
    pub state: IssueState,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub closed_at: Option<DateTime<Utc>>,
    pub body: String,
    pub labels: Vec<String>,
    pub comments: Vec<Comment>,
    pub is_pull_request: bool,
    pub url: String,
}

impl IssueRecord {
    pub fn key(&self) -> IssueKey {
        IssueKey::new(self.repo.clone(), self.number)
    }

    /// An issue counts as answered once anybody has commented on it.
    pub fn is_answered(&self) -> bool {
        !self.comments.is_empty()
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut parts = self.repo.split('/');
        let well_formed = matches!(
            (parts.next(), parts.next(), parts.next()),
            (Some(o), Some(n), None) if !o.is_empty() && !n.is_empty()
        );
        if !well_formed {
            return Err(format!("repo `{}` is not of the form owner/name", self.repo));
        }
        if self.number == 0 {
            return Err("issue number must be positive".into());
        }
        if self.created_at > self.updated_at {
            return Err("created_at is after updated_at".into());
        }
        match (self.state, self.closed_at) {
            (IssueState::Closed, None) => return Err("closed issue without closed_at".into()),
            (IssueState::Open, Some(_)) => return Err("open issue carries closed_at".into()),
            _ => {}
        }
        if self
            .comments
            .windows(2)
            .any(|w| w[0].created_at > w[1].created_at)
        {
            return Err("comments are not ordered by created_at".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Live,
    Dump,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: CorpusSource,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<IssueRecord>,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate issue key {key}")]
    DuplicateKey { line: usize, key: IssueKey },
    #[error("line {line}: record {key} violates an invariant: {reason}")]
    Invariant {
        line: usize,
        key: IssueKey,
        reason: String,
    },
    #[error("not enough {stratum} records: requested {requested}, available {available} (short by {})", requested - available)]
    InsufficientStratum {
        stratum: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("gold file line {line}: {reason}")]
    Gold { line: usize, reason: String },
    #[error("request to {url} failed after {attempts} attempts: {reason}")]
    Network {
        url: String,
        attempts: u32,
        reason: String,
    },
    #[error("authentication rejected by {url} (status {status})")]
    Auth { url: String, status: u16 },
    #[error("rate limit exhausted; resets at {reset}")]
    RateLimited { reset: String },
    #[error("request budget of {0} exhausted")]
    BudgetExhausted(usize),
    #[error("unexpected response from {url}: {reason}")]
    Protocol { url: String, reason: String },
}

impl Corpus {
    /// Builds a corpus, enforcing record invariants and key uniqueness.
    pub fn new(records: Vec<IssueRecord>, provenance: Provenance) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|reason| CorpusError::Invariant {
                line: i + 1,
                key: r.key(),
                reason,
            })?;
            if !seen.insert(r.key()) {
                return Err(CorpusError::DuplicateKey {
                    line: i + 1,
                    key: r.key(),
                });
            }
        }
        Ok(Corpus {
            records,
            provenance,
        })
    }

    pub fn empty(provenance: Provenance) -> Self {
        Corpus {
            records: Vec::new(),
            provenance,
        }
    }

    pub fn records(&self) -> &[IssueRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<IssueRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn keys(&self) -> Vec<IssueKey> {
        self.records.iter().map(IssueRecord::key).collect()
    }

    pub fn get(&self, key: &IssueKey) -> Option<&IssueRecord> {
        self.records
            .iter()
            .find(|r| r.number == key.number && r.repo == key.repo)
    }

    /// Keeps the records accepted by `keep`, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&IssueRecord) -> bool) -> Corpus {
        Corpus {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the records in dump format (one JSON object per line).
    pub fn write_dump(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn export_dump(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut buf = Vec::new();
        self.write_dump(&mut buf).map_err(io_err)?;
        std::fs::write(path, buf).map_err(io_err)
    }
}

/// Reads a dump: one record per line, blank lines ignored.
pub fn read_dump(reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: IssueRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: lineno,
                reason: e.to_string(),
            })?;
        record.validate().map_err(|reason| CorpusError::Invariant {
            line: lineno,
            key: record.key(),
            reason,
        })?;
        if seen.insert(record.key(), lineno).is_some() {
            return Err(CorpusError::DuplicateKey {
                line: lineno,
                key: record.key(),
            });
        }
        records.push(record);
    }
    // Deterministic provenance for dumps: the newest timestamp inside the data.
    let fetched_at = records
        .iter()
        .map(|r| r.updated_at)
        .max()
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    Ok(Corpus {
        records,
        provenance: Provenance {
            source: CorpusSource::Dump,
            fetched_at,
        },
    })
}

pub fn import_dump(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dump(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub repo: String,
    pub number: u64,
    pub fault_related: Option<bool>,
    pub symptom_leaf: Option<String>,
    pub root_cause: Option<String>,
}

impl GoldLabel {
    pub fn key(&self) -> IssueKey {
        IssueKey::new(self.repo.clone(), self.number)
    }
}

/// Gold labels indexed by issue key, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldSet {
    labels: Vec<GoldLabel>,
    index: HashMap<IssueKey, usize>,
}

#[derive(Debug, Deserialize)]
struct GoldRow {
    repo: String,
    number: u64,
    #[serde(default)]
    fault_related: String,
    #[serde(default)]
    symptom_leaf_id: String,
    #[serde(default)]
    root_cause_id: String,
}

fn parse_flag(cell: &str) -> Result<Option<bool>, String> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "true" | "1" | "yes" | "y" => Ok(Some(true)),
        "false" | "0" | "no" | "n" => Ok(Some(false)),
        other => Err(format!("fault_related value `{other}` is not a boolean")),
    }
}

fn non_empty(cell: String) -> Option<String> {
    let t = cell.trim();
    (!t.is_empty()).then(|| t.to_string())
}

impl GoldSet {
    pub fn from_labels(labels: Vec<GoldLabel>) -> Result<Self, CorpusError> {
        let mut set = GoldSet::default();
        for (i, l) in labels.into_iter().enumerate() {
            set.push(l, i + 1)?;
        }
        Ok(set)
    }

    fn push(&mut self, label: GoldLabel, line: usize) -> Result<(), CorpusError> {
        if label.fault_related.is_none() && label.symptom_leaf.is_none() && label.root_cause.is_none()
        {
            return Err(CorpusError::Gold {
                line,
                reason: format!("{} has no populated label", label.key()),
            });
        }
        if self.index.insert(label.key(), self.labels.len()).is_some() {
            return Err(CorpusError::Gold {
                line,
                reason: format!("duplicate gold row for {}", label.key()),
            });
        }
        self.labels.push(label);
        Ok(())
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<Self, CorpusError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut set = GoldSet::default();
        for (i, row) in rdr.deserialize::<GoldRow>().enumerate() {
            // header is line 1
            let line = i + 2;
            let row = row.map_err(|e| CorpusError::Gold {
                line,
                reason: e.to_string(),
            })?;
            let fault_related =
                parse_flag(&row.fault_related).map_err(|reason| CorpusError::Gold { line, reason })?;
            set.push(
                GoldLabel {
                    repo: row.repo,
                    number: row.number,
                    fault_related,
                    symptom_leaf: non_empty(row.symptom_leaf_id),
                    root_cause: non_empty(row.root_cause_id),
                },
                line,
            )?;
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(BufReader::new(file))
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["repo", "number", "fault_related", "symptom_leaf_id", "root_cause_id"])?;
        for l in &self.labels {
            w.write_record([
                l.repo.as_str(),
                &l.number.to_string(),
                match l.fault_related {
                    Some(true) => "true",
                    Some(false) => "false",
                    None => "",
                },
                l.symptom_leaf.as_deref().unwrap_or(""),
                l.root_cause.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Checks that every taxonomy id names a node of the matching taxonomy.
    pub fn validate_ids(&self, symptoms: &Taxonomy, root_causes: &Taxonomy) -> Result<(), CorpusError> {
        for (i, l) in self.labels.iter().enumerate() {
            let checks = [
                (l.symptom_leaf.as_deref(), symptoms, "symptom_leaf_id"),
                (l.root_cause.as_deref(), root_causes, "root_cause_id"),
            ];
            for (id, tax, column) in checks {
                if let Some(id) = id {
                    if tax.get(id).is_none() {
                        return Err(CorpusError::Gold {
                            line: i + 2,
                            reason: format!("{column} `{id}` for {} is not in the taxonomy", l.key()),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &IssueKey) -> Option<&GoldLabel> {
        self.index.get(key).map(|&i| &self.labels[i])
    }

    pub fn labels(&self) -> &[GoldLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
