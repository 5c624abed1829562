use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DateWindow;
use crate::llm::{split_model_id, Mode};
use crate::stage1::StudyTheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: {field} points at {path}, which does not exist")]
    MissingFile { field: &'static str, path: String },
}

/// Which issues stage III classifies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyInput {
    /// Issues the filter marked fault-related.
    #[default]
    Filtered,
    /// Sampled issues whose gold label says fault-related, bypassing the filter.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// `owner/name` repositories to mine.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repos: Vec<String>,
    /// Pre-collected dumps, concatenated in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dumps: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl CorpusSection {
    pub fn date_window(&self) -> Option<DateWindow> {
        self.window.as_ref().map(|w| DateWindow::new(w.start, w.end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaSection {
    pub file: PathBuf,
    pub vocabulary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomySection {
    pub symptom: PathBuf,
    pub root_cause: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(flatten)]
    pub theme: StudyTheme,
    /// Reference project list, one name per line.
    pub reference: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

fn default_in_flight() -> usize {
    4
}

fn default_attempts() -> u32 {
    4
}

fn default_parallelism() -> usize {
    4
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection {
            max_in_flight: default_in_flight(),
            requests_per_minute: None,
            max_attempts: default_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_id: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub classify_input: ClassifyInput,
    pub gold: PathBuf,
    pub corpus: CorpusSection,
    pub criteria: CriteriaSection,
    pub taxonomy: TaxonomySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub gateway: GatewaySection,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub model_id: Option<String>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            reason: e.to_string(),
        })
    }

    /// Reads a config file; relative paths inside it are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        resolve(base, &mut self.gold);
        if let Some(t) = &mut self.transcript {
            resolve(base, t);
        }
        for d in &mut self.corpus.dumps {
            resolve(base, d);
        }
        if let Some(c) = &mut self.corpus.cache_dir {
            resolve(base, c);
        }
        resolve(base, &mut self.criteria.file);
        resolve(base, &mut self.criteria.vocabulary);
        resolve(base, &mut self.taxonomy.symptom);
        resolve(base, &mut self.taxonomy.root_cause);
        if let Some(s) = &mut self.study {
            resolve(base, &mut s.reference);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(m) = &o.model_id {
            self.model_id = m.clone();
        }
        if let (Some(seed), Some(s)) = (o.seed, &mut self.sampling) {
            s.seed = seed;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(out) = &o.output_dir {
            self.output_dir = out.clone();
        }
    }

    /// Checks the invariants that do not depend on the stage being run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1".into());
        }
        if split_model_id(&self.model_id).is_none() {
            return invalid(format!("model_id `{}` is not <provider>/<model>", self.model_id));
        }
        if self.mode == Mode::Replay && self.transcript.is_none() {
            return invalid("mode = \"replay\" requires a transcript path".into());
        }
        match (self.corpus.repos.is_empty(), self.corpus.dumps.is_empty()) {
            (true, true) => return invalid("corpus needs either repos or dumps".into()),
            (false, false) => return invalid("corpus takes repos or dumps, not both".into()),
            (false, true) => match &self.corpus.window {
                None => return invalid("corpus.repos requires corpus.window".into()),
                Some(w) if w.start > w.end => return invalid("corpus.window starts after it ends".into()),
                Some(_) => {}
            },
            (true, false) => {}
        }
        if self.gateway.max_in_flight == 0 || self.gateway.max_attempts == 0 {
            return invalid("gateway limits must be positive".into());
        }

        let mut files: Vec<(&'static str, &Path)> = vec![
            ("gold", &self.gold),
            ("criteria.file", &self.criteria.file),
            ("criteria.vocabulary", &self.criteria.vocabulary),
            ("taxonomy.symptom", &self.taxonomy.symptom),
            ("taxonomy.root_cause", &self.taxonomy.root_cause),
        ];
        files.extend(self.corpus.dumps.iter().map(|d| ("corpus.dumps", d.as_path())));
        if let Some(s) = &self.study {
            files.push(("study.reference", &s.reference));
        }
        if let (Mode::Replay, Some(t)) = (self.mode, &self.transcript) {
            files.push(("transcript", t));
        }
        for (field, path) in files {
            if !path.is_file() {
                return Err(ConfigError::MissingFile {
                    field,
                    path: path.display().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}
