//! Stage sequencing, artifact persistence and resumability.
//!
//! Every stage reads its inputs from the run directory, writes its outputs
//! atomically, and records a manifest holding the hash of everything it
//! depended on. A stage whose manifest matches is skipped.

pub mod artifacts;
mod config;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{
    fetch_many, import_dump, sample_balanced, Corpus, CorpusSource, FetchConfig,
    GoldSet, IssueFetcher, Provenance,
};
use crate::eval::{
    partition_by_gold, score_stage2, score_stage3, EvalReport, PlanReport, Rate, RunMeta,
    StageTiming,
};
use crate::http::{HttpTransport, UreqTransport};
use crate::llm::{
    canonical_json, ChatClient, Gateway, GatewayBuilder, GatewayConfig, LlmError, Mode,
    RetryPolicy, Transcript, UsageLedger,
};
use crate::stage1::{propose_study, score_plan, NameNormalizer};
use crate::stage2::{parse_word_list, run_stage2, FilterCriteria, FilterDecision};
use crate::stage3::{run_stage3, FaultLabel};
use crate::taxonomy::{load_taxonomy, Taxonomy};

use artifacts::{file_digest, sha256_hex, ManifestState, OpenError, RunDir, StageManifest};
pub use config::{
    ClassifyInput, ConfigError, CorpusSection, CriteriaSection, GatewaySection, Overrides,
    PipelineConfig, SamplingSection, StudySection, TaxonomySection, WindowSection,
};
pub use report::{render, RenderedFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Import,
    Sample,
    Define,
    Filter,
    Classify,
    Evaluate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Import => "import",
            Stage::Sample => "sample",
            Stage::Define => "define",
            Stage::Filter => "filter",
            Stage::Classify => "classify",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Manifest name; both corpus sources produce the same artifact.
    fn manifest(self) -> &'static str {
        match self {
            Stage::Ingest | Stage::Import => "corpus",
            other => other.name(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn describe_last(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run directory is locked by another pipeline ({0}); delete the file if no run is active")]
    Locked(PathBuf),
    #[error("cannot start: {0}")]
    Startup(#[source] LlmError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("`{stage}` needs {artifact} at {path}; run `{producer}` first")]
    MissingArtifact {
        stage: Stage,
        artifact: &'static str,
        producer: &'static str,
        path: PathBuf,
    },
    #[error("`{stage}` already completed in {dir} with different inputs; run artifacts are append-only, use a fresh output directory")]
    Stale { stage: Stage, dir: PathBuf },
    #[error("stage `{stage}` failed: {reason} (last persisted artifact: {})", describe_last(.last_artifact))]
    Stage {
        stage: Stage,
        reason: String,
        last_artifact: Option<PathBuf>,
    },
}

/// External effects the pipeline depends on; swapped out in tests.
#[derive(Clone)]
pub struct Services {
    pub transport: Arc<dyn HttpTransport>,
    /// Bypasses gateway construction entirely when set.
    pub client: Option<Arc<dyn ChatClient>>,
}

impl Default for Services {
    fn default() -> Self {
        Services {
            transport: Arc::new(UreqTransport::default()),
            client: None,
        }
    }
}

impl Services {
    pub fn with_transport(transport: Arc<dyn HttpTransport>) -> Self {
        Services {
            transport,
            client: None,
        }
    }

    pub fn with_client(mut self, client: Arc<dyn ChatClient>) -> Self {
        self.client = Some(client);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub artifacts: Vec<PathBuf>,
}

struct StageWork {
    outputs: Vec<(&'static str, Vec<u8>)>,
    items: u64,
    usage: UsageLedger,
    failures: u64,
    invalid: u64,
}

impl StageWork {
    fn new(outputs: Vec<(&'static str, Vec<u8>)>, items: usize) -> Self {
        StageWork {
            outputs,
            items: items as u64,
            usage: UsageLedger::default(),
            failures: 0,
            invalid: 0,
        }
    }
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("artifact serializes");
        out.push(b'\n');
    }
    out
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))
        })
        .collect()
}

fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

fn digest_of(path: &Path) -> Result<String, String> {
    file_digest(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Order in which stages persist artifacts, for error reporting.
const STAGE_ORDER: [&str; 6] = ["corpus", "sample", "define", "filter", "classify", "evaluate"];

pub struct Pipeline {
    config: PipelineConfig,
    services: Services,
    run: RunDir,
    client: Option<Arc<dyn ChatClient>>,
    gateway: Option<Arc<Gateway>>,
}

impl Pipeline {
    /// Validates the config, locks the output directory and snapshots the config.
    pub fn open(config: PipelineConfig, services: Services) -> Result<Self, PipelineError> {
        config.validate()?;
        let run = RunDir::open(&config.output_dir).map_err(|e| match e {
            OpenError::Locked(p) => PipelineError::Locked(p),
            OpenError::Io(path, source) => PipelineError::Io { path, source },
        })?;
        run.write(artifacts::CONFIG_SNAPSHOT, config.to_toml().as_bytes())
            .map_err(|source| PipelineError::Io {
                path: run.path(artifacts::CONFIG_SNAPSHOT),
                source,
            })?;
        Ok(Pipeline {
            config,
            services,
            run,
            client: None,
            gateway: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        self.run.root()
    }

    /// Provider attempts made through the built-in gateway (zero in replay mode
    /// and when a client was injected).
    pub fn provider_attempts(&self) -> usize {
        self.gateway.as_ref().map_or(0, |g| g.provider_attempts())
    }

    fn build_gateway(&self) -> Result<Gateway, LlmError> {
        let c = &self.config;
        let gateway_config = GatewayConfig {
            retry: RetryPolicy {
                max_attempts: c.gateway.max_attempts,
                ..RetryPolicy::default()
            },
            max_in_flight: c.gateway.max_in_flight,
            requests_per_minute: c.gateway.requests_per_minute,
        };
        let builder = GatewayBuilder::new(c.mode).config(gateway_config);
        let models = [c.model_id.clone()];
        let transport = self.services.transport.clone();
        let builder = match c.mode {
            Mode::Replay => {
                let path = c.transcript.as_ref().expect("validated: replay has a transcript");
                builder.transcript(Transcript::load(path)?)
            }
            Mode::Record => {
                let path = c
                    .transcript
                    .clone()
                    .unwrap_or_else(|| self.run.path(artifacts::TRANSCRIPT));
                builder
                    .providers_from_env(&models, transport)?
                    .transcript(Transcript::open_for_recording(path)?)
            }
            Mode::Live => builder.providers_from_env(&models, transport)?,
        };
        builder.build()
    }

    /// The chat client, built on first use. Fails fast on missing credentials.
    pub fn client(&mut self) -> Result<Arc<dyn ChatClient>, PipelineError> {
        if let Some(c) = &self.client {
            return Ok(c.clone());
        }
        let client = match &self.services.client {
            Some(c) => c.clone(),
            None => {
                let g = Arc::new(self.build_gateway().map_err(PipelineError::Startup)?);
                self.gateway = Some(g.clone());
                g
            }
        };
        self.client = Some(client.clone());
        Ok(client)
    }

    fn last_persisted(&self) -> Option<PathBuf> {
        STAGE_ORDER.iter().rev().find_map(|s| {
            let m = self.run.read_manifest(s)?;
            m.outputs.last().map(|(rel, _)| self.run.path(rel))
        })
    }

    fn fail(&self, stage: Stage, reason: impl fmt::Display) -> PipelineError {
        PipelineError::Stage {
            stage,
            reason: reason.to_string(),
            last_artifact: self.last_persisted(),
        }
    }

    fn upstream(
        &self,
        stage: Stage,
        producer: Stage,
        rel: &'static str,
    ) -> Result<(PathBuf, String), PipelineError> {
        let path = self.run.path(rel);
        match self.run.completed_artifact(producer.manifest(), rel) {
            Some(hash) => Ok((path, hash)),
            None => Err(PipelineError::MissingArtifact {
                stage,
                artifact: rel,
                producer: match producer {
                    Stage::Ingest | Stage::Import => "ingest` or `import",
                    other => other.name(),
                },
                path,
            }),
        }
    }

    fn run_stage(
        &self,
        stage: Stage,
        params: Value,
        exec: impl FnOnce() -> Result<StageWork, String>,
    ) -> Result<StageOutcome, PipelineError> {
        let input_hash = sha256_hex(
            canonical_json(&json!({ "stage": stage.manifest(), "params": params })).as_bytes(),
        );
        match self.run.manifest_state(stage.manifest(), &input_hash) {
            ManifestState::Current(m) => {
                tracing::info!(stage = stage.name(), "inputs unchanged, skipping");
                return Ok(StageOutcome {
                    stage,
                    skipped: true,
                    artifacts: m.outputs.iter().map(|(rel, _)| self.run.path(rel)).collect(),
                });
            }
            ManifestState::Stale(_) => {
                return Err(PipelineError::Stale {
                    stage,
                    dir: self.run.root().to_path_buf(),
                })
            }
            ManifestState::Damaged(rel) => {
                tracing::warn!(stage = stage.name(), "artifact {rel} changed since it was written; redoing stage");
            }
            ManifestState::Missing => {}
        }

        tracing::info!(stage = stage.name(), "running");
        let started = Instant::now();
        let work = exec().map_err(|reason| self.fail(stage, reason))?;
        let wall_time_ms = started.elapsed().as_millis() as u64;

        let mut outputs = Vec::new();
        for (rel, bytes) in &work.outputs {
            let hash = self
                .run
                .write(rel, bytes)
                .map_err(|e| self.fail(stage, format!("writing {rel}: {e}")))?;
            outputs.push((rel.to_string(), hash));
        }
        let manifest = StageManifest {
            stage: stage.manifest().to_string(),
            input_hash,
            outputs,
            wall_time_ms,
            items: work.items,
            usage: work.usage,
            failures: work.failures,
            invalid: work.invalid,
        };
        self.run
            .write_manifest(&manifest)
            .map_err(|e| self.fail(stage, format!("writing manifest: {e}")))?;
        tracing::info!(stage = stage.name(), items = manifest.items, wall_time_ms, "done");
        Ok(StageOutcome {
            stage,
            skipped: false,
            artifacts: manifest.outputs.iter().map(|(rel, _)| self.run.path(rel)).collect(),
        })
    }

    /// Ingests or imports, whichever the config's corpus section describes.
    pub fn collect(&mut self) -> Result<StageOutcome, PipelineError> {
        if self.config.corpus.dumps.is_empty() {
            self.ingest()
        } else {
            self.import()
        }
    }

    pub fn import(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Import;
        let dumps = &self.config.corpus.dumps;
        if dumps.is_empty() {
            return Err(ConfigError::Invalid("`import` needs corpus.dumps".into()).into());
        }
        let digests = dumps
            .iter()
            .map(|d| digest_of(d))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| self.fail(stage, e))?;
        self.run_stage(stage, json!({ "source": "dump", "dumps": digests }), || {
            let mut records = Vec::new();
            for d in dumps {
                records.extend(import_dump(d).map_err(|e| e.to_string())?.into_records());
            }
            let fetched_at = records
                .iter()
                .map(|r| r.updated_at)
                .max()
                .unwrap_or(chrono::DateTime::UNIX_EPOCH);
            let corpus = Corpus::new(
                records,
                Provenance {
                    source: CorpusSource::Dump,
                    fetched_at,
                },
            )
            .map_err(|e| e.to_string())?;
            let mut bytes = Vec::new();
            corpus.write_dump(&mut bytes).map_err(|e| e.to_string())?;
            Ok(StageWork::new(vec![(artifacts::CORPUS, bytes)], corpus.len()))
        })
    }

    pub fn ingest(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Ingest;
        let c = &self.config.corpus;
        let window = match (c.repos.is_empty(), c.date_window()) {
            (false, Some(w)) => w,
            _ => {
                return Err(ConfigError::Invalid("`ingest` needs corpus.repos and corpus.window".into()).into())
            }
        };
        let mut fetch = FetchConfig::default();
        if let Some(base) = &c.api_base {
            fetch.api_base = base.clone();
        }
        fetch.cache_dir = Some(c.cache_dir.clone().unwrap_or_else(|| self.run.path("cache")));
        let params = json!({
            "source": "live",
            "repos": c.repos,
            "window": [window.start.to_string(), window.end.to_string()],
            "api_base": fetch.api_base,
        });
        let transport = self.services.transport.clone();
        let parallelism = self.config.parallelism;
        self.run_stage(stage, params, || {
            let fetcher = IssueFetcher::from_env(&*transport, fetch);
            let corpus = fetch_many(&fetcher, &c.repos, &window, parallelism).map_err(|e| e.to_string())?;
            tracing::info!(requests = fetcher.requests_issued(), records = corpus.len(), "ingested");
            let mut bytes = Vec::new();
            corpus.write_dump(&mut bytes).map_err(|e| e.to_string())?;
            Ok(StageWork::new(vec![(artifacts::CORPUS, bytes)], corpus.len()))
        })
    }

    pub fn sample(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Sample;
        let (corpus_path, corpus_hash) = self.upstream(stage, Stage::Import, artifacts::CORPUS)?;
        let gold_path = &self.config.gold;
        let gold_hash = digest_of(gold_path).map_err(|e| self.fail(stage, e))?;
        let sampling = self.config.sampling;
        let params = json!({ "corpus": corpus_hash, "gold": gold_hash, "sampling": sampling });
        self.run_stage(stage, params, || {
            let corpus = import_dump(&corpus_path).map_err(|e| e.to_string())?;
            let sample = match sampling {
                Some(s) => {
                    let gold = GoldSet::load(gold_path).map_err(|e| e.to_string())?;
                    sample_balanced(&corpus, &gold, s.n_pos, s.n_neg, s.seed).map_err(|e| e.to_string())?
                }
                None => corpus,
            };
            let mut bytes = Vec::new();
            sample.write_dump(&mut bytes).map_err(|e| e.to_string())?;
            Ok(StageWork::new(vec![(artifacts::SAMPLE, bytes)], sample.len()))
        })
    }

    pub fn define(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Define;
        let Some(study) = self.config.study.clone() else {
            return Err(ConfigError::Invalid("`define` needs a [study] section".into()).into());
        };
        let reference_text = std::fs::read_to_string(&study.reference)
            .map_err(|e| self.fail(stage, format!("{}: {e}", study.reference.display())))?;
        let reference = parse_word_list(&reference_text);
        let normalizer = NameNormalizer::default();
        let model_id = self.config.model_id.clone();
        let params = json!({
            "theme": study.theme,
            "reference": reference,
            "normalizer": normalizer,
            "model_id": model_id,
        });
        let client = self.client()?;
        self.run_stage(stage, params, || {
            let outcome = propose_study(&study.theme, &*client, &model_id, &normalizer)
                .map_err(|e| e.to_string())?;
            let score = score_plan(&outcome.plan, &reference, &normalizer).map_err(|e| e.to_string())?;
            let report = PlanReport {
                recall: Rate(score.recall),
                hits: score.hits,
                misses: score.misses,
                extras: score.extras,
                research_questions: outcome.plan.research_questions.clone(),
                note: "recall of proposed projects against the configured reference list; \
                       names compared after case folding, punctuation removal and js-suffix stripping"
                    .into(),
            };
            let mut work = StageWork::new(
                vec![
                    (artifacts::PLAN, pretty_json(&outcome.plan)),
                    (artifacts::PLAN_SCORE, pretty_json(&report)),
                ],
                outcome.plan.projects.len(),
            );
            work.usage.per_model.insert(model_id.clone(), outcome.usage);
            Ok(work)
        })
    }

    pub fn filter(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Filter;
        let (sample_path, sample_hash) = self.upstream(stage, Stage::Sample, artifacts::SAMPLE)?;
        let criteria = FilterCriteria::load(&self.config.criteria.file, &self.config.criteria.vocabulary)
            .map_err(|e| self.fail(stage, e))?;
        let model_id = self.config.model_id.clone();
        let parallelism = self.config.parallelism;
        let params = json!({ "sample": sample_hash, "criteria": criteria, "model_id": model_id });
        let client = self.client()?;
        self.run_stage(stage, params, || {
            let sample = import_dump(&sample_path).map_err(|e| e.to_string())?;
            let out = run_stage2(&sample, &criteria, &*client, &model_id, parallelism);
            let mut work = StageWork::new(vec![(artifacts::STAGE2, to_jsonl(&out.decisions))], out.decisions.len());
            work.usage = out.usage;
            work.failures = out.failures as u64;
            work.invalid = out.decisions.iter().filter(|d| d.parse_failed).count() as u64;
            Ok(work)
        })
    }

    fn taxonomies(&self, stage: Stage) -> Result<(Taxonomy, Taxonomy), PipelineError> {
        let s = load_taxonomy(&self.config.taxonomy.symptom).map_err(|e| self.fail(stage, e))?;
        let r = load_taxonomy(&self.config.taxonomy.root_cause).map_err(|e| self.fail(stage, e))?;
        Ok((s, r))
    }

    pub fn classify(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Classify;
        let (sample_path, sample_hash) = self.upstream(stage, Stage::Sample, artifacts::SAMPLE)?;
        let selector = match self.config.classify_input {
            ClassifyInput::Filtered => {
                let (p, h) = self.upstream(stage, Stage::Filter, artifacts::STAGE2)?;
                (p, h)
            }
            ClassifyInput::Gold => {
                let p = self.config.gold.clone();
                let h = digest_of(&p).map_err(|e| self.fail(stage, e))?;
                (p, h)
            }
        };
        let (symptoms, root_causes) = self.taxonomies(stage)?;
        let model_id = self.config.model_id.clone();
        let parallelism = self.config.parallelism;
        let input = self.config.classify_input;
        let params = json!({
            "sample": sample_hash,
            "input": input,
            "selector": selector.1,
            "symptom_taxonomy": symptoms.to_document(),
            "root_cause_taxonomy": root_causes.to_document(),
            "model_id": model_id,
        });
        let client = self.client()?;
        self.run_stage(stage, params, || {
            let sample = import_dump(&sample_path).map_err(|e| e.to_string())?;
            let selected = match input {
                ClassifyInput::Filtered => {
                    let decisions: Vec<FilterDecision> = read_jsonl(&selector.0)?;
                    let positives: std::collections::HashSet<_> =
                        decisions.into_iter().filter(|d| d.is_fault).map(|d| d.issue).collect();
                    sample.filtered(|r| positives.contains(&r.key()))
                }
                ClassifyInput::Gold => {
                    let gold = GoldSet::load(&selector.0).map_err(|e| e.to_string())?;
                    sample.filtered(|r| gold.get(&r.key()).and_then(|g| g.fault_related) == Some(true))
                }
            };
            let out = run_stage3(selected.records(), &symptoms, &root_causes, &*client, &model_id, parallelism);
            let mut work = StageWork::new(vec![(artifacts::STAGE3, to_jsonl(&out.labels))], out.labels.len());
            work.usage = out.usage;
            work.failures = out.failures as u64;
            work.invalid = out.invalid as u64;
            Ok(work)
        })
    }

    pub fn evaluate(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Evaluate;
        let (stage2_path, stage2_hash) = self.upstream(stage, Stage::Filter, artifacts::STAGE2)?;
        let (stage3_path, stage3_hash) = self.upstream(stage, Stage::Classify, artifacts::STAGE3)?;
        let plan_score = if self.config.study.is_some() {
            Some(self.upstream(stage, Stage::Define, artifacts::PLAN_SCORE)?)
        } else {
            None
        };
        let gold_hash = digest_of(&self.config.gold).map_err(|e| self.fail(stage, e))?;
        let (symptoms, root_causes) = self.taxonomies(stage)?;
        let manifests: Vec<StageManifest> = STAGE_ORDER[..5]
            .iter()
            .filter_map(|s| self.run.read_manifest(s))
            .collect();
        let params = json!({
            "stage2": stage2_hash,
            "stage3": stage3_hash,
            "plan_score": plan_score.as_ref().map(|p| &p.1),
            "gold": gold_hash,
            "symptom_taxonomy": symptoms.to_document(),
            "root_cause_taxonomy": root_causes.to_document(),
            "manifests": manifests,
            "model_id": self.config.model_id,
            "mode": self.config.mode,
        });
        let gold_path = self.config.gold.clone();
        let meta = RunMeta {
            model_id: self.config.model_id.clone(),
            mode: format!("{:?}", self.config.mode).to_lowercase(),
            ..RunMeta::default()
        };
        self.run_stage(stage, params, || {
            let gold = GoldSet::load(&gold_path).map_err(|e| e.to_string())?;
            gold.validate_ids(&symptoms, &root_causes).map_err(|e| e.to_string())?;
            let decisions: Vec<FilterDecision> = read_jsonl(&stage2_path)?;
            let labels: Vec<FaultLabel> = read_jsonl(&stage3_path)?;
            let stage1 = match &plan_score {
                Some((p, _)) => Some(
                    serde_json::from_slice(&std::fs::read(p).map_err(|e| e.to_string())?)
                        .map_err(|e| format!("{}: {e}", p.display()))?,
                ),
                None => None,
            };
            let report = compose_report(
                stage1, &decisions, &labels, &gold, &symptoms, &root_causes, &manifests, meta,
            )?;
            Ok(StageWork::new(vec![(artifacts::EVAL, pretty_json(&report))], labels.len()))
        })
    }

    /// Re-renders report files from the evaluation artifact.
    pub fn report(&mut self) -> Result<StageOutcome, PipelineError> {
        let stage = Stage::Report;
        let (eval_path, _) = self.upstream(stage, Stage::Evaluate, artifacts::EVAL)?;
        let report = load_eval(&eval_path).map_err(|e| self.fail(stage, e))?;
        let mut written = Vec::new();
        for file in render(&report) {
            self.run
                .write(&file.rel_path, &file.contents)
                .map_err(|e| self.fail(stage, format!("writing {}: {e}", file.rel_path)))?;
            written.push(self.run.path(&file.rel_path));
        }
        Ok(StageOutcome {
            stage,
            skipped: false,
            artifacts: written,
        })
    }

    /// Runs every stage in order and returns the evaluation.
    pub fn run(&mut self) -> Result<EvalReport, PipelineError> {
        // credentials and transcripts are checked before any stage runs
        self.client()?;
        self.collect()?;
        self.sample()?;
        if self.config.study.is_some() {
            self.define()?;
        }
        self.filter()?;
        self.classify()?;
        self.evaluate()?;
        self.report()?;
        load_eval(&self.run.path(artifacts::EVAL)).map_err(|e| self.fail(Stage::Report, e))
    }

    /// Runs one named stage.
    pub fn run_one(&mut self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Import => self.import(),
            Stage::Sample => self.sample(),
            Stage::Define => self.define(),
            Stage::Filter => self.filter(),
            Stage::Classify => self.classify(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        }
    }
}

pub fn load_eval(path: &Path) -> Result<EvalReport, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

/// Loads config, applies overrides, and runs the full pipeline.
pub fn run_pipeline(config: PipelineConfig, services: Services) -> Result<EvalReport, PipelineError> {
    Pipeline::open(config, services)?.run()
}

#[allow(clippy::too_many_arguments)]
fn compose_report(
    stage1: Option<PlanReport>,
    decisions: &[FilterDecision],
    labels: &[FaultLabel],
    gold: &GoldSet,
    symptoms: &Taxonomy,
    root_causes: &Taxonomy,
    manifests: &[StageManifest],
    mut meta: RunMeta,
) -> Result<EvalReport, String> {
    let mut notes = Vec::new();

    let (scored2, unscored2) =
        partition_by_gold(decisions, |d| &d.issue, |g| g.fault_related.is_some(), gold);
    let scored2: Vec<FilterDecision> = scored2.into_iter().cloned().collect();
    let stage2 = if scored2.is_empty() {
        notes.push("stage II: no decision has a gold fault_related value; nothing scored".into());
        None
    } else {
        Some(score_stage2(&scored2, gold).map_err(|e| e.to_string())?)
    };

    if labels.is_empty() {
        notes.push(
            "stage III classified 0 issues (no filter decision had final=true); its sections are empty".into(),
        );
    }
    let score3 = |tax: &Taxonomy, has: fn(&crate::GoldLabel) -> bool| -> Result<_, String> {
        let (scored, unscored) = partition_by_gold(labels, |l| &l.issue, has, gold);
        let scored: Vec<FaultLabel> = scored.into_iter().cloned().collect();
        let scores = if scored.is_empty() {
            None
        } else {
            Some(score_stage3(&scored, gold, tax, tax.leaf_level()).map_err(|e| e.to_string())?)
        };
        Ok((scores, unscored))
    };
    let (stage3_symptom, unscored_s) = score3(symptoms, |g| g.symptom_leaf.is_some())?;
    let (stage3_rootcause, unscored_r) = score3(root_causes, |g| g.root_cause.is_some())?;

    for (what, n) in [
        ("stage II decisions", unscored2),
        ("stage III symptom labels", unscored_s),
        ("stage III root-cause labels", unscored_r),
    ] {
        if n > 0 {
            notes.push(format!("{n} {what} had no gold value and were excluded from scoring"));
        }
    }

    let mut usage = UsageLedger::default();
    for m in manifests {
        usage.merge(&m.usage);
        meta.stage_timings.push(StageTiming {
            stage: m.stage.clone(),
            wall_time_ms: m.wall_time_ms,
        });
        meta.wall_time_ms += m.wall_time_ms;
        match m.stage.as_str() {
            "filter" => meta.provider_failures += m.failures,
            "classify" => {
                meta.provider_failures += m.failures;
                meta.invalid_labels += m.invalid;
            }
            _ => {}
        }
    }
    let total = usage.total();
    meta.input_tokens = total.input_tokens;
    meta.output_tokens = total.output_tokens;
    meta.total_tokens = total.total_tokens();
    meta.usage = usage;
    meta.unscored_stage2 = unscored2;
    meta.unscored_stage3_symptom = unscored_s;
    meta.unscored_stage3_root_cause = unscored_r;

    Ok(EvalReport {
        stage1,
        stage2,
        stage3_symptom,
        stage3_rootcause,
        notes,
        run_meta: meta,
    })
}
