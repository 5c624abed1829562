mod common;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use common::oracle::{CallCounter, Noise, Oracle, ScriptedProvider, REPAIR_MARKER};
use common::synth::{Synth, REPOS};
use common::{fixtures, taxonomies};
use faultloom_core::corpus::{import_dump, sample_balanced, CorpusSource, Provenance};
use faultloom_core::llm::{GatewayBuilder, Transcript, TranscriptEntry};
use faultloom_core::pipeline::PipelineConfig;
use faultloom_core::stage1::{build_define_prompt, propose_study, NameNormalizer, Stage1Error, StudyTheme};
use faultloom_core::stage2::{run_stage2, FilterCriteria};
use faultloom_core::stage3::{build_classification_prompt, classify, run_stage3};
use faultloom_core::{ChatClient, ChatRequest, ChatResponse, Corpus, Gateway, GoldSet, IssueRecord, LlmError, Mode};
use proptest::prelude::*;
use serde_json::json;

const MODEL: &str = "openai/gpt-4o";

/// Answers with the queued texts in order, repeating the last one.
struct Script {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl Script {
    fn new(replies: &[&str]) -> Self {
        Script {
            replies: Mutex::new(replies.iter().map(|s| s.to_string()).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    fn seen(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatClient for Script {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        let mut q = self.replies.lock().unwrap();
        let text = if q.len() > 1 { q.pop_front().unwrap() } else { q[0].clone() };
        Ok(ChatResponse::text(text))
    }
}

fn golden_theme() -> StudyTheme {
    PipelineConfig::load(fixtures().join("golden/config.toml"))
        .unwrap()
        .study
        .expect("golden config has a study section")
        .theme
}

fn golden_replay() -> Gateway {
    Gateway::replay(Transcript::load(fixtures().join("golden/transcript.jsonl")).unwrap())
}

fn corpus_of(records: Vec<IssueRecord>) -> Corpus {
    Corpus::new(
        records,
        Provenance {
            source: CorpusSource::Dump,
            fetched_at: chrono::DateTime::UNIX_EPOCH,
        },
    )
    .unwrap()
}

// ---- study definition

#[test]
fn replayed_define_names_tensorflow_js() {
    let out = propose_study(&golden_theme(), &golden_replay(), MODEL, &NameNormalizer::default()).unwrap();
    assert!(out.plan.projects.iter().any(|p| p.name == "TensorFlow.js"));
    assert!(!out.plan.research_questions.is_empty());
}

#[test]
fn replayed_duplicate_project_kept_once() {
    let theme = golden_theme();
    let plan = json!({
        "projects": [{"name": "Teachable Machine"}, {"name": "Magenta.js"}, {"name": "teachable  machine"}],
        "research_questions": ["What goes wrong?"]
    });
    let transcript = Transcript::from_entries(vec![TranscriptEntry {
        request_digest: build_define_prompt(&theme, MODEL).digest(),
        response: ChatResponse::text(plan.to_string()),
    }])
    .unwrap();
    let out = propose_study(&theme, &Gateway::replay(transcript), MODEL, &NameNormalizer::default()).unwrap();
    let names: Vec<&str> = out.plan.projects.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, ["Teachable Machine", "Magenta.js"]);
}

#[test]
fn prose_only_plan_fails_after_repairs() {
    let script = Script::new(&["I would pick some popular frameworks."]);
    let err = propose_study(&golden_theme(), &script, MODEL, &NameNormalizer::default()).unwrap_err();
    assert!(matches!(err, Stage1Error::Extraction { attempts: 3, .. }), "{err}");
    assert_eq!(script.seen().len(), 3);
    assert!(script.seen()[1].user_text.contains(REPAIR_MARKER));
}

// ---- issue filtering

fn golden_sample() -> (Corpus, FilterCriteria) {
    let corpus = import_dump(fixtures().join("corpus/labeled_600.jsonl")).unwrap();
    let gold = GoldSet::load(fixtures().join("corpus/gold_600.csv")).unwrap();
    let dir = fixtures().join("filter");
    (
        sample_balanced(&corpus, &gold, 250, 250, 2025).unwrap(),
        FilterCriteria::load(&dir.join("criteria.toml"), &dir.join("vocabulary.txt")).unwrap(),
    )
}

#[test]
fn replayed_filter_is_ordered_and_parallelism_blind() {
    let (sample, criteria) = golden_sample();
    let gateway = golden_replay();
    let serial = run_stage2(&sample, &criteria, &gateway, MODEL, 1);
    let wide = run_stage2(&sample, &criteria, &gateway, MODEL, 8);
    assert_eq!(serial.decisions.len(), 500);
    assert_eq!(serial.failures, 0);
    assert_eq!(serial.decisions, wide.decisions);
    let keys: Vec<_> = serial.decisions.iter().map(|d| d.issue.clone()).collect();
    assert_eq!(keys, sample.keys());
    for d in &serial.decisions {
        assert_eq!(d.is_fault, d.deterministic_passed() && d.llm_verdict == Some(true));
        if d.llm_verdict.is_none() {
            assert!(!d.is_fault);
        }
    }
}

#[test]
fn failing_issues_never_reach_the_model() {
    let (sample, criteria) = golden_sample();
    let counter = CallCounter::new(golden_replay());
    let out = run_stage2(&sample, &criteria, &counter, MODEL, 4);
    for d in out.decisions.iter().filter(|d| !d.deterministic_passed()) {
        assert_eq!(counter.calls(&d.issue), 0, "{}", d.issue);
        assert_eq!(d.llm_verdict, None);
    }
}

#[test]
fn empty_corpus_gives_no_decisions() {
    let (_, criteria) = golden_sample();
    let out = run_stage2(&corpus_of(vec![]), &criteria, &Script::new(&["{}"]), MODEL, 4);
    assert!(out.decisions.is_empty());
}

// ---- classification

fn one_issue() -> IssueRecord {
    Synth::new(1).fault_issue(REPOS[0], 42)
}

#[test]
fn leaf_names_make_a_valid_label() {
    let (s, r) = taxonomies();
    let script = Script::new(&[r#"{"symptom": "Memory Leak", "root_cause": "Unimplemented Operator", "rationale": "tensors kept"}"#]);
    let label = classify(&one_issue(), &s, &r, &script, MODEL).unwrap();
    assert!(label.valid);
    assert_eq!(label.attempts, 1);
    assert_eq!(s.get(label.symptom_leaf.as_deref().unwrap()).unwrap().name, "Memory Leak");
    assert_eq!(r.get(label.root_cause.as_deref().unwrap()).unwrap().name, "Unimplemented Operator");
}

#[test]
fn level_one_name_triggers_a_repair() {
    let (s, r) = taxonomies();
    let script = Script::new(&[
        r#"{"symptom": "Crash", "root_cause": "API Misuse", "rationale": "x"}"#,
        r#"{"symptom": "Out of Memory", "root_cause": "API Misuse", "rationale": "x"}"#,
    ]);
    let label = classify(&one_issue(), &s, &r, &script, MODEL).unwrap();
    assert!(label.valid);
    assert_eq!(label.attempts, 2);
    let seen = script.seen();
    assert!(seen[1].user_text.contains(REPAIR_MARKER));
    assert!(seen[1].user_text.contains("Crash"));
}

#[test]
fn unknown_name_exhausts_the_budget() {
    let (s, r) = taxonomies();
    let script = Script::new(&[r#"{"symptom": "Quantum Error", "root_cause": "API Misuse", "rationale": "?"}"#]);
    let label = classify(&one_issue(), &s, &r, &script, MODEL).unwrap();
    assert!(!label.valid);
    assert_eq!(label.attempts, 3);
    assert_eq!(script.seen().len(), 3);
    assert!(label.raw_output.as_deref().unwrap().contains("Quantum Error"));
    // distinct retries must not collapse onto one transcript entry
    let digests: std::collections::HashSet<_> = script.seen().iter().map(|r| r.digest()).collect();
    assert_eq!(digests.len(), 3);
}

#[test]
fn one_missing_digest_in_684_is_isolated() {
    let (s, r) = taxonomies();
    let mut synth = Synth::new(684);
    let issues: Vec<IssueRecord> = (1..=684).map(|n| synth.fault_issue(REPOS[(n % 2) as usize], n)).collect();
    let oracle = Arc::new(Oracle::new(GoldSet::default(), s.clone(), r.clone(), Noise::None));
    let recorder = GatewayBuilder::new(Mode::Record)
        .provider(Arc::new(ScriptedProvider(oracle)))
        .transcript(Transcript::new())
        .build()
        .unwrap();
    let recorded = run_stage3(&issues, &s, &r, &recorder, MODEL, 8);
    assert_eq!(recorded.invalid, 0);

    let dropped = build_classification_prompt(&issues[99], &s, &r, MODEL).digest();
    let entries: Vec<TranscriptEntry> = recorder
        .transcript_entries()
        .into_iter()
        .filter(|e| e.request_digest != dropped)
        .collect();
    assert_eq!(entries.len(), 683);
    let replay = Gateway::replay(Transcript::from_entries(entries).unwrap());
    let out = run_stage3(&issues, &s, &r, &replay, MODEL, 8);
    assert_eq!(out.labels.len(), 684);
    assert_eq!(out.failures, 1);
    for (i, (issue, label)) in issues.iter().zip(&out.labels).enumerate() {
        assert_eq!(label.issue, issue.key());
        if i == 99 {
            assert!(!label.valid);
            assert!(label.error.as_deref().unwrap().starts_with("replay_miss"));
        } else {
            assert_eq!(label, &recorded.labels[i]);
        }
    }
}

#[test]
fn empty_batch_is_empty() {
    let (s, r) = taxonomies();
    assert!(run_stage3(&[], &s, &r, &Script::new(&["{}"]), MODEL, 2).labels.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_labels_sit_at_leaf_granularity(picks in proptest::collection::vec((0usize..40, 0usize..30), 1..4)) {
        let (s, r) = taxonomies();
        let s_names: Vec<String> = s.nodes().map(|n| n.name.clone()).chain(["Quantum Error".to_string()]).collect();
        let r_names: Vec<String> = r.nodes().map(|n| n.name.clone()).chain(["Gremlins".to_string()]).collect();
        let replies: Vec<String> = picks
            .iter()
            .map(|(a, b)| json!({"symptom": s_names[a % s_names.len()], "root_cause": r_names[b % r_names.len()], "rationale": "r"}).to_string())
            .collect();
        let refs: Vec<&str> = replies.iter().map(String::as_str).collect();
        let label = classify(&one_issue(), &s, &r, &Script::new(&refs), MODEL).unwrap();
        prop_assert!((1..=3).contains(&label.attempts));
        if label.valid {
            prop_assert_eq!(s.ancestors_of(label.symptom_leaf.as_deref().unwrap()).unwrap().len(), 3);
            prop_assert_eq!(r.ancestors_of(label.root_cause.as_deref().unwrap()).unwrap().len(), 2);
        }
    }
}
