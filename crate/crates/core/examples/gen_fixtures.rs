//! Regenerates the shipped fixtures under `crates/core/fixtures`.
//!
//! Everything is seeded, so a rerun reproduces the files byte for byte.
//!
//!     cargo run -p faultloom-core --example gen_fixtures

#[path = "../tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use common::oracle::{fixture_plan, AdversaryClient, Adversary, Noise, Oracle, ScriptedProvider, REFERENCE_PROJECTS};
use common::synth::{labeled_corpus, wild_corpus, Synth, VOCABULARY, REPOS};
use faultloom_core::corpus::{sample_balanced, Corpus, CorpusSource, Provenance};
use faultloom_core::llm::{GatewayBuilder, GatewayConfig, RetryPolicy, Transcript};
use faultloom_core::pipeline::{Overrides, Pipeline, PipelineConfig, Services};
use faultloom_core::stage3::{build_classification_prompt, run_stage3};
use faultloom_core::{Gateway, IssueRecord, Mode};

const MODEL: &str = "openai/gpt-4o";

fn write(path: &Path, bytes: impl AsRef<[u8]>) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, bytes).unwrap();
    println!("wrote {}", path.display());
}

fn dump(records: Vec<IssueRecord>) -> Vec<u8> {
    let corpus = Corpus::new(
        records,
        Provenance {
            source: CorpusSource::Dump,
            fetched_at: chrono::DateTime::UNIX_EPOCH,
        },
    )
    .expect("synthetic records are valid");
    let mut out = Vec::new();
    corpus.write_dump(&mut out).unwrap();
    out
}

fn recording_gateway(provider: Arc<dyn faultloom_core::llm::Provider>, transcript: &Path) -> Gateway {
    let _ = fs::remove_file(transcript);
    GatewayBuilder::new(Mode::Record)
        .config(GatewayConfig {
            retry: RetryPolicy::immediate(1),
            ..GatewayConfig::default()
        })
        .provider(provider)
        .transcript(Transcript::open_for_recording(transcript).unwrap())
        .build()
        .unwrap()
}

fn main() {
    let root = common::fixtures();
    let (symptoms, root_causes) = common::taxonomies();

    let mut vocab = String::from(
        "# Illustrative domain vocabulary (one term per line).\n\
         # Stand-in for a study's own keyword list; swap in the real list for live runs.\n",
    );
    for t in VOCABULARY {
        vocab.push_str(t);
        vocab.push('\n');
    }
    write(&root.join("filter/vocabulary.txt"), vocab);
    write(
        &root.join("filter/criteria.toml"),
        "exclusion_labels = [\"stat:awaiting response\"]\n\
         cutoff_date = \"2020-01-01\"\n\
         require_answered = true\n\n\
         [comment_budget]\n\
         max_comments = 20\n\
         max_chars = 8000\n",
    );

    // frozen after the first reviewed render; delete the file to re-freeze
    let outline = root.join("taxonomy/symptom_outline.txt");
    if !outline.exists() {
        write(&outline, symptoms.render_prompt_section());
    }

    write(&root.join("corpus/wild_500.jsonl"), dump(wild_corpus(500, 500)));

    let (records, gold) = labeled_corpus(600, 300, 300, &symptoms, &root_causes);
    let sample = sample_balanced(
        &Corpus::new(records.clone(), Provenance { source: CorpusSource::Dump, fetched_at: chrono::DateTime::UNIX_EPOCH }).unwrap(),
        &gold,
        250,
        250,
        2025,
    )
    .unwrap();
    let keys: String = sample.keys().iter().map(|k| format!("{k}\n")).collect();
    write(&root.join("corpus/sample_seed2025.keys"), keys);
    write(&root.join("corpus/labeled_600.jsonl"), dump(records));
    let mut gold_csv = Vec::new();
    gold.write_csv(&mut gold_csv).unwrap();
    write(&root.join("corpus/gold_600.csv"), gold_csv);

    let mut reference = String::from("# Reference project selection for study-definition scoring\n");
    for r in REFERENCE_PROJECTS {
        reference.push_str(r);
        reference.push('\n');
    }
    write(&root.join("study/reference.txt"), reference);
    write(
        &root.join("study/plan.json"),
        serde_json::to_string_pretty(&fixture_plan()).unwrap() + "\n",
    );

    // golden end-to-end run, recorded from a deterministic imperfect oracle
    let golden = root.join("golden");
    write(
        &golden.join("config.toml"),
        format!(
            "model_id = \"{MODEL}\"\n\
             mode = \"replay\"\n\
             transcript = \"transcript.jsonl\"\n\
             parallelism = 4\n\
             output_dir = \"../../../../target/golden-run\"\n\
             classify_input = \"filtered\"\n\
             gold = \"../corpus/gold_600.csv\"\n\n\
             [corpus]\n\
             dumps = [\"../corpus/labeled_600.jsonl\"]\n\n\
             [criteria]\n\
             file = \"../filter/criteria.toml\"\n\
             vocabulary = \"../filter/vocabulary.txt\"\n\n\
             [taxonomy]\n\
             symptom = \"../taxonomy/symptom.json\"\n\
             root_cause = \"../taxonomy/root_cause.json\"\n\n\
             [sampling]\n\
             n_pos = 250\n\
             n_neg = 250\n\
             seed = 2025\n\n\
             [study]\n\
             description = \"Faults in JavaScript-based deep learning frameworks and the applications built on them\"\n\
             constraints = [\"open-source projects with public issue trackers\", \"issues reported from 2020 onward\"]\n\
             reference = \"../study/reference.txt\"\n"
        ),
    );
    let transcript = golden.join("transcript.jsonl");
    let oracle = Arc::new(Oracle::new(gold.clone(), symptoms.clone(), root_causes.clone(), Noise::Golden));
    let gateway = Arc::new(recording_gateway(Arc::new(ScriptedProvider(oracle)), &transcript));
    let out = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::load(golden.join("config.toml")).unwrap();
    // recording must be single-threaded so the transcript order is reproducible
    config.apply(&Overrides {
        mode: Some(Mode::Record),
        parallelism: Some(1),
        output_dir: Some(out.path().to_path_buf()),
        ..Default::default()
    });
    let report = Pipeline::open(config, Services::default().with_client(gateway.clone()))
        .unwrap()
        .run()
        .unwrap();
    println!(
        "recorded {} transcript entries; stage II accuracy {}",
        gateway.transcript_len(),
        report.stage2.as_ref().map(|s| s.accuracy.to_string()).unwrap_or_default()
    );

    // repair-budget fixture
    let mut s = Synth::new(3);
    let issues: Vec<IssueRecord> = (1..=16).map(|n| s.fault_issue(REPOS[0], n)).collect();
    write(&root.join("stage3/adversarial_issues.jsonl"), dump(issues.clone()));
    let adv_path = root.join("stage3/adversarial_transcript.jsonl");
    let adversary = Arc::new(AdversaryClient::new(symptoms.clone(), root_causes.clone()));
    let gateway = recording_gateway(Arc::new(ScriptedProvider(adversary)), &adv_path);
    run_stage3(&issues, &symptoms, &root_causes, &gateway, MODEL, 1);
    drop(gateway);
    let dropped: Vec<String> = issues
        .iter()
        .filter(|i| Adversary::for_issue(i.number) == Adversary::Missing)
        .map(|i| build_classification_prompt(i, &symptoms, &root_causes, MODEL).digest())
        .collect();
    let recorded = Transcript::load(&adv_path).unwrap();
    let kept = Transcript::from_entries(
        recorded
            .entries()
            .iter()
            .filter(|e| !dropped.contains(&e.request_digest))
            .cloned()
            .collect(),
    )
    .unwrap();
    let mut bytes = Vec::new();
    kept.write(&mut bytes).unwrap();
    write(&adv_path, bytes);
}
