//! Scripted model stand-ins that answer from gold labels.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use faultloom_core::llm::{Provider, ProviderError};
use faultloom_core::{ChatClient, ChatRequest, ChatResponse, GoldSet, IssueKey, LlmError, Taxonomy};
use serde_json::json;

pub const REPAIR_MARKER: &str = "Your previous reply could not be used";

/// Plan proposed for the study-definition prompt.
pub fn fixture_plan() -> serde_json::Value {
    json!({
        "projects": [
            {"name": "TensorFlow.js", "url": "https://github.com/tensorflow/tfjs",
             "rationale": "the dominant JavaScript deep learning framework"},
            {"name": "Brain.js", "url": "https://github.com/BrainJS/brain.js",
             "rationale": "popular neural network library for JavaScript"},
            {"name": "ml5.js", "url": "https://github.com/ml5js/ml5-library",
             "rationale": "friendly wrapper used in creative coding"}
        ],
        "research_questions": [
            "What symptoms do faults in JavaScript deep learning frameworks exhibit?",
            "What root causes lie behind those faults?",
            "How do symptoms relate to root causes?"
        ]
    })
}

pub const REFERENCE_PROJECTS: [&str; 3] = [
    "TensorFlow.js",
    "third-party DL libraries",
    "58 JavaScript-based DL applications",
];

/// Issue key named by the `Repository:` / `Issue: #` lines of a prompt.
pub fn prompt_key(user_text: &str) -> Option<IssueKey> {
    let mut repo = None;
    let mut number = None;
    for line in user_text.lines() {
        if let Some(r) = line.strip_prefix("Repository: ") {
            repo.get_or_insert(r.trim().to_string());
        } else if let Some(n) = line.strip_prefix("Issue: #") {
            number.get_or_insert(n.trim().parse::<u64>().ok()?);
        }
        if repo.is_some() && number.is_some() {
            break;
        }
    }
    Some(IssueKey::new(repo?, number?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Define,
    Filter,
    Classify,
}

pub fn prompt_kind(user_text: &str) -> PromptKind {
    if user_text.contains("=== SYMPTOM TAXONOMY ===") {
        PromptKind::Classify
    } else if user_text.contains("\"fault_related\"") {
        PromptKind::Filter
    } else {
        PromptKind::Define
    }
}

fn response(request: &ChatRequest, text: String) -> ChatResponse {
    ChatResponse {
        input_tokens: (request.system_text.len() + request.user_text.len()) as u64 / 4 + 1,
        output_tokens: text.len() as u64 / 4 + 1,
        text,
        latency_ms: 0,
        provider_meta: Default::default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// Always the gold answer, first time.
    None,
    /// Deterministic mistakes and format slips keyed on the issue number.
    Golden,
}

pub struct Oracle {
    gold: GoldSet,
    symptoms: Taxonomy,
    root_causes: Taxonomy,
    noise: Noise,
    calls: AtomicUsize,
}

impl Oracle {
    pub fn new(gold: GoldSet, symptoms: Taxonomy, root_causes: Taxonomy, noise: Noise) -> Self {
        Oracle {
            gold,
            symptoms,
            root_causes,
            noise,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn name_of(tax: &Taxonomy, id: &str) -> String {
        tax.get(id).map(|n| n.name.clone()).unwrap_or_else(|| id.to_string())
    }

    fn shifted_leaf(tax: &Taxonomy, id: &str, by: usize) -> String {
        let leaves = tax.leaves();
        let i = leaves.iter().position(|n| n.id == id).unwrap_or(0);
        leaves[(i + by) % leaves.len()].name.clone()
    }

    fn wrap(&self, n: u64, body: String) -> String {
        match (self.noise, n % 3) {
            (Noise::Golden, 0) => format!("```json\n{body}\n```"),
            (Noise::Golden, 1) => format!("Here is my assessment.\n{body}\nLet me know if you need more detail."),
            _ => body,
        }
    }

    fn answer(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let user = &request.user_text;
        let kind = prompt_kind(user);
        if kind == PromptKind::Define {
            return Ok(fixture_plan().to_string());
        }
        let key = prompt_key(user)
            .ok_or_else(|| LlmError::InvalidRequest("prompt names no issue".into()))?;
        let gold = self.gold.get(&key);
        let repair = user.contains(REPAIR_MARKER);
        let golden = self.noise == Noise::Golden;
        let n = key.number;
        match kind {
            PromptKind::Filter => {
                if golden && n % 13 == 0 && !repair {
                    return Ok("This looks like a genuine bug in the WebGL backend.".into());
                }
                let mut verdict = gold.and_then(|g| g.fault_related).unwrap_or(false);
                if golden && n % 11 == 0 {
                    verdict = !verdict;
                }
                let body = json!({"fault_related": verdict, "rationale": "judged from the report text"});
                Ok(self.wrap(n, body.to_string()))
            }
            PromptKind::Classify => {
                let (s_id, r_id) = match gold {
                    Some(g) => (
                        g.symptom_leaf.clone().unwrap_or_else(|| self.symptoms.leaves()[0].id.clone()),
                        g.root_cause.clone().unwrap_or_else(|| self.root_causes.leaves()[0].id.clone()),
                    ),
                    None => (self.symptoms.leaves()[0].id.clone(), self.root_causes.leaves()[0].id.clone()),
                };
                let mut symptom = Self::name_of(&self.symptoms, &s_id);
                let mut cause = Self::name_of(&self.root_causes, &r_id);
                if golden {
                    if n % 7 == 0 {
                        symptom = Self::shifted_leaf(&self.symptoms, &s_id, 1);
                    }
                    if n % 5 == 0 {
                        cause = Self::shifted_leaf(&self.root_causes, &r_id, 3);
                    }
                    if n % 17 == 0 && !repair {
                        symptom = self.symptoms.ancestor_at(&s_id, 1).unwrap().name.clone();
                    }
                    if n % 23 == 0 {
                        symptom = "Quantum Error".into();
                    }
                }
                let body = json!({"symptom": symptom, "root_cause": cause, "rationale": "matches the reported behaviour"});
                Ok(self.wrap(n, body.to_string()))
            }
            PromptKind::Define => unreachable!(),
        }
    }
}

impl ChatClient for Oracle {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(response(request, self.answer(request)?))
    }
}

/// Lets a scripted client sit behind the gateway as a provider (for recording).
pub struct ScriptedProvider<C>(pub Arc<C>);

impl<C: ChatClient> Provider for ScriptedProvider<C> {
    fn name(&self) -> &str {
        "openai"
    }

    fn send(&self, _model: &str, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.0
            .complete(request)
            .map_err(|e| ProviderError::Rejected {
                status: 400,
                reason: e.to_string(),
            })
    }
}

/// Misbehaviour patterns for the repair-budget fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adversary {
    ValidFirst,
    MalformedThenValid,
    NonLeafThenValid,
    UnknownTwiceThenValid,
    AlwaysMalformed,
    AlwaysNonLeaf,
    AlwaysUnknown,
    /// Valid, but its first request is left out of the transcript.
    Missing,
}

impl Adversary {
    pub const ALL: [Adversary; 8] = [
        Adversary::ValidFirst,
        Adversary::MalformedThenValid,
        Adversary::NonLeafThenValid,
        Adversary::UnknownTwiceThenValid,
        Adversary::AlwaysMalformed,
        Adversary::AlwaysNonLeaf,
        Adversary::AlwaysUnknown,
        Adversary::Missing,
    ];

    pub fn for_issue(number: u64) -> Self {
        Self::ALL[((number - 1) % 8) as usize]
    }

    /// Provider calls classify should make, and whether the label ends valid.
    pub fn expected(self) -> (u32, bool) {
        match self {
            Adversary::ValidFirst => (1, true),
            Adversary::MalformedThenValid | Adversary::NonLeafThenValid => (2, true),
            Adversary::UnknownTwiceThenValid => (3, true),
            Adversary::AlwaysMalformed | Adversary::AlwaysNonLeaf | Adversary::AlwaysUnknown => (3, false),
            Adversary::Missing => (1, false),
        }
    }
}

/// Answers classification prompts according to [`Adversary::for_issue`].
pub struct AdversaryClient {
    symptoms: Taxonomy,
    root_causes: Taxonomy,
    attempts: Mutex<HashMap<IssueKey, u32>>,
}

impl AdversaryClient {
    pub fn new(symptoms: Taxonomy, root_causes: Taxonomy) -> Self {
        AdversaryClient {
            symptoms,
            root_causes,
            attempts: Mutex::new(HashMap::new()),
        }
    }

    /// The answer a well-behaved model gives for `number`.
    pub fn valid_answer(&self, number: u64) -> (String, String) {
        let s = self.symptoms.leaves();
        let r = self.root_causes.leaves();
        (
            s[number as usize % s.len()].name.clone(),
            r[number as usize % r.len()].name.clone(),
        )
    }
}

impl ChatClient for AdversaryClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let key = prompt_key(&request.user_text)
            .ok_or_else(|| LlmError::InvalidRequest("prompt names no issue".into()))?;
        let attempt = {
            let mut a = self.attempts.lock().unwrap();
            let slot = a.entry(key.clone()).or_insert(0);
            *slot += 1;
            *slot
        };
        let (symptom, cause) = self.valid_answer(key.number);
        let valid = json!({"symptom": symptom, "root_cause": cause, "rationale": "ok"}).to_string();
        let malformed = "{\"symptom\": \"Crash\", \"root_cause\": ".to_string();
        let non_leaf = json!({"symptom": "Poor Performance", "root_cause": "Unknown", "rationale": "broad"}).to_string();
        let unknown = json!({"symptom": "Quantum Error", "root_cause": cause, "rationale": "?"}).to_string();
        let text = match (Adversary::for_issue(key.number), attempt) {
            (Adversary::ValidFirst | Adversary::Missing, _) => valid,
            (Adversary::MalformedThenValid, 1) => malformed,
            (Adversary::NonLeafThenValid, 1) => non_leaf,
            (Adversary::UnknownTwiceThenValid, 1 | 2) => unknown,
            (Adversary::MalformedThenValid | Adversary::NonLeafThenValid | Adversary::UnknownTwiceThenValid, _) => valid,
            (Adversary::AlwaysMalformed, _) => malformed,
            (Adversary::AlwaysNonLeaf, _) => non_leaf,
            (Adversary::AlwaysUnknown, _) => unknown,
        };
        Ok(response(request, text))
    }
}

/// Wraps a client and counts calls per issue key.
pub struct CallCounter<C> {
    pub inner: C,
    per_issue: Mutex<HashMap<IssueKey, u32>>,
}

impl<C> CallCounter<C> {
    pub fn new(inner: C) -> Self {
        CallCounter {
            inner,
            per_issue: Mutex::new(HashMap::new()),
        }
    }

    pub fn calls(&self, key: &IssueKey) -> u32 {
        self.per_issue.lock().unwrap().get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.per_issue.lock().unwrap().values().sum()
    }
}

impl<C: ChatClient> ChatClient for CallCounter<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if let Some(key) = prompt_key(&request.user_text) {
            *self.per_issue.lock().unwrap().entry(key).or_insert(0) += 1;
        }
        self.inner.complete(request)
    }
}
