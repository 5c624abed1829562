//! Fault-related issue selection.
//!
//! Deterministic criteria (domain vocabulary, exclusion labels, version
//! cutoff date, answered-ness) run first; only issues that pass all of them
//! are put to the model, which judges whether the issue reports an actual,
//! technically clear fault.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::batch::map_ordered;
use crate::corpus::{Corpus, IssueKey, IssueRecord};
use crate::llm::{
    extract_structured, repair_request, ChatClient, ChatRequest, LlmError, ModelUsage,
    UsageLedger,
};

/// Repairs allowed after the first reply fails to parse.
pub const REPAIR_BUDGET: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentBudget {
    pub max_comments: usize,
    pub max_chars: usize,
}

impl Default for CommentBudget {
    fn default() -> Self {
        CommentBudget {
            max_comments: 20,
            max_chars: 8000,
        }
    }
}

fn default_semantic_criteria() -> Vec<String> {
    vec![
        "Fault reporting: the issue reports an observable problem such as an error, a crash, wrong behavior or a failure of the system. Feature requests, usage questions and design discussions are not faults.".into(),
        "Technical clarity: the issue gives enough technical detail and a clear enough description of the problem to analyze the fault.".into(),
    ]
}

/// Criteria as written in the criteria file; the vocabulary comes from its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaFile {
    #[serde(default)]
    pub exclusion_labels: Vec<String>,
    pub cutoff_date: NaiveDate,
    #[serde(default)]
    pub require_answered: bool,
    #[serde(default = "default_semantic_criteria")]
    pub semantic_criteria: Vec<String>,
    #[serde(default)]
    pub comment_budget: CommentBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCriteria {
    pub vocabulary: Vec<String>,
    pub exclusion_labels: Vec<String>,
    pub cutoff_date: NaiveDate,
    pub require_answered: bool,
    pub semantic_criteria: Vec<String>,
    pub comment_budget: CommentBudget,
}

#[derive(Debug, Error)]
pub enum CriteriaError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("criteria file {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// One term per line; blank lines and `#` comments ignored.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn read(path: &Path) -> Result<String, CriteriaError> {
    std::fs::read_to_string(path).map_err(|e| CriteriaError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

impl FilterCriteria {
    pub fn new(vocabulary: Vec<String>, file: CriteriaFile) -> Result<Self, CriteriaError> {
        let vocabulary: Vec<String> = vocabulary
            .into_iter()
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if vocabulary.is_empty() {
            return Err(CriteriaError::EmptyVocabulary);
        }
        Ok(FilterCriteria {
            vocabulary,
            exclusion_labels: file.exclusion_labels,
            cutoff_date: file.cutoff_date,
            require_answered: file.require_answered,
            semantic_criteria: file.semantic_criteria,
            comment_budget: file.comment_budget,
        })
    }

    pub fn load(criteria_path: &Path, vocabulary_path: &Path) -> Result<Self, CriteriaError> {
        let file: CriteriaFile =
            toml::from_str(&read(criteria_path)?).map_err(|e| CriteriaError::Parse {
                path: criteria_path.display().to_string(),
                reason: e.to_string(),
            })?;
        Self::new(parse_word_list(&read(vocabulary_path)?), file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionId {
    Vocabulary,
    ExclusionLabel,
    CutoffDate,
    Answered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: CriterionId,
    pub passed: bool,
    pub evidence: String,
}

pub type CriterionTrace = Vec<CriterionResult>;

fn is_boundary(c: Option<char>) -> bool {
    c.is_none_or(|c| !c.is_alphanumeric())
}

// Candidates may overlap ("x-x" in "xx-x-x"), so every start offset is tried.
fn bounded_occurrence(text: &str, term: &str) -> bool {
    let mut from = 0;
    while let Some(pos) = text[from..].find(term) {
        let at = from + pos;
        if is_boundary(text[..at].chars().next_back())
            && is_boundary(text[at + term.len()..].chars().next())
        {
            return true;
        }
        from = at + text[at..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Case-insensitive whole-word vocabulary search.
///
/// Purely alphanumeric terms are looked up in the token set of each text;
/// terms containing punctuation or spaces are found as literal substrings
/// bounded by non-alphanumeric characters.
pub struct VocabularyMatcher<'a> {
    terms: Vec<(&'a str, String, bool)>,
}

impl<'a> VocabularyMatcher<'a> {
    pub fn new(vocabulary: &'a [String]) -> Self {
        let terms = vocabulary
            .iter()
            .map(|t| {
                let lowered = t.to_lowercase();
                let simple = lowered.chars().all(char::is_alphanumeric);
                (t.as_str(), lowered, simple)
            })
            .filter(|(_, l, _)| !l.is_empty())
            .collect();
        VocabularyMatcher { terms }
    }

    /// First vocabulary term (in vocabulary order) found in any of `texts`.
    pub fn first_match(&self, texts: &[&str]) -> Option<&'a str> {
        let lowered: Vec<String> = texts.iter().map(|t| t.to_lowercase()).collect();
        let tokens: HashSet<&str> = lowered
            .iter()
            .flat_map(|t| t.split(|c: char| !c.is_alphanumeric()))
            .filter(|t| !t.is_empty())
            .collect();
        self.terms.iter().find_map(|(original, term, simple)| {
            let hit = if *simple {
                tokens.contains(term.as_str())
            } else {
                lowered.iter().any(|text| bounded_occurrence(text, term))
            };
            hit.then_some(*original)
        })
    }
}

fn searchable_texts(issue: &IssueRecord) -> Vec<&str> {
    let mut texts = vec![issue.title.as_str(), issue.body.as_str()];
    texts.extend(issue.comments.iter().map(|c| c.body.as_str()));
    texts
}

/// Evaluates every configured deterministic criterion; never fails.
pub fn apply_deterministic(issue: &IssueRecord, criteria: &FilterCriteria) -> CriterionTrace {
    let mut trace = Vec::with_capacity(4);

    let matcher = VocabularyMatcher::new(&criteria.vocabulary);
    trace.push(match matcher.first_match(&searchable_texts(issue)) {
        Some(term) => CriterionResult {
            criterion: CriterionId::Vocabulary,
            passed: true,
            evidence: term.to_string(),
        },
        None => CriterionResult {
            criterion: CriterionId::Vocabulary,
            passed: false,
            evidence: "no vocabulary term found".into(),
        },
    });

    let offending = issue.labels.iter().find(|label| {
        criteria
            .exclusion_labels
            .iter()
            .any(|x| x.trim().eq_ignore_ascii_case(label.trim()))
    });
    trace.push(CriterionResult {
        criterion: CriterionId::ExclusionLabel,
        passed: offending.is_none(),
        evidence: offending
            .cloned()
            .unwrap_or_else(|| "no exclusion label".into()),
    });

    let created = issue.created_at.date_naive();
    trace.push(CriterionResult {
        criterion: CriterionId::CutoffDate,
        passed: created >= criteria.cutoff_date,
        evidence: created.to_string(),
    });

    if criteria.require_answered {
        let n = issue.comments.len();
        trace.push(CriterionResult {
            criterion: CriterionId::Answered,
            passed: n > 0,
            evidence: format!("{n} comment(s)"),
        });
    }
    trace
}

const FILTER_SYSTEM: &str = "You are an expert software engineering researcher screening issue reports for an empirical study of software faults. You judge each issue only from its text and metadata.";

fn render_issue(issue: &IssueRecord, budget: CommentBudget, out: &mut String) {
    let labels = if issue.labels.is_empty() {
        "(none)".to_string()
    } else {
        issue.labels.join(", ")
    };
    let _ = writeln!(out, "Repository: {}", issue.repo);
    let _ = writeln!(out, "Issue: #{}", issue.number);
    let _ = writeln!(out, "Title: {}", issue.title.trim());
    let _ = writeln!(out, "State: {:?}", issue.state);
    let _ = writeln!(out, "Labels: {labels}");
    let _ = writeln!(out, "Created: {}", issue.created_at.to_rfc3339());
    out.push_str("\nBody:\n");
    if issue.body.trim().is_empty() {
        out.push_str("(empty body)\n");
    } else {
        out.push_str(issue.body.trim_end());
        out.push('\n');
    }

    let _ = writeln!(out, "\nComments ({} total):", issue.comments.len());
    if issue.comments.is_empty() {
        out.push_str("(no comments)\n");
        return;
    }
    let mut used_chars = 0usize;
    let mut shown = 0usize;
    for comment in issue.comments.iter().take(budget.max_comments) {
        let remaining = budget.max_chars.saturating_sub(used_chars);
        if remaining == 0 {
            break;
        }
        let body = comment.body.trim();
        let chars = body.chars().count();
        shown += 1;
        let _ = write!(
            out,
            "[{shown}] ({}, {}) ",
            comment.author_role,
            comment.created_at.to_rfc3339()
        );
        if chars > remaining {
            out.extend(body.chars().take(remaining));
            out.push_str(" [comment truncated]\n");
            used_chars = budget.max_chars;
        } else {
            out.push_str(body);
            out.push('\n');
            used_chars += chars;
        }
    }
    let omitted = issue.comments.len() - shown;
    if omitted > 0 {
        let _ = writeln!(out, "[... {omitted} more comment(s) truncated]");
    }
}

/// Builds the judging prompt; identical inputs give identical requests.
pub fn build_filter_prompt(
    issue: &IssueRecord,
    criteria: &FilterCriteria,
    model_id: &str,
) -> ChatRequest {
    let mut user = String::new();
    user.push_str("Decide whether the following issue is fault-related according to these criteria:\n");
    for (i, c) in criteria.semantic_criteria.iter().enumerate() {
        let _ = writeln!(user, "{}. {}", i + 1, c.trim());
    }
    user.push_str("\n=== ISSUE ===\n");
    render_issue(issue, criteria.comment_budget, &mut user);
    user.push_str("=== END ISSUE ===\n\n");
    user.push_str(
        "Respond with a single JSON object and nothing else:\n\
         {\"fault_related\": true or false, \"rationale\": \"one or two sentences explaining the decision\"}\n",
    );
    ChatRequest::new(model_id, FILTER_SYSTEM, user)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    #[serde(flatten)]
    pub issue: IssueKey,
    pub trace: CriterionTrace,
    pub llm_verdict: Option<bool>,
    pub llm_rationale: Option<String>,
    #[serde(rename = "final")]
    pub is_fault: bool,
    #[serde(default)]
    pub parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub usage: ModelUsage,
}

impl FilterDecision {
    pub fn deterministic_passed(&self) -> bool {
        self.trace.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Error)]
#[error("{issue}: {source}")]
pub struct JudgeError {
    pub issue: IssueKey,
    #[source]
    pub source: LlmError,
}

fn parse_verdict(text: &str) -> Result<(bool, Option<String>), String> {
    let fields = extract_structured(text, &["fault_related"]).map_err(|e| e.to_string())?;
    let verdict = match &fields["fault_related"] {
        Value::Bool(b) => *b,
        other => return Err(format!("fault_related must be a JSON boolean, got {other}")),
    };
    let rationale = fields
        .get("rationale")
        .and_then(Value::as_str)
        .map(str::to_string);
    Ok((verdict, rationale))
}

/// Judges one issue. The model is consulted only when every deterministic criterion passes.
pub fn judge(
    issue: &IssueRecord,
    criteria: &FilterCriteria,
    client: &dyn ChatClient,
    model_id: &str,
) -> Result<FilterDecision, JudgeError> {
    let trace = apply_deterministic(issue, criteria);
    let mut decision = FilterDecision {
        issue: issue.key(),
        trace,
        llm_verdict: None,
        llm_rationale: None,
        is_fault: false,
        parse_failed: false,
        error: None,
        usage: ModelUsage::default(),
    };
    if !decision.deterministic_passed() {
        return Ok(decision);
    }

    let original = build_filter_prompt(issue, criteria, model_id);
    let mut request = original.clone();
    for attempt in 0..=REPAIR_BUDGET {
        let response = client.complete(&request).map_err(|source| JudgeError {
            issue: issue.key(),
            source,
        })?;
        decision.usage.add(&response);
        match parse_verdict(&response.text) {
            Ok((verdict, rationale)) => {
                decision.llm_verdict = Some(verdict);
                decision.llm_rationale = rationale;
                decision.is_fault = verdict;
                return Ok(decision);
            }
            Err(problem) if attempt < REPAIR_BUDGET => {
                request = repair_request(&original, &response.text, &problem, attempt + 1);
            }
            Err(problem) => {
                decision.parse_failed = true;
                decision.llm_rationale = Some(format!("unparseable model output: {problem}"));
            }
        }
    }
    Ok(decision)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage2Output {
    pub decisions: Vec<FilterDecision>,
    pub usage: UsageLedger,
    pub failures: usize,
}

/// Judges every record; one decision per record, in corpus order.
pub fn run_stage2(
    corpus: &Corpus,
    criteria: &FilterCriteria,
    client: &dyn ChatClient,
    model_id: &str,
    parallelism: usize,
) -> Stage2Output {
    let decisions = map_ordered(corpus.records(), parallelism, |_, issue| {
        judge(issue, criteria, client, model_id).unwrap_or_else(|e| {
            tracing::warn!("{e}");
            FilterDecision {
                issue: issue.key(),
                trace: apply_deterministic(issue, criteria),
                llm_verdict: None,
                llm_rationale: None,
                is_fault: false,
                parse_failed: false,
                error: Some(format!("{}: {}", e.source.kind(), e.source)),
                usage: ModelUsage::default(),
            }
        })
    });
    let mut usage = UsageLedger::default();
    let mut failures = 0;
    for d in &decisions {
        if d.usage.calls > 0 {
            usage
                .per_model
                .entry(model_id.to_string())
                .or_default()
                .merge(&d.usage);
        }
        failures += usize::from(d.error.is_some());
    }
    Stage2Output {
        decisions,
        usage,
        failures,
    }
}
