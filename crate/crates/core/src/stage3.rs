//! Taxonomy-anchored symptom and root-cause classification.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::batch::map_ordered;
use crate::corpus::{IssueKey, IssueRecord};
use crate::llm::{
    extract_structured, repair_request, ChatClient, ChatRequest, LlmError, ModelUsage,
    UsageLedger,
};
use crate::stage2::CommentBudget;
use crate::taxonomy::{Taxonomy, TaxonomyError};

pub const REPAIR_BUDGET: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultLabel {
    #[serde(flatten)]
    pub issue: IssueKey,
    pub symptom_leaf: Option<String>,
    pub root_cause: Option<String>,
    pub rationale: String,
    pub attempts: u32,
    pub valid: bool,
    /// Last model output, kept only for invalid labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub usage: ModelUsage,
}

#[derive(Debug, Error)]
#[error("{issue}: {source}")]
pub struct ClassifyError {
    pub issue: IssueKey,
    #[source]
    pub source: LlmError,
}

const CLASSIFY_SYSTEM: &str = "You are an expert in software fault analysis. You classify fault reports into a fixed, predefined taxonomy and never invent new categories.";

fn level_word(level: u8) -> &'static str {
    match level {
        1 => "primary category (level 1)",
        2 => "subcategory (level 2)",
        _ => "specific type (level 3)",
    }
}

fn render_issue(issue: &IssueRecord, out: &mut String) {
    let budget = CommentBudget::default();
    let _ = writeln!(out, "Repository: {}", issue.repo);
    let _ = writeln!(out, "Issue: #{}", issue.number);
    let _ = writeln!(out, "Title: {}", issue.title.trim());
    if !issue.labels.is_empty() {
        let _ = writeln!(out, "Labels: {}", issue.labels.join(", "));
    }
    out.push_str("\nBody:\n");
    if issue.body.trim().is_empty() {
        out.push_str("(empty body)\n");
    } else {
        out.push_str(issue.body.trim_end());
        out.push('\n');
    }
    if !issue.comments.is_empty() {
        out.push_str("\nComments:\n");
        let mut used = 0usize;
        let mut shown = 0usize;
        for c in issue.comments.iter().take(budget.max_comments) {
            let body = c.body.trim();
            if used + body.chars().count() > budget.max_chars {
                break;
            }
            used += body.chars().count();
            shown += 1;
            let _ = writeln!(out, "[{shown}] ({}) {body}", c.author_role);
        }
        if shown < issue.comments.len() {
            let _ = writeln!(out, "[... {} more comment(s) truncated]", issue.comments.len() - shown);
        }
    }
}

/// Builds the classification prompt carrying both taxonomy outlines.
pub fn build_classification_prompt(
    issue: &IssueRecord,
    symptoms: &Taxonomy,
    root_causes: &Taxonomy,
    model_id: &str,
) -> ChatRequest {
    let mut user = String::new();
    user.push_str("Classify the fault reported in the issue below using ONLY the two taxonomies given here.\n\n");
    user.push_str("=== SYMPTOM TAXONOMY ===\n");
    user.push_str(&symptoms.render_prompt_section());
    user.push_str("\n=== ROOT CAUSE TAXONOMY ===\n");
    user.push_str(&root_causes.render_prompt_section());
    let _ = write!(
        user,
        "\nRules:\n\
         - \"symptom\" must be the exact name of exactly one symptom {}.\n\
         - \"root_cause\" must be the exact name of exactly one root cause {}.\n\
         - Use names exactly as written in the taxonomies; do not name a broader category.\n",
        level_word(symptoms.leaf_level()),
        level_word(root_causes.leaf_level()),
    );
    user.push_str("\n=== ISSUE ===\n");
    render_issue(issue, &mut user);
    user.push_str("=== END ISSUE ===\n\n");
    user.push_str(
        "Respond with a single JSON object and nothing else:\n\
         {\"symptom\": \"<symptom name>\", \"root_cause\": \"<root cause name>\", \"rationale\": \"<brief justification>\"}\n",
    );
    ChatRequest::new(model_id, CLASSIFY_SYSTEM, user)
}

/// Resolves `label` and checks it sits at the taxonomy's leaf granularity.
pub fn resolve_leaf<'t>(taxonomy: &'t Taxonomy, field: &str, label: &str) -> Result<&'t str, String> {
    let node = taxonomy.resolve_label(label).map_err(|e| match e {
        TaxonomyError::NoMatch(_) => format!("{field} `{label}` is not a name in the taxonomy"),
        other => format!("{field}: {other}"),
    })?;
    if node.level != taxonomy.leaf_level() {
        let options: Vec<&str> = taxonomy
            .leaves()
            .into_iter()
            .filter(|leaf| {
                taxonomy
                    .ancestor_at(&leaf.id, node.level)
                    .is_some_and(|a| a.id == node.id)
            })
            .map(|leaf| leaf.name.as_str())
            .collect();
        let mut msg = format!(
            "{field} `{}` is a {}, but a {} is required",
            node.name,
            level_word(node.level),
            level_word(taxonomy.leaf_level())
        );
        if !options.is_empty() {
            let _ = write!(msg, "; options under it: {}", options.join(", "));
        }
        return Err(msg);
    }
    Ok(&node.id)
}

struct Parsed {
    symptom: Result<String, String>,
    root_cause: Result<String, String>,
    rationale: String,
}

fn parse_label(text: &str, symptoms: &Taxonomy, root_causes: &Taxonomy) -> Result<Parsed, String> {
    let fields = extract_structured(text, &["symptom", "root_cause"]).map_err(|e| e.to_string())?;
    let resolve = |field: &str, tax: &Taxonomy| match &fields[field] {
        Value::String(s) => resolve_leaf(tax, field, s).map(str::to_string),
        other => Err(format!("{field} must be a string, got {other}")),
    };
    Ok(Parsed {
        symptom: resolve("symptom", symptoms),
        root_cause: resolve("root_cause", root_causes),
        rationale: fields
            .get("rationale")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
    })
}

/// Classifies one issue: one call plus at most [`REPAIR_BUDGET`] repairs.
pub fn classify(
    issue: &IssueRecord,
    symptoms: &Taxonomy,
    root_causes: &Taxonomy,
    client: &dyn ChatClient,
    model_id: &str,
) -> Result<FaultLabel, ClassifyError> {
    let original = build_classification_prompt(issue, symptoms, root_causes, model_id);
    let mut request = original.clone();
    let mut label = FaultLabel {
        issue: issue.key(),
        symptom_leaf: None,
        root_cause: None,
        rationale: String::new(),
        attempts: 0,
        valid: false,
        raw_output: None,
        error: None,
        usage: ModelUsage::default(),
    };

    loop {
        let response = client.complete(&request).map_err(|source| ClassifyError {
            issue: issue.key(),
            source,
        })?;
        label.attempts += 1;
        label.usage.add(&response);

        let problem = match parse_label(&response.text, symptoms, root_causes) {
            Ok(parsed) => {
                label.rationale = parsed.rationale;
                label.symptom_leaf = parsed.symptom.as_ref().ok().cloned();
                label.root_cause = parsed.root_cause.as_ref().ok().cloned();
                let problems: Vec<String> = [parsed.symptom.err(), parsed.root_cause.err()]
                    .into_iter()
                    .flatten()
                    .collect();
                if problems.is_empty() {
                    label.valid = true;
                    label.raw_output = None;
                    return Ok(label);
                }
                problems.join("; ")
            }
            Err(problem) => {
                label.symptom_leaf = None;
                label.root_cause = None;
                problem
            }
        };

        if label.attempts > REPAIR_BUDGET {
            label.raw_output = Some(response.text);
            label.error = Some(problem);
            return Ok(label);
        }
        request = repair_request(&original, &response.text, &problem, label.attempts);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage3Output {
    pub labels: Vec<FaultLabel>,
    pub usage: UsageLedger,
    pub failures: usize,
    pub invalid: usize,
}

/// Classifies every issue, in input order; provider failures stay per-issue.
pub fn run_stage3(
    issues: &[IssueRecord],
    symptoms: &Taxonomy,
    root_causes: &Taxonomy,
    client: &dyn ChatClient,
    model_id: &str,
    parallelism: usize,
) -> Stage3Output {
    let labels = map_ordered(issues, parallelism, |_, issue| {
        classify(issue, symptoms, root_causes, client, model_id).unwrap_or_else(|e| {
            tracing::warn!("{e}");
            FaultLabel {
                issue: issue.key(),
                symptom_leaf: None,
                root_cause: None,
                rationale: String::new(),
                attempts: 1,
                valid: false,
                raw_output: None,
                error: Some(format!("{}: {}", e.source.kind(), e.source)),
                usage: ModelUsage::default(),
            }
        })
    });
    let mut out = Stage3Output::default();
    for l in &labels {
        if l.usage.calls > 0 {
            out.usage
                .per_model
                .entry(model_id.to_string())
                .or_default()
                .merge(&l.usage);
        }
        if !l.valid {
            out.invalid += 1;
            // provider failures carry no usage: the call never completed
            if l.usage.calls == 0 {
                out.failures += 1;
            }
        }
    }
    out.labels = labels;
    out
}
