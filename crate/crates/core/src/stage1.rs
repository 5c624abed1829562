//! Study definition: ask a model for candidate projects and research
//! questions, then compare the projects against a reference selection.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{
    extract_structured, repair_request, ChatClient, ChatRequest, LlmError, ModelUsage,
};

pub const REPAIR_BUDGET: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyTheme {
    pub description: String,
    #[serde(default)]
    pub constraints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectPick {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub projects: Vec<ProjectPick>,
    pub research_questions: Vec<String>,
}

/// Project-name normalization used for de-duplication and scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameNormalizer {
    /// Suffixes stripped (once, first match wins) after case folding.
    pub strip_suffixes: Vec<String>,
}

impl Default for NameNormalizer {
    fn default() -> Self {
        NameNormalizer {
            strip_suffixes: vec![".js".into(), "js".into()],
        }
    }
}

impl NameNormalizer {
    pub fn normalize(&self, name: &str) -> String {
        let folded = name.trim().to_lowercase();
        let stripped = self
            .strip_suffixes
            .iter()
            .find_map(|s| folded.strip_suffix(s.to_lowercase().as_str()))
            .filter(|rest| rest.chars().any(char::is_alphanumeric))
            .unwrap_or(&folded);
        stripped.chars().filter(|c| c.is_alphanumeric()).collect()
    }
}

#[derive(Debug, Error)]
pub enum Stage1Error {
    #[error("study theme description is empty")]
    EmptyTheme,
    #[error("no usable study plan after {attempts} attempts: {problem}")]
    Extraction { attempts: u32, problem: String },
    #[error("model returned an empty plan ({0})")]
    EmptyPlan(&'static str),
    #[error("reference project list is empty")]
    EmptyReference,
    #[error(transparent)]
    Provider(#[from] LlmError),
}

const DEFINE_SYSTEM: &str = "You are a senior software engineering researcher who designs empirical studies of software faults.";

pub fn build_define_prompt(theme: &StudyTheme, model_id: &str) -> ChatRequest {
    let mut user = String::new();
    let _ = writeln!(user, "Research theme: {}", theme.description.trim());
    if !theme.constraints.is_empty() {
        user.push_str("Constraints:\n");
        for c in &theme.constraints {
            let _ = writeln!(user, "- {}", c.trim());
        }
    }
    user.push_str(
        "\nSelect the open-source projects that a representative empirical fault study on this theme should analyze, \
         and formulate the research questions the study should answer.\n\n\
         Respond with a single JSON object and nothing else:\n\
         {\"projects\": [{\"name\": \"...\", \"url\": \"...\", \"rationale\": \"...\"}], \"research_questions\": [\"...\"]}\n",
    );
    ChatRequest::new(model_id, DEFINE_SYSTEM, user)
}

fn parse_plan(text: &str) -> Result<StudyPlan, String> {
    let fields =
        extract_structured(text, &["projects", "research_questions"]).map_err(|e| e.to_string())?;
    let projects = fields["projects"]
        .as_array()
        .ok_or("projects must be an array")?
        .iter()
        .map(|p| match p {
            Value::String(name) => Ok(ProjectPick {
                name: name.clone(),
                url: None,
                rationale: String::new(),
            }),
            Value::Object(o) => {
                let name = o
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or("every project needs a string name")?;
                Ok(ProjectPick {
                    name: name.to_string(),
                    url: o.get("url").and_then(Value::as_str).map(str::to_string),
                    rationale: o
                        .get("rationale")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                })
            }
            other => Err(format!("unexpected project entry {other}")),
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let research_questions = fields["research_questions"]
        .as_array()
        .ok_or("research_questions must be an array")?
        .iter()
        .filter_map(Value::as_str)
        .map(str::to_string)
        .collect();
    Ok(StudyPlan {
        projects,
        research_questions,
    })
}

/// Merges projects whose normalized names collide, keeping the first.
pub fn dedup_projects(projects: Vec<ProjectPick>, normalizer: &NameNormalizer) -> Vec<ProjectPick> {
    let mut out: Vec<ProjectPick> = Vec::with_capacity(projects.len());
    let mut keys: Vec<String> = Vec::new();
    for p in projects {
        let key = normalizer.normalize(&p.name);
        if key.is_empty() {
            continue;
        }
        match keys.iter().position(|k| *k == key) {
            Some(i) => {
                if out[i].url.is_none() {
                    out[i].url = p.url;
                }
            }
            None => {
                keys.push(key);
                out.push(p);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposeOutcome {
    pub plan: StudyPlan,
    pub usage: ModelUsage,
}

pub fn propose_study(
    theme: &StudyTheme,
    client: &dyn ChatClient,
    model_id: &str,
    normalizer: &NameNormalizer,
) -> Result<ProposeOutcome, Stage1Error> {
    if theme.description.trim().is_empty() {
        return Err(Stage1Error::EmptyTheme);
    }
    let original = build_define_prompt(theme, model_id);
    let mut request = original.clone();
    let mut usage = ModelUsage::default();
    let mut attempts = 0;
    loop {
        let response = client.complete(&request)?;
        attempts += 1;
        usage.add(&response);
        match parse_plan(&response.text) {
            Ok(mut plan) => {
                plan.projects = dedup_projects(plan.projects, normalizer);
                plan.research_questions.retain(|q| !q.trim().is_empty());
                if plan.projects.is_empty() {
                    return Err(Stage1Error::EmptyPlan("no projects"));
                }
                if plan.research_questions.is_empty() {
                    return Err(Stage1Error::EmptyPlan("no research questions"));
                }
                return Ok(ProposeOutcome { plan, usage });
            }
            Err(problem) if attempts > REPAIR_BUDGET => {
                return Err(Stage1Error::Extraction { attempts, problem })
            }
            Err(problem) => request = repair_request(&original, &response.text, &problem, attempts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanScore {
    pub recall: Ratio<u64>,
    pub hits: Vec<String>,
    pub misses: Vec<String>,
    pub extras: Vec<String>,
}

/// Recall of the plan's projects against a reference selection.
pub fn score_plan(
    plan: &StudyPlan,
    reference: &[String],
    normalizer: &NameNormalizer,
) -> Result<PlanScore, Stage1Error> {
    if reference.is_empty() {
        return Err(Stage1Error::EmptyReference);
    }
    let planned: BTreeSet<String> = plan
        .projects
        .iter()
        .map(|p| normalizer.normalize(&p.name))
        .collect();
    let referenced: BTreeSet<String> = reference.iter().map(|r| normalizer.normalize(r)).collect();

    let (hits, misses): (Vec<&String>, Vec<&String>) = reference
        .iter()
        .partition(|r| planned.contains(&normalizer.normalize(r)));
    let extras = plan
        .projects
        .iter()
        .filter(|p| !referenced.contains(&normalizer.normalize(&p.name)))
        .map(|p| p.name.clone())
        .collect();
    Ok(PlanScore {
        recall: Ratio::new(hits.len() as u64, reference.len() as u64),
        hits: hits.into_iter().cloned().collect(),
        misses: misses.into_iter().cloned().collect(),
        extras,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(names: &[&str]) -> StudyPlan {
        StudyPlan {
            projects: names
                .iter()
                .map(|n| ProjectPick {
                    name: n.to_string(),
                    url: None,
                    rationale: String::new(),
                })
                .collect(),
            research_questions: vec!["RQ1".into()],
        }
    }

    fn reference() -> Vec<String> {
        vec![
            "TensorFlow.js".into(),
            "third-party DL libraries".into(),
            "58 JavaScript-based DL applications".into(),
        ]
    }

    #[test]
    fn normalization_variants_collide() {
        let n = NameNormalizer::default();
        assert_eq!(n.normalize("TensorFlow.js"), "tensorflow");
        assert_eq!(n.normalize("Tensorflow JS"), "tensorflow");
        assert_eq!(n.normalize("tensorflowjs"), "tensorflow");
        assert_eq!(n.normalize("js"), "js");
    }

    #[test]
    fn single_hit_recall_one_third() {
        let s = score_plan(&plan(&["TensorFlow.js"]), &reference(), &NameNormalizer::default()).unwrap();
        assert_eq!(s.recall, Ratio::new(1, 3));
        assert_eq!(s.misses, reference()[1..].to_vec());
        assert!(s.extras.is_empty());
    }

    #[test]
    fn identity_and_disjoint() {
        let n = NameNormalizer::default();
        let refs = reference();
        let names: Vec<&str> = refs.iter().map(String::as_str).collect();
        let s = score_plan(&plan(&names), &refs, &n).unwrap();
        assert_eq!(s.recall, Ratio::from_integer(1));
        assert!(s.misses.is_empty() && s.extras.is_empty());

        let s = score_plan(&plan(&["Brain.js"]), &refs, &n).unwrap();
        assert_eq!(s.recall, Ratio::from_integer(0));
        assert_eq!(s.extras, vec!["Brain.js".to_string()]);
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(matches!(
            score_plan(&plan(&["a"]), &[], &NameNormalizer::default()),
            Err(Stage1Error::EmptyReference)
        ));
    }

    #[test]
    fn dedup_keeps_first() {
        let mut p = plan(&["Teachable Machine", "teachable-machine", "Magenta.js"]).projects;
        p[1].url = Some("https://x".into());
        let d = dedup_projects(p, &NameNormalizer::default());
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].name, "Teachable Machine");
        assert_eq!(d[0].url.as_deref(), Some("https://x"));
    }
}
