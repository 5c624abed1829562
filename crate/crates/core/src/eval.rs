//! Scoring stage outputs against expert gold labels.
//!
//! Rates are kept as exact fractions; floats only appear at serialization.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GoldLabel, GoldSet, IssueKey};
use crate::llm::UsageLedger;
use crate::stage2::FilterDecision;
use crate::stage3::FaultLabel;
use crate::taxonomy::{Taxonomy, TaxonomyKind};

/// Reserved predicted class for unusable predictions.
pub const INVALID_CLASS: &str = "invalid";

/// An exact rate in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "RateRepr", try_from = "RateRepr")]
pub struct Rate(pub Ratio<u64>);

#[derive(Serialize, Deserialize)]
struct RateRepr {
    value: f64,
    fraction: String,
}

impl From<Rate> for RateRepr {
    fn from(r: Rate) -> Self {
        RateRepr {
            value: r.as_f64(),
            fraction: format!("{}/{}", r.0.numer(), r.0.denom()),
        }
    }
}

impl TryFrom<RateRepr> for Rate {
    type Error = String;

    fn try_from(r: RateRepr) -> Result<Self, Self::Error> {
        let (n, d) = r
            .fraction
            .split_once('/')
            .ok_or_else(|| format!("bad fraction `{}`", r.fraction))?;
        let n: u64 = n.parse().map_err(|e| format!("{e}"))?;
        let d: u64 = d.parse().map_err(|e| format!("{e}"))?;
        if d == 0 || n > d {
            return Err(format!("fraction {n}/{d} is not a rate"));
        }
        Ok(Rate(Ratio::new(n, d)))
    }
}

impl Rate {
    pub fn new(numer: u64, denom: u64) -> Self {
        Rate(Ratio::new(numer, denom))
    }

    pub fn as_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ({}/{})", self.as_f64(), self.0.numer(), self.0.denom())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("nothing to score")]
    Empty,
    #[error("no gold {field} for {key}")]
    MissingGold { key: IssueKey, field: &'static str },
    #[error("gold {field} `{id}` for {key} {reason}")]
    UnresolvableGold {
        key: IssueKey,
        field: &'static str,
        id: String,
        reason: String,
    },
    #[error("level {level} is outside 1..={leaf_level}")]
    LevelOutOfRange { level: u8, leaf_level: u8 },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("confusion-matrix accuracy {matrix} disagrees with per-item count {direct}")]
    CrossCheck { matrix: String, direct: String },
}

/// Rows are gold classes, columns predicted classes; the last class is `invalid`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: impl IntoIterator<Item = String>) -> Self {
        let mut classes: Vec<String> = classes.into_iter().collect();
        classes.push(INVALID_CLASS.to_string());
        let n = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    fn index(&self, class: &str) -> Result<usize, EvalError> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| EvalError::UnknownClass(class.to_string()))
    }

    pub fn add(&mut self, gold: &str, predicted: &str) -> Result<(), EvalError> {
        let (g, p) = (self.index(gold)?, self.index(predicted)?);
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn get(&self, gold: &str, predicted: &str) -> u64 {
        match (self.index(gold), self.index(predicted)) {
            (Ok(g), Ok(p)) => self.counts[g][p],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: &str) -> u64 {
        self.index(gold)
            .map(|g| self.counts[g].iter().sum())
            .unwrap_or(0)
    }

    pub fn column_sum(&self, predicted: &str) -> u64 {
        self.index(predicted)
            .map(|p| self.counts.iter().map(|row| row[p]).sum())
            .unwrap_or(0)
    }

    /// Diagonal over the real classes; `invalid` is never a correct answer.
    pub fn valid_trace(&self) -> u64 {
        (0..self.classes.len() - 1).map(|i| self.counts[i][i]).sum()
    }

    /// Delimited table: header row of predicted classes, one row per gold class.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["gold\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (class, row) in self.classes.iter().zip(&self.counts) {
            let mut rec = vec![class.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
    pub invalid: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Scores {
    pub scored: u64,
    pub accuracy: Rate,
    pub precision: Option<Rate>,
    pub recall: Option<Rate>,
    pub counts: BinaryCounts,
    pub confusion: ConfusionMatrix,
}

const FAULT: &str = "fault";
const NON_FAULT: &str = "non_fault";

/// Scores filter decisions with fault-related as the positive class.
pub fn score_stage2(decisions: &[FilterDecision], gold: &GoldSet) -> Result<Stage2Scores, EvalError> {
    if decisions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = ConfusionMatrix::new([FAULT.to_string(), NON_FAULT.to_string()]);
    let mut counts = BinaryCounts::default();
    for d in decisions {
        let truth = gold
            .get(&d.issue)
            .and_then(|g| g.fault_related)
            .ok_or_else(|| EvalError::MissingGold {
                key: d.issue.clone(),
                field: "fault_related",
            })?;
        let gold_class = if truth { FAULT } else { NON_FAULT };
        let predicted = if d.error.is_some() {
            counts.invalid += 1;
            INVALID_CLASS
        } else if d.is_fault {
            FAULT
        } else {
            NON_FAULT
        };
        confusion.add(gold_class, predicted)?;
        match (truth, predicted) {
            (true, FAULT) => counts.true_positive += 1,
            (false, FAULT) => counts.false_positive += 1,
            (true, _) => counts.false_negative += 1,
            (false, NON_FAULT) => counts.true_negative += 1,
            (false, _) => {}
        }
    }
    let scored = decisions.len() as u64;
    let correct = counts.true_positive + counts.true_negative;
    if correct != confusion.valid_trace() {
        return Err(EvalError::CrossCheck {
            matrix: confusion.valid_trace().to_string(),
            direct: correct.to_string(),
        });
    }
    let ratio = |n: u64, d: u64| (d > 0).then(|| Rate::new(n, d));
    Ok(Stage2Scores {
        scored,
        accuracy: Rate::new(correct, scored),
        precision: ratio(counts.true_positive, counts.true_positive + counts.false_positive),
        recall: ratio(counts.true_positive, counts.true_positive + counts.false_negative),
        counts,
        confusion,
    })
}

fn gold_field(kind: TaxonomyKind) -> &'static str {
    match kind {
        TaxonomyKind::Symptom => "symptom_leaf",
        TaxonomyKind::RootCause => "root_cause",
    }
}

fn gold_id(label: &GoldLabel, kind: TaxonomyKind) -> Option<&str> {
    match kind {
        TaxonomyKind::Symptom => label.symptom_leaf.as_deref(),
        TaxonomyKind::RootCause => label.root_cause.as_deref(),
    }
}

/// The predicted node id for `kind`, or `None` when the label is unusable.
pub fn predicted_id(label: &FaultLabel, kind: TaxonomyKind) -> Option<&str> {
    if !label.valid {
        return None;
    }
    match kind {
        TaxonomyKind::Symptom => label.symptom_leaf.as_deref(),
        TaxonomyKind::RootCause => label.root_cause.as_deref(),
    }
}

struct ScoredItem<'a> {
    gold: &'a str,
    predicted: Option<&'a str>,
}

fn pair_up<'a>(
    labels: &'a [FaultLabel],
    gold: &'a GoldSet,
    taxonomy: &Taxonomy,
) -> Result<Vec<ScoredItem<'a>>, EvalError> {
    let kind = taxonomy.kind();
    let field = gold_field(kind);
    labels
        .iter()
        .map(|l| {
            let id = gold
                .get(&l.issue)
                .and_then(|g| gold_id(g, kind))
                .ok_or_else(|| EvalError::MissingGold {
                    key: l.issue.clone(),
                    field,
                })?;
            let unresolvable = |reason: &str| EvalError::UnresolvableGold {
                key: l.issue.clone(),
                field,
                id: id.to_string(),
                reason: reason.to_string(),
            };
            let node = taxonomy.get(id).ok_or_else(|| unresolvable("is not in the taxonomy"))?;
            if node.level != taxonomy.leaf_level() {
                return Err(unresolvable("is not at the taxonomy's leaf level"));
            }
            // a "valid" prediction that does not resolve cannot be scored as anything but invalid
            let predicted = predicted_id(l, kind).filter(|p| {
                taxonomy
                    .get(p)
                    .is_some_and(|n| n.level == taxonomy.leaf_level())
            });
            Ok(ScoredItem { gold: id, predicted })
        })
        .collect()
}

fn correct_at(taxonomy: &Taxonomy, item: &ScoredItem<'_>, level: u8) -> bool {
    let Some(pred) = item.predicted else {
        return false;
    };
    match (taxonomy.ancestor_at(pred, level), taxonomy.ancestor_at(item.gold, level)) {
        (Some(a), Some(b)) => a.id == b.id,
        _ => false,
    }
}

/// Fraction of labels whose level-`level` ancestor matches the gold label's.
pub fn hierarchical_accuracy(
    labels: &[FaultLabel],
    gold: &GoldSet,
    taxonomy: &Taxonomy,
    level: u8,
) -> Result<Rate, EvalError> {
    if level == 0 || level > taxonomy.leaf_level() {
        return Err(EvalError::LevelOutOfRange {
            level,
            leaf_level: taxonomy.leaf_level(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let items = pair_up(labels, gold, taxonomy)?;
    let correct = items.iter().filter(|i| correct_at(taxonomy, i, level)).count();
    Ok(Rate::new(correct as u64, items.len() as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub level: u8,
    pub accuracy: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Scores {
    pub kind: TaxonomyKind,
    pub granularity: u8,
    pub scored: u64,
    pub invalid: u64,
    pub accuracy: Rate,
    pub per_level: Vec<LevelAccuracy>,
    pub confusion: ConfusionMatrix,
}

/// Exact-node accuracy at `granularity`, per-level accuracies, and the
/// confusion matrix over the taxonomy's nodes at that level.
pub fn score_stage3(
    labels: &[FaultLabel],
    gold: &GoldSet,
    taxonomy: &Taxonomy,
    granularity: u8,
) -> Result<Stage3Scores, EvalError> {
    if granularity == 0 || granularity > taxonomy.leaf_level() {
        return Err(EvalError::LevelOutOfRange {
            level: granularity,
            leaf_level: taxonomy.leaf_level(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let items = pair_up(labels, gold, taxonomy)?;

    let class_of = |id: &str| -> String {
        taxonomy
            .ancestor_at(id, granularity)
            .map(|n| n.id.clone())
            .unwrap_or_else(|| INVALID_CLASS.to_string())
    };
    let mut confusion = ConfusionMatrix::new(
        taxonomy
            .nodes()
            .filter(|n| n.level == granularity)
            .map(|n| n.id.clone()),
    );
    let mut invalid = 0u64;
    let mut direct_correct = 0u64;
    for item in &items {
        let predicted = match item.predicted {
            Some(p) => class_of(p),
            None => {
                invalid += 1;
                INVALID_CLASS.to_string()
            }
        };
        confusion.add(&class_of(item.gold), &predicted)?;
        direct_correct += u64::from(correct_at(taxonomy, item, granularity));
    }
    if confusion.valid_trace() != direct_correct {
        return Err(EvalError::CrossCheck {
            matrix: confusion.valid_trace().to_string(),
            direct: direct_correct.to_string(),
        });
    }

    let total = items.len() as u64;
    let per_level = (1..=taxonomy.leaf_level())
        .map(|level| LevelAccuracy {
            level,
            accuracy: Rate::new(
                items.iter().filter(|i| correct_at(taxonomy, i, level)).count() as u64,
                total,
            ),
        })
        .collect();
    Ok(Stage3Scores {
        kind: taxonomy.kind(),
        granularity,
        scored: total,
        invalid,
        accuracy: Rate::new(direct_correct, total),
        per_level,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub recall: Rate,
    pub hits: Vec<String>,
    pub misses: Vec<String>,
    pub extras: Vec<String>,
    pub research_questions: Vec<String>,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model_id: String,
    pub mode: String,
    pub wall_time_ms: u64,
    pub stage_timings: Vec<StageTiming>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub usage: UsageLedger,
    pub invalid_labels: u64,
    pub provider_failures: u64,
    pub unscored_stage2: u64,
    pub unscored_stage3_symptom: u64,
    pub unscored_stage3_root_cause: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub stage1: Option<PlanReport>,
    pub stage2: Option<Stage2Scores>,
    pub stage3_symptom: Option<Stage3Scores>,
    pub stage3_rootcause: Option<Stage3Scores>,
    pub notes: Vec<String>,
    pub run_meta: RunMeta,
}

/// Splits items into those with the needed gold value and the count of the rest.
pub fn partition_by_gold<'a, T>(
    items: &'a [T],
    key: impl Fn(&T) -> &IssueKey,
    has_gold: impl Fn(&GoldLabel) -> bool,
    gold: &GoldSet,
) -> (Vec<&'a T>, u64) {
    let mut covered = Vec::with_capacity(items.len());
    let mut missing = 0;
    for item in items {
        if gold.get(key(item)).is_some_and(&has_gold) {
            covered.push(item);
        } else {
            missing += 1;
        }
    }
    (covered, missing)
}

/// Per-class precision/recall from a confusion matrix (classes with no
/// predictions or no gold items get `None`).
pub fn per_class_rates(confusion: &ConfusionMatrix) -> HashMap<String, (Option<Rate>, Option<Rate>)> {
    let mut out = HashMap::new();
    for class in confusion.classes.iter().filter(|c| *c != INVALID_CLASS) {
        let tp = confusion.get(class, class);
        let predicted = confusion.column_sum(class);
        let actual = confusion.row_sum(class);
        out.insert(
            class.clone(),
            (
                (predicted > 0).then(|| Rate::new(tp, predicted)),
                (actual > 0).then(|| Rate::new(tp, actual)),
            ),
        );
    }
    out
}
