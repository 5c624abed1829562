//! Hierarchical fault taxonomies.
//!
//! A taxonomy is a tree of at most three levels (primary category,
//! subcategory, specific type). Classification output is anchored to it:
//! model answers are resolved by exact, case-insensitive name and must land
//! on a node at the taxonomy's leaf granularity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deepest level any taxonomy may use.
pub const MAX_LEVEL: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyKind {
    Symptom,
    RootCause,
}

impl TaxonomyKind {
    /// Symptoms are scored at specific-type level, root causes at subcategory level.
    pub fn default_leaf_level(self) -> u8 {
        match self {
            TaxonomyKind::Symptom => 3,
            TaxonomyKind::RootCause => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaxonomyKind::Symptom => "symptom",
            TaxonomyKind::RootCause => "root_cause",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub level: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TaxonomyNode>,
}

impl TaxonomyNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// On-disk shape of a taxonomy file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    pub kind: TaxonomyKind,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_level: Option<u8>,
    pub roots: Vec<TaxonomyNode>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy document does not parse: {0}")]
    Parse(String),
    #[error("cannot read taxonomy file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{id}`: sibling name `{name}` is not unique")]
    DuplicateSiblingName { id: String, name: String },
    #[error("node `{0}` has an empty definition")]
    MissingDefinition(String),
    #[error("node `{0}` has an empty id or name")]
    MissingName(String),
    #[error("node `{id}` declares level {declared}, expected {expected}")]
    LevelViolation { id: String, declared: u8, expected: u8 },
    #[error("node `{0}` re-declares one of its own ancestors (cycle)")]
    Cycle(String),
    #[error("leaf level {0} is outside 1..=3")]
    InvalidLeafLevel(u8),
    #[error("taxonomy has no root categories")]
    Empty,
    #[error("no taxonomy node named `{0}`")]
    NoMatch(String),
    #[error("label `{label}` is ambiguous between nodes {ids:?}")]
    Ambiguous { label: String, ids: Vec<String> },
    #[error("node `{0}` does not belong to this taxonomy")]
    NotMember(String),
}

impl TaxonomyError {
    /// Stable machine-readable error class.
    pub fn class(&self) -> &'static str {
        match self {
            TaxonomyError::Parse(_) => "parse",
            TaxonomyError::Io { .. } => "io",
            TaxonomyError::DuplicateId(_) => "duplicate_id",
            TaxonomyError::DuplicateSiblingName { .. } => "duplicate_sibling_name",
            TaxonomyError::MissingDefinition(_) => "missing_definition",
            TaxonomyError::MissingName(_) => "missing_name",
            TaxonomyError::LevelViolation { .. } => "level_violation",
            TaxonomyError::Cycle(_) => "cycle",
            TaxonomyError::InvalidLeafLevel(_) => "invalid_leaf_level",
            TaxonomyError::Empty => "empty",
            TaxonomyError::NoMatch(_) => "no_match",
            TaxonomyError::Ambiguous { .. } => "ambiguous",
            TaxonomyError::NotMember(_) => "not_member",
        }
    }
}

/// A validated, immutable taxonomy.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    kind: TaxonomyKind,
    source: String,
    leaf_level: u8,
    roots: Vec<TaxonomyNode>,
    // id -> child-index path from the root list
    paths: HashMap<String, Vec<usize>>,
    // document (pre-)order of ids
    order: Vec<String>,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.source == other.source
            && self.leaf_level == other.leaf_level
            && self.roots == other.roots
    }
}

/// Case-insensitive, whitespace-collapsed form used for label matching.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl Taxonomy {
    pub fn from_document(doc: TaxonomyDocument) -> Result<Self, TaxonomyError> {
        let leaf_level = doc.leaf_level.unwrap_or_else(|| doc.kind.default_leaf_level());
        if leaf_level == 0 || leaf_level > MAX_LEVEL {
            return Err(TaxonomyError::InvalidLeafLevel(leaf_level));
        }
        if doc.roots.is_empty() {
            return Err(TaxonomyError::Empty);
        }

        let mut paths = HashMap::new();
        let mut order = Vec::new();
        let mut lineage: Vec<&str> = Vec::new();
        let mut path = Vec::new();
        validate_siblings(&doc.roots, 1, &mut lineage, &mut path, &mut paths, &mut order)?;

        Ok(Taxonomy {
            kind: doc.kind,
            source: doc.source,
            leaf_level,
            roots: doc.roots,
            paths,
            order,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDocument =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            kind: self.kind,
            source: self.source.clone(),
            leaf_level: Some(self.leaf_level),
            roots: self.roots.clone(),
        }
    }

    pub fn kind(&self) -> TaxonomyKind {
        self.kind
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Level at which labels are assigned and scored.
    pub fn leaf_level(&self) -> u8 {
        self.leaf_level
    }

    pub fn roots(&self) -> &[TaxonomyNode] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TaxonomyNode> {
        let path = self.paths.get(id)?;
        Some(self.walk(path).last().copied().expect("paths are never empty"))
    }

    /// All nodes in document (pre-)order.
    pub fn nodes(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.order.iter().filter_map(|id| self.get(id))
    }

    pub fn count_at_level(&self, level: u8) -> usize {
        self.nodes().filter(|n| n.level == level).count()
    }

    /// Nodes that a label may legally name, in document order.
    pub fn leaves(&self) -> Vec<&TaxonomyNode> {
        self.nodes().filter(|n| n.level == self.leaf_level).collect()
    }

    pub fn is_leaf_granular(&self, node: &TaxonomyNode) -> bool {
        node.level == self.leaf_level && self.contains(node)
    }

    pub fn contains(&self, node: &TaxonomyNode) -> bool {
        self.get(&node.id)
            .is_some_and(|n| n.name == node.name && n.level == node.level)
    }

    /// Finds the unique node whose normalized name equals the normalized label.
    pub fn resolve_label(&self, label: &str) -> Result<&TaxonomyNode, TaxonomyError> {
        let wanted = normalize_label(label);
        let hits: Vec<&TaxonomyNode> = self
            .nodes()
            .filter(|n| normalize_label(&n.name) == wanted)
            .collect();
        match hits.as_slice() {
            [] => Err(TaxonomyError::NoMatch(label.to_string())),
            [one] => Ok(one),
            many => Err(TaxonomyError::Ambiguous {
                label: label.to_string(),
                ids: many.iter().map(|n| n.id.clone()).collect(),
            }),
        }
    }

    /// Path from the level-1 root down to `node`, inclusive.
    pub fn ancestors(&self, node: &TaxonomyNode) -> Result<Vec<&TaxonomyNode>, TaxonomyError> {
        if !self.contains(node) {
            return Err(TaxonomyError::NotMember(node.id.clone()));
        }
        self.ancestors_of(&node.id)
    }

    pub fn ancestors_of(&self, id: &str) -> Result<Vec<&TaxonomyNode>, TaxonomyError> {
        let path = self
            .paths
            .get(id)
            .ok_or_else(|| TaxonomyError::NotMember(id.to_string()))?;
        Ok(self.walk(path))
    }

    /// The ancestor of `id` at `level` (the node itself when levels agree).
    pub fn ancestor_at(&self, id: &str, level: u8) -> Option<&TaxonomyNode> {
        let chain = self.ancestors_of(id).ok()?;
        chain.into_iter().find(|n| n.level == level)
    }

    fn walk(&self, path: &[usize]) -> Vec<&TaxonomyNode> {
        let mut out = Vec::with_capacity(path.len());
        let mut level = &self.roots;
        for &i in path {
            let node = &level[i];
            out.push(node);
            level = &node.children;
        }
        out
    }

    /// Depth-indented outline of every node's name and definition.
    pub fn render_prompt_section(&self) -> String {
        let mut out = String::new();
        for node in self.nodes() {
            let indent = "  ".repeat(usize::from(node.level - 1));
            let _ = writeln!(out, "{indent}- {}: {}", node.name, node.definition.trim());
        }
        out
    }
}

fn validate_siblings<'a>(
    siblings: &'a [TaxonomyNode],
    expected_level: u8,
    lineage: &mut Vec<&'a str>,
    path: &mut Vec<usize>,
    paths: &mut HashMap<String, Vec<usize>>,
    order: &mut Vec<String>,
) -> Result<(), TaxonomyError> {
    let mut seen_names: Vec<String> = Vec::with_capacity(siblings.len());
    for (i, node) in siblings.iter().enumerate() {
        if node.id.trim().is_empty() || node.name.trim().is_empty() {
            return Err(TaxonomyError::MissingName(node.id.clone()));
        }
        if lineage.contains(&node.id.as_str()) {
            return Err(TaxonomyError::Cycle(node.id.clone()));
        }
        if paths.contains_key(&node.id) {
            return Err(TaxonomyError::DuplicateId(node.id.clone()));
        }
        if node.level != expected_level || node.level > MAX_LEVEL {
            return Err(TaxonomyError::LevelViolation {
                id: node.id.clone(),
                declared: node.level,
                expected: expected_level,
            });
        }
        if node.definition.trim().is_empty() {
            return Err(TaxonomyError::MissingDefinition(node.id.clone()));
        }
        let norm = normalize_label(&node.name);
        if seen_names.contains(&norm) {
            return Err(TaxonomyError::DuplicateSiblingName {
                id: node.id.clone(),
                name: node.name.clone(),
            });
        }
        seen_names.push(norm);

        path.push(i);
        paths.insert(node.id.clone(), path.clone());
        order.push(node.id.clone());
        lineage.push(&node.id);
        validate_siblings(&node.children, expected_level + 1, lineage, path, paths, order)?;
        lineage.pop();
        path.pop();
    }
    Ok(())
}

/// Reads and validates a taxonomy file.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Taxonomy::from_json(&text)
}
