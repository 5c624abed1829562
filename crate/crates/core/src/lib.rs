//! Library behind the `faultloom` pipeline: taxonomy-anchored, LLM-assisted
//! empirical studies of software faults.

pub mod batch;
pub mod corpus;
pub mod eval;
pub mod http;
pub mod llm;
pub mod pipeline;
pub mod stage1;
pub mod stage2;
pub mod stage3;
pub mod taxonomy;

pub use corpus::{Corpus, GoldLabel, GoldSet, IssueKey, IssueRecord};
pub use eval::{ConfusionMatrix, EvalReport, Rate};
pub use llm::{ChatClient, ChatRequest, ChatResponse, Gateway, LlmError, Mode};
pub use stage2::{FilterCriteria, FilterDecision};
pub use stage3::FaultLabel;
pub use taxonomy::{Taxonomy, TaxonomyKind, TaxonomyNode};
