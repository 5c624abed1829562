//! Shared helpers for the integration tests and the fixture generator.
#![allow(dead_code)]

pub mod oracle;
pub mod synth;

use std::path::PathBuf;

use faultloom_core::taxonomy::load_taxonomy;
use faultloom_core::Taxonomy;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn taxonomies() -> (Taxonomy, Taxonomy) {
    let dir = fixtures().join("taxonomy");
    (
        load_taxonomy(dir.join("symptom.json")).expect("symptom fixture"),
        load_taxonomy(dir.join("root_cause.json")).expect("root-cause fixture"),
    )
}
