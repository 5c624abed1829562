//! Shared inputs for the criterion benches.

use std::path::{Path, PathBuf};

use faultloom_core::corpus::import_dump;
use faultloom_core::stage2::FilterCriteria;
use faultloom_core::taxonomy::load_taxonomy;
use faultloom_core::{Corpus, Taxonomy};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn wild_corpus() -> Corpus {
    import_dump(fixtures().join("corpus/wild_500.jsonl")).expect("wild fixture")
}

pub fn criteria() -> FilterCriteria {
    let dir = fixtures().join("filter");
    FilterCriteria::load(&dir.join("criteria.toml"), &dir.join("vocabulary.txt")).expect("criteria fixture")
}

pub fn taxonomies() -> (Taxonomy, Taxonomy) {
    let dir = fixtures().join("taxonomy");
    (
        load_taxonomy(dir.join("symptom.json")).expect("symptom fixture"),
        load_taxonomy(dir.join("root_cause.json")).expect("root-cause fixture"),
    )
}
