//! The eight-track desk fixture shipped under `data/desk/`.

use std::sync::Arc;

use crate::catalog::Catalog;
use crate::extraction::Lexicon;
use crate::llm::LlmGateway;
use crate::personalization::EmbeddingStore;
use crate::pipeline::{Backends, Pipeline, PipelineConfig};
use crate::retrieval::DEFAULT_LIMIT;
use crate::snapshot::Snapshot;
use crate::taxonomy::TagTaxonomy;

pub const DESK_CATALOG_JSONL: &str = include_str!("../data/desk/catalog.jsonl");
pub const DESK_EMBEDDINGS: &str = include_str!("../data/desk/embeddings.txt");

pub fn desk_catalog() -> Catalog {
    Catalog::parse(DESK_CATALOG_JSONL, TagTaxonomy::default_taxonomy(), 1).expect("desk catalog is valid")
}

/// U1 = (1, 0); T1 = (1, 0), T2 = (0, 1), T6 = (0.8, 0.8).
pub fn desk_embeddings() -> EmbeddingStore {
    EmbeddingStore::parse(DESK_EMBEDDINGS, 1).expect("desk embeddings are valid")
}

/// Desk settings keep `min_candidates` at 1: with eight tracks the default
/// would relax away implicit tags that do match.
pub fn desk_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        min_candidates: 1,
        ..PipelineConfig::default()
    }
}

pub fn desk_snapshot() -> Snapshot {
    Snapshot::build(desk_catalog(), desk_embeddings(), 1)
}

pub fn default_backends(llm: Option<Arc<LlmGateway>>, replay: Option<Arc<LlmGateway>>) -> Backends {
    let taxonomy = Arc::new(TagTaxonomy::default_taxonomy());
    let lexicon = Arc::new(Lexicon::default_lexicon(&taxonomy));
    Backends {
        taxonomy,
        lexicon,
        llm,
        replay,
        max_prompt_candidates: DEFAULT_LIMIT,
    }
}

/// Rule extraction and deterministic refinement only.
pub fn desk_pipeline() -> Pipeline {
    Pipeline::standard(desk_pipeline_config(), default_backends(None, None))
}
