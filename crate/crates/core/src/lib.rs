//! Free-text to playlist: tag extraction, tag-indexed retrieval,
//! embedding personalization and constrained refinement.

pub mod analytics;
pub mod catalog;
pub mod extraction;
pub mod fixtures;
pub mod llm;
pub mod personalization;
pub mod pipeline;
pub mod records;
pub mod refinement;
pub mod retrieval;
pub mod snapshot;
pub mod synth;
pub mod taxonomy;

pub use catalog::{load_catalog, Catalog, Track, TrackId};
pub use extraction::{ExtractionResult, Query, TagExtractor};
pub use pipeline::{Backends, GenerateOptions, Pipeline, PipelineConfig, PipelineError, PipelineOutput};
pub use records::{EventType, GenerationRecord, Playlist, PlaylistEvent, Provenance};
pub use snapshot::{Snapshot, SnapshotCell};
pub use taxonomy::{Facet, Tag, TagTaxonomy};
