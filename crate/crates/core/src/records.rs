//! Persisted pipeline output: playlists, generation records and
//! engagement events.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::TrackId;
use crate::extraction::{ExtractionBackend, TagPrediction};
use crate::refinement::RefinementBackend;
use crate::taxonomy::Tag;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub extraction_backend: ExtractionBackend,
    pub refinement_backend: RefinementBackend,
    pub relaxation_level: u32,
    pub personalized: bool,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playlist {
    pub playlist_id: String,
    pub title: String,
    pub track_ids: Vec<TrackId>,
    pub provenance: Provenance,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub playlist_id: String,
    pub user_id: String,
    pub query: String,
    pub tags: Vec<TagPrediction>,
    pub dropped_tags: usize,
    pub relaxation_level: u32,
    pub personalized: bool,
    pub degraded: bool,
    pub extraction_backend: ExtractionBackend,
    pub refinement_backend: RefinementBackend,
    pub catalog_snapshot: u64,
    pub embedding_snapshot: u64,
    pub hallucinations_dropped: usize,
    pub created_at: DateTime<Utc>,
    pub completed_at: DateTime<Utc>,
}

impl GenerationRecord {
    pub fn extracted_tags(&self) -> impl Iterator<Item = &Tag> {
        self.tags.iter().map(|p| &p.tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Listened,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Listened => "listened",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlaylistEvent {
    pub playlist_id: String,
    pub event_type: EventType,
    pub occurred_at: DateTime<Utc>,
}
