//! Final tracklist selection under length, dedup and artist-diversity
//! constraints.
//!
//! [`DeterministicRefiner`] walks the personalized order greedily;
//! [`LlmRefiner`] asks a model to pick tracks and validates its answer,
//! falling back to the greedy walk whenever the answer is unusable.

mod deterministic;
mod llm;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TrackId;
use crate::taxonomy::Tag;

pub use deterministic::{playlist_title, refine_deterministic, DeterministicRefiner};
pub use llm::{build_refinement_prompt, candidates_to_text, parse_llm_tracklist, LlmRefiner, ParsedTracklist};

pub const DEFAULT_TARGET_LENGTH: usize = 30;
pub const DEFAULT_ARTIST_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedTrack {
    pub track_id: TrackId,
    pub title: String,
    pub artist_id: String,
    pub artist_name: String,
    pub tags: Vec<Tag>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRequest {
    pub query_text: String,
    pub ranked: Vec<RankedTrack>,
    pub target_length: usize,
    pub artist_cap: usize,
    /// Extracted query tags, most important first. Used for titling.
    pub title_tags: Vec<Tag>,
}

impl RefinementRequest {
    pub fn new(
        query_text: impl Into<String>,
        ranked: Vec<RankedTrack>,
        target_length: usize,
        artist_cap: usize,
        title_tags: Vec<Tag>,
    ) -> Result<Self, RefinementError> {
        if target_length == 0 || artist_cap == 0 {
            return Err(RefinementError::InvalidRequest(
                "target length and artist cap must be >= 1".into(),
            ));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ranked.iter().find(|t| !seen.insert(&t.track_id)) {
            return Err(RefinementError::InvalidRequest(format!(
                "track {} listed twice",
                dup.track_id
            )));
        }
        Ok(RefinementRequest {
            query_text: query_text.into(),
            ranked,
            target_length,
            artist_cap,
            title_tags,
        })
    }

    pub fn artist_of(&self, id: &TrackId) -> Option<&str> {
        self.ranked
            .iter()
            .find(|t| &t.track_id == id)
            .map(|t| t.artist_id.as_str())
    }

    /// Longest playlist any selection could reach under the length and
    /// artist caps.
    pub fn max_achievable(&self) -> usize {
        let mut per_artist: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &self.ranked {
            *per_artist.entry(&t.artist_id).or_default() += 1;
        }
        per_artist
            .values()
            .map(|&n| n.min(self.artist_cap))
            .sum::<usize>()
            .min(self.target_length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementBackend {
    Deterministic,
    Llm,
}

impl RefinementBackend {
    pub fn as_str(self) -> &'static str {
        match self {
            RefinementBackend::Deterministic => "deterministic",
            RefinementBackend::Llm => "llm",
        }
    }
}

impl fmt::Display for RefinementBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub track_ids: Vec<TrackId>,
    pub title: String,
    pub backend_used: RefinementBackend,
    /// Ids the model returned that were not among the candidates.
    pub hallucinations: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefinementError {
    #[error("no candidates to build a playlist from")]
    EmptyPlaylist,
    #[error("unparseable llm response: {0}")]
    UnparseableResponse(String),
    #[error("only {survivors} usable track(s) in the llm answer ({hallucinated} hallucinated)")]
    FallbackRequired { survivors: usize, hallucinated: usize },
    #[error("invalid refinement request: {0}")]
    InvalidRequest(String),
    #[error("unknown refinement backend `{0}`")]
    UnknownBackend(String),
}

#[async_trait]
pub trait Refiner: Send + Sync {
    fn backend(&self) -> RefinementBackend;

    async fn refine(&self, request: &RefinementRequest) -> Result<Selection, RefinementError>;
}

#[derive(Clone, Default)]
pub struct RefinerRegistry {
    by_name: BTreeMap<String, Arc<dyn Refiner>>,
}

impl RefinerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, refiner: Arc<dyn Refiner>) -> &mut Self {
        self.by_name.insert(name.to_string(), refiner);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn Refiner>, RefinementError> {
        self.by_name
            .get(name)
            .ok_or_else(|| RefinementError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }
}

/// Checks subset, dedup, artist cap and length for a selection.
pub fn check_selection(selection: &[TrackId], request: &RefinementRequest) -> Result<(), String> {
    if selection.len() > request.target_length {
        return Err(format!(
            "{} tracks exceeds target length {}",
            selection.len(),
            request.target_length
        ));
    }
    let mut seen = HashSet::new();
    let mut per_artist: BTreeMap<&str, usize> = BTreeMap::new();
    for id in selection {
        if !seen.insert(id) {
            return Err(format!("{id} selected twice"));
        }
        let artist = request
            .artist_of(id)
            .ok_or_else(|| format!("{id} is not a candidate"))?;
        let n = per_artist.entry(artist).or_default();
        *n += 1;
        if *n > request.artist_cap {
            return Err(format!("artist {artist} exceeds cap {}", request.artist_cap));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn track(id: &str, artist: &str) -> RankedTrack {
        RankedTrack {
            track_id: TrackId::from(id),
            title: format!("title {id}"),
            artist_id: artist.to_string(),
            artist_name: format!("Artist {artist}"),
            tags: Vec::new(),
            score: None,
        }
    }

    pub fn request(tracks: &[(&str, &str)], length: usize, cap: usize) -> RefinementRequest {
        RefinementRequest::new(
            "q",
            tracks.iter().map(|(id, a)| track(id, a)).collect(),
            length,
            cap,
            Vec::new(),
        )
        .unwrap()
    }
}
