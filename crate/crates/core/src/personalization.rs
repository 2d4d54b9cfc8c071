//! Re-ranking candidates by user–track cosine similarity over collaborative
//! filtering embeddings.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::TrackId;
use crate::retrieval::CandidateSet;

pub const EMBEDDING_HEADER_PREFIX: &str = "t2p-embeddings v1 dim=";
pub const DEFAULT_DIMENSION: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PersonalizationError {
    #[error("row {row}: dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch { row: usize, expected: usize, got: usize },
    #[error("row {row}: zero vector")]
    ZeroVector { row: usize },
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("cannot read embeddings: {0}")]
    Io(String),
}

/// Finite, nonzero vector of single-precision components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    components: Vec<f32>,
    norm: f64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum VectorError {
    #[error("vector has non-finite components")]
    NonFinite,
    #[error("vector is zero")]
    Zero,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

impl EmbeddingVector {
    pub fn new(components: Vec<f32>) -> Result<Self, VectorError> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        let norm = components.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(VectorError::Zero);
        }
        Ok(EmbeddingVector { components, norm })
    }

    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

/// Cosine similarity accumulated in double precision, clamped to [-1, 1].
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, VectorError> {
    if u.dimension() != v.dimension() {
        return Err(VectorError::DimensionMismatch(u.dimension(), v.dimension()));
    }
    Ok((u.dot(v) / (u.norm * v.norm)).clamp(-1.0, 1.0))
}

/// User and track vectors sharing one dimension. Each vector carries its
/// norm, computed once at load, so scoring is a dot product and a multiply.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dimension: usize,
    users: HashMap<String, EmbeddingVector>,
    tracks: HashMap<TrackId, EmbeddingVector>,
    snapshot_id: u64,
}

impl EmbeddingStore {
    pub fn new(dimension: usize, snapshot_id: u64) -> Self {
        EmbeddingStore {
            dimension,
            users: HashMap::new(),
            tracks: HashMap::new(),
            snapshot_id,
        }
    }

    pub fn insert_user(&mut self, id: impl Into<String>, v: EmbeddingVector) -> Result<(), VectorError> {
        self.check_dim(&v)?;
        self.users.insert(id.into(), v);
        Ok(())
    }

    pub fn insert_track(&mut self, id: TrackId, v: EmbeddingVector) -> Result<(), VectorError> {
        self.check_dim(&v)?;
        self.tracks.insert(id, v);
        Ok(())
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<(), VectorError> {
        if v.dimension() != self.dimension {
            return Err(VectorError::DimensionMismatch(self.dimension, v.dimension()));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn snapshot_id(&self) -> u64 {
        self.snapshot_id
    }

    pub fn with_snapshot_id(mut self, snapshot_id: u64) -> Self {
        self.snapshot_id = snapshot_id;
        self
    }

    pub fn user(&self, id: &str) -> Option<&EmbeddingVector> {
        self.users.get(id)
    }

    pub fn track(&self, id: &TrackId) -> Option<&EmbeddingVector> {
        self.tracks.get(id)
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn track_count(&self) -> usize {
        self.tracks.len()
    }

    /// Inverse of [`EmbeddingStore::parse`]: users then tracks, each sorted
    /// by id. `f32` display round-trips exactly.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!("{EMBEDDING_HEADER_PREFIX}{}\n", self.dimension);
        let mut users: Vec<_> = self.users.iter().collect();
        users.sort_by(|a, b| a.0.cmp(b.0));
        let mut tracks: Vec<_> = self.tracks.iter().collect();
        tracks.sort_by(|a, b| a.0.cmp(b.0));
        let rows = users
            .into_iter()
            .map(|(id, v)| ("user", id.as_str(), v))
            .chain(tracks.into_iter().map(|(id, v)| ("track", id.as_str(), v)));
        for (kind, id, v) in rows {
            let _ = write!(out, "{kind},{id}");
            for c in &v.components {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the `t2p-embeddings v1 dim=<d>` format. Row numbers in errors
    /// are 1-based file lines (the header is row 1).
    pub fn parse(text: &str, snapshot_id: u64) -> Result<Self, PersonalizationError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(PersonalizationError::MalformedRow {
            row: 1,
            reason: "missing header".into(),
        })?;
        let dimension: usize = header
            .trim()
            .strip_prefix(EMBEDDING_HEADER_PREFIX)
            .and_then(|d| d.trim().parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| PersonalizationError::MalformedRow {
                row: 1,
                reason: format!("bad header {header:?}"),
            })?;
        let mut store = EmbeddingStore::new(dimension, snapshot_id);
        for (idx, line) in lines {
            let row = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| PersonalizationError::MalformedRow { row, reason };
            let mut fields = line.split(',');
            let kind = fields.next().unwrap_or_default().trim();
            let id = fields
                .next()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| malformed("missing id".into()))?;
            let components: Vec<f32> = fields
                .map(|c| c.trim().parse::<f32>().map_err(|e| malformed(format!("{c:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if components.len() != dimension {
                return Err(PersonalizationError::DimensionMismatch {
                    row,
                    expected: dimension,
                    got: components.len(),
                });
            }
            let vector = EmbeddingVector::new(components).map_err(|e| match e {
                VectorError::Zero => PersonalizationError::ZeroVector { row },
                other => malformed(other.to_string()),
            })?;
            let duplicate = match kind {
                "user" => store.users.insert(id.to_string(), vector).is_some(),
                "track" => store.tracks.insert(TrackId::from(id), vector).is_some(),
                other => return Err(malformed(format!("unknown row kind {other:?}"))),
            };
            if duplicate {
                return Err(malformed(format!("duplicate {kind} id {id}")));
            }
        }
        Ok(store)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore, PersonalizationError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| PersonalizationError::Io(format!("{}: {e}", path.display())))?;
    EmbeddingStore::parse(&text, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredTrack {
    pub track_id: TrackId,
    /// Cosine similarity; `None` when the track or user has no embedding.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub tracks: Vec<ScoredTrack>,
    pub personalized: bool,
}

/// Scored tracks by descending similarity (ties: ascending id), then tracks
/// without an embedding in retrieval order. An unknown user passes the
/// candidates through unscored.
pub fn rank_for_user(user_id: &str, candidates: &CandidateSet, store: &EmbeddingStore) -> Ranking {
    let Some(user) = store.user(user_id) else {
        return Ranking {
            tracks: candidates
                .track_ids
                .iter()
                .map(|id| ScoredTrack {
                    track_id: id.clone(),
                    score: None,
                })
                .collect(),
            personalized: false,
        };
    };
    let inv_user = 1.0 / user.norm;
    let mut scored = Vec::with_capacity(candidates.len());
    let mut unscored = Vec::new();
    for id in &candidates.track_ids {
        match store.track(id) {
            Some(v) => {
                let s = (user.dot(v) * inv_user / v.norm).clamp(-1.0, 1.0);
                scored.push(ScoredTrack {
                    track_id: id.clone(),
                    score: Some(s),
                });
            }
            None => unscored.push(ScoredTrack {
                track_id: id.clone(),
                score: None,
            }),
        }
    }
    scored.sort_by(|a, b| {
        let (sa, sb) = (a.score.unwrap_or_default(), b.score.unwrap_or_default());
        sb.partial_cmp(&sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.track_id.cmp(&b.track_id))
    });
    scored.extend(unscored);
    Ranking {
        tracks: scored,
        personalized: true,
    }
}
