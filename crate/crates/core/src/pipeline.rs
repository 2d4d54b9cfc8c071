//! End-to-end orchestration: extract, retrieve, rank, refine.
//!
//! LLM stages degrade to their deterministic counterparts on failure or
//! timeout; any such fallback marks the result degraded.

use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{
    ExtractionError, ExtractionResult, ExtractorRegistry, Lexicon, LlmExtractor, Query, RuleExtractor, TagExtractor,
};
use crate::llm::LlmGateway;
use crate::records::{GenerationRecord, Playlist, Provenance};
use crate::refinement::{
    refine_deterministic, DeterministicRefiner, LlmRefiner, RankedTrack, RefinementError, RefinementRequest, RefinerRegistry, Selection,
    DEFAULT_ARTIST_CAP, DEFAULT_TARGET_LENGTH,
};
use crate::retrieval::{
    retrieve, to_candidate_document, CandidateSet, MatchSpec, RetrievalConfig, RetrievalError, DEFAULT_LIMIT,
    DEFAULT_MIN_CANDIDATES,
};
use crate::personalization::{rank_for_user, Ranking};
use crate::snapshot::Snapshot;
use crate::taxonomy::TagTaxonomy;

pub const DEFAULT_STAGE_TIMEOUT: Duration = Duration::from_secs(12);
pub const MAX_PLAYLIST_LENGTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub target_length: usize,
    pub artist_cap: usize,
    pub min_candidates: usize,
    pub limit: usize,
    #[serde(with = "millis")]
    pub extraction_timeout: Duration,
    #[serde(with = "millis")]
    pub refinement_timeout: Duration,
    pub extraction_backend: String,
    pub refinement_backend: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_length: DEFAULT_TARGET_LENGTH,
            artist_cap: DEFAULT_ARTIST_CAP,
            min_candidates: DEFAULT_MIN_CANDIDATES,
            limit: DEFAULT_LIMIT,
            extraction_timeout: DEFAULT_STAGE_TIMEOUT,
            refinement_timeout: DEFAULT_STAGE_TIMEOUT,
            extraction_backend: "rule".into(),
            refinement_backend: "deterministic".into(),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub length: Option<usize>,
    pub extraction_backend: Option<String>,
    pub refinement_backend: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("no tags could be extracted from the query")]
    NoTagsExtracted,
    #[error("no track matches the extracted tags")]
    EmptyCandidateSet,
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    /// User-facing advice for errors a reworded query can fix.
    pub fn reformulation_hint(&self) -> Option<&'static str> {
        match self {
            PipelineError::NoTagsExtracted => Some(
                "Try describing a genre, mood, decade or language, for example \"upbeat 80s pop\" or \"calm jazz for studying\".",
            ),
            PipelineError::EmptyCandidateSet => {
                Some("No tracks match all of those tags. Try removing one, or use a broader genre or decade.")
            }
            _ => None,
        }
    }
}

impl From<ExtractionError> for PipelineError {
    fn from(e: ExtractionError) -> Self {
        match e {
            ExtractionError::InvalidQuery(m) => PipelineError::InvalidQuery(m),
            ExtractionError::NoTagsExtracted => PipelineError::NoTagsExtracted,
            ExtractionError::UnknownBackend(b) => PipelineError::InvalidOptions(format!("unknown extraction backend `{b}`")),
            other => PipelineError::Internal(other.to_string()),
        }
    }
}

impl From<RetrievalError> for PipelineError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::EmptyCandidateSet => PipelineError::EmptyCandidateSet,
            other => PipelineError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageTimings {
    pub extraction_us: u64,
    pub retrieval_us: u64,
    pub ranking_us: u64,
    pub refinement_us: u64,
    pub total_us: u64,
}

/// Stage-by-stage view of one request, stamped with the snapshot it ran on.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineTrace {
    pub snapshot_id: u64,
    pub catalog_snapshot: u64,
    pub index_snapshot: u64,
    pub embedding_snapshot: u64,
    pub extraction: ExtractionResult,
    pub match_spec: MatchSpec,
    pub candidates: CandidateSet,
    pub candidate_document: String,
    pub ranking: Ranking,
    pub selection: Selection,
    pub degraded_stages: Vec<&'static str>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub playlist: Playlist,
    pub record: GenerationRecord,
    pub trace: PipelineTrace,
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

pub struct Pipeline {
    config: PipelineConfig,
    extractors: ExtractorRegistry,
    refiners: RefinerRegistry,
    rule: Arc<RuleExtractor>,
}

impl Pipeline {
    /// `rule` doubles as the fallback when an extractor times out.
    pub fn new(
        config: PipelineConfig,
        extractors: ExtractorRegistry,
        refiners: RefinerRegistry,
        rule: Arc<RuleExtractor>,
    ) -> Self {
        Pipeline {
            config,
            extractors,
            refiners,
            rule,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn extractors(&self) -> &ExtractorRegistry {
        &self.extractors
    }

    pub fn refiners(&self) -> &RefinerRegistry {
        &self.refiners
    }

    pub async fn generate(
        &self,
        snapshot: &Snapshot,
        user_id: &str,
        query_text: &str,
        options: &GenerateOptions,
    ) -> Result<PipelineOutput, PipelineError> {
        let started = Instant::now();
        let created_at = Utc::now();
        let query = Query::new(query_text, user_id)?;
        let length = options.length.unwrap_or(self.config.target_length);
        if length == 0 || length > MAX_PLAYLIST_LENGTH {
            return Err(PipelineError::InvalidOptions(format!(
                "length must be between 1 and {MAX_PLAYLIST_LENGTH}"
            )));
        }
        let mut degraded_stages = Vec::new();
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let extraction = self.extract(&query, options, &mut degraded_stages).await?;
        timings.extraction_us = micros(t);

        let t = Instant::now();
        let spec = MatchSpec::from_extraction(&extraction, self.config.limit)?;
        let retrieval_config = RetrievalConfig {
            min_candidates: self.config.min_candidates,
        };
        let candidates = retrieve(&snapshot.index, &spec, &retrieval_config)?;
        let candidate_document = to_candidate_document(&candidates, &snapshot.catalog)?;
        timings.retrieval_us = micros(t);

        let t = Instant::now();
        let ranking = rank_for_user(user_id, &candidates, &snapshot.embeddings);
        timings.ranking_us = micros(t);

        let t = Instant::now();
        let request = self.refinement_request(snapshot, &query, &extraction, &ranking, length)?;
        let selection = self.refine(&request, options, &mut degraded_stages).await?;
        timings.refinement_us = micros(t);
        timings.total_us = micros(started);

        let degraded = !degraded_stages.is_empty();
        let playlist_id = uuid::Uuid::new_v4().simple().to_string();
        let provenance = Provenance {
            extraction_backend: extraction.backend_used,
            refinement_backend: selection.backend_used,
            relaxation_level: candidates.relaxation_level,
            personalized: ranking.personalized,
            degraded,
        };
        let playlist = Playlist {
            playlist_id: playlist_id.clone(),
            title: selection.title.clone(),
            track_ids: selection.track_ids.clone(),
            provenance,
            created_at,
        };
        let record = GenerationRecord {
            playlist_id,
            user_id: user_id.to_string(),
            query: query.text().to_string(),
            tags: extraction.predictions.clone(),
            dropped_tags: extraction.dropped_tags,
            relaxation_level: candidates.relaxation_level,
            personalized: ranking.personalized,
            degraded,
            extraction_backend: extraction.backend_used,
            refinement_backend: selection.backend_used,
            catalog_snapshot: snapshot.catalog.snapshot_id(),
            embedding_snapshot: snapshot.embeddings.snapshot_id(),
            hallucinations_dropped: selection.hallucinations,
            created_at,
            completed_at: Utc::now(),
        };
        let trace = PipelineTrace {
            snapshot_id: snapshot.id,
            catalog_snapshot: snapshot.catalog.snapshot_id(),
            index_snapshot: snapshot.index.built_from_snapshot(),
            embedding_snapshot: snapshot.embeddings.snapshot_id(),
            extraction,
            match_spec: spec,
            candidates,
            candidate_document,
            ranking,
            selection,
            degraded_stages,
            timings,
        };
        Ok(PipelineOutput { playlist, record, trace })
    }

    async fn extract(
        &self,
        query: &Query,
        options: &GenerateOptions,
        degraded: &mut Vec<&'static str>,
    ) -> Result<ExtractionResult, PipelineError> {
        let name = options
            .extraction_backend
            .as_deref()
            .unwrap_or(&self.config.extraction_backend);
        let extractor = self.extractors.get(name)?;
        let requested = extractor.backend();
        let result = match tokio::time::timeout(self.config.extraction_timeout, extractor.extract(query)).await {
            Ok(r) => r?,
            Err(_) => {
                tracing::warn!(backend = name, "extraction timed out, using rule backend");
                self.rule.extract(query).await?
            }
        };
        if result.backend_used != requested {
            degraded.push("extraction");
        }
        Ok(result)
    }

    fn refinement_request(
        &self,
        snapshot: &Snapshot,
        query: &Query,
        extraction: &ExtractionResult,
        ranking: &Ranking,
        length: usize,
    ) -> Result<RefinementRequest, PipelineError> {
        let ranked = ranking
            .tracks
            .iter()
            .map(|s| {
                let t = snapshot
                    .catalog
                    .get(&s.track_id)
                    .ok_or_else(|| PipelineError::Internal(format!("ranked track {} missing from catalog", s.track_id)))?;
                Ok(RankedTrack {
                    track_id: t.track_id.clone(),
                    title: t.title.clone(),
                    artist_id: t.artist_id.clone(),
                    artist_name: t.artist_name.clone(),
                    tags: t.tags.iter().cloned().collect(),
                    score: s.score,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        RefinementRequest::new(
            query.text(),
            ranked,
            length,
            self.config.artist_cap,
            extraction.tags().cloned().collect(),
        )
        .map_err(|e| PipelineError::Internal(e.to_string()))
    }

    async fn refine(
        &self,
        request: &RefinementRequest,
        options: &GenerateOptions,
        degraded: &mut Vec<&'static str>,
    ) -> Result<Selection, PipelineError> {
        let name = options
            .refinement_backend
            .as_deref()
            .unwrap_or(&self.config.refinement_backend);
        let refiner = self
            .refiners
            .get(name)
            .map_err(|e| PipelineError::InvalidOptions(e.to_string()))?;
        let requested = refiner.backend();
        let outcome = tokio::time::timeout(self.config.refinement_timeout, refiner.refine(request)).await;
        let selection = match outcome {
            Ok(Ok(sel)) => sel,
            Ok(Err(RefinementError::EmptyPlaylist)) => return Err(PipelineError::EmptyCandidateSet),
            Ok(Err(err)) => {
                tracing::warn!(%err, backend = name, "refinement failed, using deterministic selection");
                refine_deterministic(request).map_err(|_| PipelineError::EmptyCandidateSet)?
            }
            Err(_) => {
                tracing::warn!(backend = name, "refinement timed out, using deterministic selection");
                refine_deterministic(request).map_err(|_| PipelineError::EmptyCandidateSet)?
            }
        };
        if selection.backend_used != requested {
            degraded.push("refinement");
        }
        Ok(selection)
    }
}

/// Shared pieces for [`Pipeline::standard`]. LLM-backed strategies are only
/// registered when their gateway is present.
pub struct Backends {
    pub taxonomy: Arc<TagTaxonomy>,
    pub lexicon: Arc<Lexicon>,
    pub llm: Option<Arc<LlmGateway>>,
    pub replay: Option<Arc<LlmGateway>>,
    pub max_prompt_candidates: usize,
}

impl Pipeline {
    /// Registers `rule` and `deterministic`, plus `llm` (both stages) and
    /// `replay` (extraction) when gateways are supplied.
    pub fn standard(config: PipelineConfig, backends: Backends) -> Self {
        let rule = Arc::new(RuleExtractor::new(backends.taxonomy.clone(), backends.lexicon.clone()));
        let mut extractors = ExtractorRegistry::new();
        extractors.register("rule", rule.clone());
        let mut refiners = RefinerRegistry::new();
        refiners.register("deterministic", Arc::new(DeterministicRefiner));
        if let Some(gw) = backends.llm {
            extractors.register(
                "llm",
                Arc::new(LlmExtractor::new(gw.clone(), backends.taxonomy.clone(), (*rule).clone())),
            );
            refiners.register("llm", Arc::new(LlmRefiner::new(gw, backends.max_prompt_candidates)));
        }
        if let Some(gw) = backends.replay {
            extractors.register(
                "replay",
                Arc::new(LlmExtractor::replay(gw, backends.taxonomy.clone(), (*rule).clone())),
            );
        }
        Pipeline::new(config, extractors, refiners, rule)
    }
}
