use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use async_trait::async_trait;
use serde::Deserialize;

use super::{
    playlist_title, refine_deterministic, RefinementBackend, RefinementError, RefinementRequest, Refiner, Selection,
};
use crate::catalog::TrackId;
use crate::extraction::recover_json_object;
use crate::llm::{CompletionRequest, LlmGateway, Purpose};
use crate::taxonomy::Tag;

/// Fewest surviving ids accepted from a model answer, before capping by the
/// target length and by the longest playlist the candidates allow.
const MIN_SURVIVORS: usize = 5;
const TOKENS_PER_PICK: u32 = 12;

/// Query line followed by one numbered line per candidate.
pub fn candidates_to_text(request: &RefinementRequest) -> String {
    let mut out = format!("Query: {}\n", request.query_text);
    for (i, t) in request.ranked.iter().enumerate() {
        let tags: Vec<String> = t.tags.iter().map(Tag::to_string).collect();
        let score = match t.score {
            Some(s) => format!("{s:.4}"),
            None => "–".to_string(),
        };
        let _ = writeln!(
            out,
            "{}. {} | {} | {} | {} | score={}",
            i + 1,
            t.track_id,
            t.title,
            t.artist_name,
            tags.join(", "),
            score
        );
    }
    out
}

pub fn build_refinement_prompt(request: &RefinementRequest) -> String {
    let mut p = String::new();
    p.push_str(
        "You curate a playlist for a listener's request. The candidate tracks below already match the \
         request's tags and are listed from closest to furthest from the listener's taste.\n\n",
    );
    p.push_str(&candidates_to_text(request));
    let _ = write!(
        p,
        "\nRules:\n\
         - Pick at most {len} tracks that best match the request, in play order.\n\
         - Include at most {cap} tracks by the same artist.\n\
         - Favour artist diversity and the overall quality and coherence of the playlist.\n\
         - Use only track ids from the list above.\n\
         - Answer with one JSON object and nothing else, following this schema:\n\
         {{\"title\": \"<playlist title>\", \"track_ids\": [\"<track_id>\", ...]}}\n",
        len = request.target_length,
        cap = request.artist_cap,
    );
    p
}

#[derive(Debug, Deserialize)]
struct TracklistResponse {
    #[serde(default)]
    title: String,
    track_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTracklist {
    pub track_ids: Vec<TrackId>,
    pub title: String,
    pub hallucinated: usize,
    pub duplicates: usize,
}

/// Validates a model tracklist: unknown ids are dropped and counted,
/// duplicates collapse to the first occurrence, later artist-cap violations
/// are dropped, and the result is cut to the target length.
pub fn parse_llm_tracklist(
    response_text: &str,
    request: &RefinementRequest,
) -> Result<ParsedTracklist, RefinementError> {
    let parsed: TracklistResponse = recover_json_object(response_text).ok_or_else(|| {
        RefinementError::UnparseableResponse(response_text.chars().take(120).collect())
    })?;
    let artists: HashMap<&str, &str> = request
        .ranked
        .iter()
        .map(|t| (t.track_id.as_str(), t.artist_id.as_str()))
        .collect();
    let mut hallucinated = 0;
    let mut duplicates = 0;
    let mut seen = HashSet::new();
    let mut per_artist: HashMap<&str, usize> = HashMap::new();
    let mut kept = Vec::new();
    for raw in &parsed.track_ids {
        let id = raw.trim();
        let Some(&artist) = artists.get(id) else {
            hallucinated += 1;
            continue;
        };
        if !seen.insert(id) {
            duplicates += 1;
            continue;
        }
        let n = per_artist.entry(artist).or_default();
        if *n >= request.artist_cap {
            continue;
        }
        *n += 1;
        kept.push(TrackId::from(id));
    }
    kept.truncate(request.target_length);
    if kept.len() < MIN_SURVIVORS.min(request.max_achievable()) {
        return Err(RefinementError::FallbackRequired {
            survivors: kept.len(),
            hallucinated,
        });
    }
    Ok(ParsedTracklist {
        track_ids: kept,
        title: parsed.title.trim().to_string(),
        hallucinated,
        duplicates,
    })
}

/// Model-driven selection with the greedy walk as fallback.
pub struct LlmRefiner {
    gateway: Arc<LlmGateway>,
    max_prompt_candidates: usize,
}

impl LlmRefiner {
    pub fn new(gateway: Arc<LlmGateway>, max_prompt_candidates: usize) -> Self {
        LlmRefiner {
            gateway,
            max_prompt_candidates: max_prompt_candidates.max(1),
        }
    }

    async fn try_model(&self, request: &RefinementRequest) -> Result<Selection, RefinementError> {
        let mut view = request.clone();
        view.ranked.truncate(self.max_prompt_candidates);
        let prompt = build_refinement_prompt(&view);
        let max_tokens = (view.target_length as u32).saturating_mul(TOKENS_PER_PICK).max(64);
        let completion = self
            .gateway
            .complete(&CompletionRequest::new(Purpose::Refinement, prompt, max_tokens))
            .await
            .map_err(|e| RefinementError::UnparseableResponse(e.to_string()))?;
        let parsed = parse_llm_tracklist(&completion.text, &view)?;
        let title = if parsed.title.is_empty() {
            playlist_title(&request.title_tags)
        } else {
            parsed.title
        };
        Ok(Selection {
            track_ids: parsed.track_ids,
            title,
            backend_used: RefinementBackend::Llm,
            hallucinations: parsed.hallucinated,
        })
    }
}

#[async_trait]
impl Refiner for LlmRefiner {
    fn backend(&self) -> RefinementBackend {
        RefinementBackend::Llm
    }

    async fn refine(&self, request: &RefinementRequest) -> Result<Selection, RefinementError> {
        if request.ranked.is_empty() {
            return Err(RefinementError::EmptyPlaylist);
        }
        match self.try_model(request).await {
            Ok(sel) => Ok(sel),
            Err(err) => {
                tracing::warn!(%err, "llm refinement unusable, using deterministic selection");
                let mut sel = refine_deterministic(request)?;
                if let RefinementError::FallbackRequired { hallucinated, .. } = err {
                    sel.hallucinations = hallucinated;
                }
                Ok(sel)
            }
        }
    }
}
