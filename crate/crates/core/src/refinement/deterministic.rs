use std::collections::HashMap;

use async_trait::async_trait;

use super::{RefinementBackend, RefinementError, RefinementRequest, Refiner, Selection};
use crate::taxonomy::Tag;

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// "1990s · Focus mix" from the top two tags; "Your mix" without tags.
pub fn playlist_title(tags: &[Tag]) -> String {
    let parts: Vec<String> = tags.iter().take(2).map(|t| capitalize(&t.value)).collect();
    if parts.is_empty() {
        "Your mix".to_string()
    } else {
        format!("{} mix", parts.join(" · "))
    }
}

/// Greedy walk of the ranked list: take a track while its artist is under
/// the cap, stop at the target length.
pub fn refine_deterministic(request: &RefinementRequest) -> Result<Selection, RefinementError> {
    if request.ranked.is_empty() {
        return Err(RefinementError::EmptyPlaylist);
    }
    let mut per_artist: HashMap<&str, usize> = HashMap::new();
    let mut track_ids = Vec::with_capacity(request.target_length.min(request.ranked.len()));
    for t in &request.ranked {
        if track_ids.len() == request.target_length {
            break;
        }
        let n = per_artist.entry(&t.artist_id).or_default();
        if *n < request.artist_cap {
            *n += 1;
            track_ids.push(t.track_id.clone());
        }
    }
    Ok(Selection {
        track_ids,
        title: playlist_title(&request.title_tags),
        backend_used: RefinementBackend::Deterministic,
        hallucinations: 0,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicRefiner;

#[async_trait]
impl Refiner for DeterministicRefiner {
    fn backend(&self) -> RefinementBackend {
        RefinementBackend::Deterministic
    }

    async fn refine(&self, request: &RefinementRequest) -> Result<Selection, RefinementError> {
        refine_deterministic(request)
    }
}
