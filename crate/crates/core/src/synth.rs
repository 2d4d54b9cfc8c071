//! Seeded synthetic catalogs, embeddings and engagement logs for tests,
//! benchmarks and the `synth` CLI command. Same seed, same output.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::catalog::{Catalog, Track, TrackId};
use crate::extraction::{ExtractionBackend, Explicitness, TagPrediction};
use crate::personalization::{EmbeddingStore, EmbeddingVector};
use crate::records::{EventType, GenerationRecord, PlaylistEvent};
use crate::refinement::RefinementBackend;
use crate::taxonomy::{Facet, Tag, TagTaxonomy};

pub const MAX_TAGS_PER_TRACK: usize = 4;
pub const TRACKS_PER_ARTIST: usize = 8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn track_id(i: usize) -> TrackId {
    TrackId(format!("S{i:06}"))
}

fn pick(rng: &mut ChaCha8Rng, taxonomy: &TagTaxonomy, facet: Facet) -> Option<Tag> {
    let values: Vec<&str> = taxonomy.values(facet).collect();
    values.choose(rng).map(|v| Tag::new_unchecked(facet, *v))
}

/// Each track gets a decade, mood and genre with high probability plus an
/// occasional language or artist-gender tag; never more than
/// [`MAX_TAGS_PER_TRACK`].
pub fn synthetic_tracks(n: usize, seed: u64, taxonomy: &TagTaxonomy) -> Vec<Track> {
    let mut rng = rng(seed);
    let artists = (n / TRACKS_PER_ARTIST).max(1);
    (0..n)
        .map(|i| {
            let mut tags = BTreeSet::new();
            for (facet, p) in [(Facet::Decade, 0.95), (Facet::Mood, 0.9), (Facet::Genre, 0.9)] {
                if rng.random_bool(p) {
                    tags.extend(pick(&mut rng, taxonomy, facet));
                }
            }
            if rng.random_bool(0.3) {
                let facet = if rng.random_bool(0.5) { Facet::Language } else { Facet::ArtistGender };
                tags.extend(pick(&mut rng, taxonomy, facet));
            }
            debug_assert!(tags.len() <= MAX_TAGS_PER_TRACK);
            let artist = rng.random_range(0..artists);
            Track {
                track_id: track_id(i),
                title: format!("Synthetic {i}"),
                artist_id: format!("AR{artist:05}"),
                artist_name: format!("Artist {artist}"),
                duration_sec: rng.random_range(120..360),
                tags,
            }
        })
        .collect()
}

pub fn synthetic_catalog(n: usize, seed: u64, taxonomy: TagTaxonomy) -> Catalog {
    let tracks = synthetic_tracks(n, seed, &taxonomy);
    Catalog::from_tracks(tracks, taxonomy, 1).expect("synthetic tracks are valid")
}

/// Standard-normal components; the all-zero vector is redrawn.
pub fn random_vector(rng: &mut ChaCha8Rng, dimension: usize) -> EmbeddingVector {
    loop {
        let c: Vec<f32> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(v) = EmbeddingVector::new(c) {
            return v;
        }
    }
}

/// Users `U0..U{users-1}` and one vector per catalog track.
pub fn synthetic_embeddings(catalog: &Catalog, users: usize, dimension: usize, seed: u64) -> EmbeddingStore {
    let mut rng = rng(seed);
    let mut store = EmbeddingStore::new(dimension, 1);
    for u in 0..users {
        store
            .insert_user(format!("U{u}"), random_vector(&mut rng, dimension))
            .expect("dimension matches");
    }
    for id in catalog.track_ids() {
        store
            .insert_track(id.clone(), random_vector(&mut rng, dimension))
            .expect("dimension matches");
    }
    store
}

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Records created over 30 days, each with 1 to 4 tags and 0 to 3
/// `listened` events scattered from one day before to ten days after
/// creation. Events may reference unknown playlists.
pub fn synthetic_log(
    n: usize,
    seed: u64,
    taxonomy: &TagTaxonomy,
) -> (Vec<GenerationRecord>, Vec<PlaylistEvent>) {
    let mut rng = rng(seed);
    let mut records = Vec::with_capacity(n);
    let mut events = Vec::new();
    for i in 0..n {
        let created = epoch() + Duration::seconds(rng.random_range(0..30 * 86_400));
        let mut tags = BTreeSet::new();
        for _ in 0..rng.random_range(1..=4) {
            let facet = *Facet::ALL.choose(&mut rng).unwrap();
            tags.extend(pick(&mut rng, taxonomy, facet));
        }
        let playlist_id = format!("P{i:06}");
        for _ in 0..rng.random_range(0..=3) {
            let offset = Duration::seconds(rng.random_range(-86_400..10 * 86_400));
            let id = if rng.random_bool(0.02) { format!("X{i}") } else { playlist_id.clone() };
            events.push(PlaylistEvent {
                playlist_id: id,
                event_type: EventType::Listened,
                occurred_at: created + offset,
            });
        }
        records.push(GenerationRecord {
            playlist_id,
            user_id: format!("U{}", rng.random_range(0..100)),
            query: String::new(),
            tags: tags
                .into_iter()
                .map(|tag| TagPrediction {
                    tag,
                    explicitness: Explicitness::Implicit,
                    source_span: None,
                })
                .collect(),
            dropped_tags: 0,
            relaxation_level: 0,
            personalized: true,
            degraded: false,
            extraction_backend: ExtractionBackend::Rule,
            refinement_backend: RefinementBackend::Deterministic,
            catalog_snapshot: 1,
            embedding_snapshot: 1,
            hallucinations_dropped: 0,
            created_at: created,
            completed_at: created,
        });
    }
    (records, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_seeded_and_valid() {
        let tax = TagTaxonomy::default_taxonomy();
        let a = synthetic_catalog(500, 7, tax.clone());
        let b = synthetic_catalog(500, 7, tax.clone());
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_ne!(a.to_jsonl(), synthetic_catalog(500, 8, tax.clone()).to_jsonl());
        assert!(a.tracks().all(|t| t.tags.len() <= MAX_TAGS_PER_TRACK));
        let reparsed = Catalog::parse(&a.to_jsonl(), tax, 1).unwrap();
        assert_eq!(reparsed.len(), 500);
        assert!(reparsed.tracks().zip(a.tracks()).all(|(x, y)| x == y));
    }

    #[test]
    fn embeddings_round_trip() {
        let cat = synthetic_catalog(50, 1, TagTaxonomy::default_taxonomy());
        let store = synthetic_embeddings(&cat, 5, 16, 2);
        let text = store.to_text();
        let back = EmbeddingStore::parse(&text, 1).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!((back.user_count(), back.track_count(), back.dimension()), (5, 50, 16));
        let id = track_id(3);
        assert_eq!(back.track(&id).unwrap().components(), store.track(&id).unwrap().components());
    }

    #[test]
    fn log_is_seeded() {
        let tax = TagTaxonomy::default_taxonomy();
        let (r1, e1) = synthetic_log(200, 3, &tax);
        let (r2, e2) = synthetic_log(200, 3, &tax);
        assert_eq!((r1, e1), (r2, e2));
    }
}
