//! Inverted tag index and candidate retrieval with relaxation.
//!
//! Matching is AND across facets and OR within a facet. When a match is too
//! small, preferred (implicit) tags are dropped one at a time, lowest
//! priority facet first, until enough candidates exist. Required (explicit)
//! tags are never dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Catalog, TrackId};
use crate::extraction::ExtractionResult;
use crate::taxonomy::{Facet, Tag};

pub const DEFAULT_MIN_CANDIDATES: usize = 20;
pub const DEFAULT_LIMIT: usize = 200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("no track matches the required tags")]
    EmptyCandidateSet,
    #[error("invalid match spec: {0}")]
    InvalidSpec(String),
    #[error("candidate {0} is not in the catalog snapshot")]
    UnknownTrackId(TrackId),
}

/// Posting lists over dense track ordinals. Ordinals follow ascending
/// track id, so ascending ordinal order is ascending id order.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    ids: Vec<TrackId>,
    postings: HashMap<Tag, Vec<u32>>,
    built_from_snapshot: u64,
}

pub fn build_index(catalog: &Catalog) -> InvertedIndex {
    InvertedIndex::build(catalog)
}

impl InvertedIndex {
    pub fn build(catalog: &Catalog) -> Self {
        let mut ids = Vec::with_capacity(catalog.len());
        let mut postings: HashMap<Tag, Vec<u32>> = HashMap::new();
        for (ordinal, track) in catalog.tracks().enumerate() {
            ids.push(track.track_id.clone());
            for tag in &track.tags {
                postings.entry(tag.clone()).or_default().push(ordinal as u32);
            }
        }
        InvertedIndex {
            ids,
            postings,
            built_from_snapshot: catalog.snapshot_id(),
        }
    }

    pub fn built_from_snapshot(&self) -> u64 {
        self.built_from_snapshot
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn tag_count(&self) -> usize {
        self.postings.len()
    }

    /// Track ids posted under `tag`, ascending.
    pub fn postings(&self, tag: &Tag) -> Vec<&TrackId> {
        self.postings
            .get(tag)
            .map(|p| p.iter().map(|&o| &self.ids[o as usize]).collect())
            .unwrap_or_default()
    }

    /// `(tag, posting length)` pairs sorted by tag.
    pub fn stats(&self) -> Vec<(Tag, usize)> {
        let mut v: Vec<_> = self.postings.iter().map(|(t, p)| (t.clone(), p.len())).collect();
        v.sort();
        v
    }

    fn posting(&self, tag: &Tag) -> &[u32] {
        self.postings.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }

    fn contains(&self, tag: &Tag, ordinal: u32) -> bool {
        self.posting(tag).binary_search(&ordinal).is_ok()
    }

    /// AND across facets, OR within a facet. No tags matches everything.
    fn evaluate<'a>(&self, tags: impl IntoIterator<Item = &'a Tag>) -> Vec<u32> {
        let mut by_facet: BTreeMap<Facet, Vec<&Tag>> = BTreeMap::new();
        for t in tags {
            by_facet.entry(t.facet).or_default().push(t);
        }
        if by_facet.is_empty() {
            return (0..self.ids.len() as u32).collect();
        }
        let mut per_facet: Vec<Vec<u32>> = by_facet
            .values()
            .map(|tags| union_sorted(tags.iter().map(|t| self.posting(t))))
            .collect();
        per_facet.sort_by_key(Vec::len);
        let mut iter = per_facet.into_iter();
        let mut acc = iter.next().unwrap_or_default();
        for list in iter {
            if acc.is_empty() {
                break;
            }
            acc = intersect_sorted(&acc, &list);
        }
        acc
    }
}

fn union_sorted<'a>(lists: impl Iterator<Item = &'a [u32]>) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for list in lists {
        if out.is_empty() {
            out.extend_from_slice(list);
            continue;
        }
        let mut merged = Vec::with_capacity(out.len() + list.len());
        let (mut i, mut j) = (0, 0);
        while i < out.len() && j < list.len() {
            match out[i].cmp(&list[j]) {
                std::cmp::Ordering::Less => {
                    merged.push(out[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    merged.push(list[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    merged.push(out[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        merged.extend_from_slice(&out[i..]);
        merged.extend_from_slice(&list[j..]);
        out = merged;
    }
    out
}

fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchSpec {
    required: BTreeSet<Tag>,
    preferred: BTreeSet<Tag>,
    limit: usize,
}

impl MatchSpec {
    pub fn new(
        required: impl IntoIterator<Item = Tag>,
        preferred: impl IntoIterator<Item = Tag>,
        limit: usize,
    ) -> Result<Self, RetrievalError> {
        let required: BTreeSet<Tag> = required.into_iter().collect();
        let preferred: BTreeSet<Tag> = preferred.into_iter().collect();
        if let Some(t) = required.intersection(&preferred).next() {
            return Err(RetrievalError::InvalidSpec(format!("{t} is both required and preferred")));
        }
        if limit == 0 {
            return Err(RetrievalError::InvalidSpec("limit must be >= 1".into()));
        }
        Ok(MatchSpec {
            required,
            preferred,
            limit,
        })
    }

    /// Explicit predictions become required tags, implicit ones preferred.
    pub fn from_extraction(result: &ExtractionResult, limit: usize) -> Result<Self, RetrievalError> {
        Self::new(
            result.explicit_tags().cloned(),
            result.implicit_tags().cloned(),
            limit,
        )
    }

    pub fn required(&self) -> &BTreeSet<Tag> {
        &self.required
    }

    pub fn preferred(&self) -> &BTreeSet<Tag> {
        &self.preferred
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Preferred tags in the order relaxation drops them.
    pub fn drop_order(&self) -> Vec<Tag> {
        let mut v: Vec<Tag> = self.preferred.iter().cloned().collect();
        v.sort_by(|a, b| {
            (a.facet.relaxation_priority(), &a.value).cmp(&(b.facet.relaxation_priority(), &b.value))
        });
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub track_ids: Vec<TrackId>,
    /// Spec tags (required or preferred, dropped ones included) each track carries.
    pub matched_tags: BTreeMap<TrackId, BTreeSet<Tag>>,
    pub relaxation_level: u32,
    pub dropped: Vec<Tag>,
}

impl CandidateSet {
    pub fn empty() -> Self {
        CandidateSet {
            track_ids: Vec::new(),
            matched_tags: BTreeMap::new(),
            relaxation_level: 0,
            dropped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.track_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct RetrievalConfig {
    pub min_candidates: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            min_candidates: DEFAULT_MIN_CANDIDATES,
        }
    }
}

pub fn retrieve(
    index: &InvertedIndex,
    spec: &MatchSpec,
    config: &RetrievalConfig,
) -> Result<CandidateSet, RetrievalError> {
    let drop_order = spec.drop_order();
    let mut dropped = 0;
    let matches = loop {
        let active = spec.required.iter().chain(&drop_order[dropped..]);
        let found = index.evaluate(active);
        let remaining = drop_order.len() - dropped;
        let can_drop = remaining > 0 && !(spec.required.is_empty() && remaining == 1);
        let too_few = found.len() < config.min_candidates || found.is_empty();
        if !too_few || !can_drop {
            break found;
        }
        dropped += 1;
    };
    if matches.is_empty() {
        return Err(RetrievalError::EmptyCandidateSet);
    }
    let all_spec_tags: Vec<&Tag> = spec.required.iter().chain(&spec.preferred).collect();
    let mut track_ids = Vec::with_capacity(spec.limit.min(matches.len()));
    let mut matched_tags = BTreeMap::new();
    for &ordinal in matches.iter().take(spec.limit) {
        let id = index.ids[ordinal as usize].clone();
        let carried: BTreeSet<Tag> = all_spec_tags
            .iter()
            .filter(|t| index.contains(t, ordinal))
            .map(|t| (*t).clone())
            .collect();
        matched_tags.insert(id.clone(), carried);
        track_ids.push(id);
    }
    Ok(CandidateSet {
        track_ids,
        matched_tags,
        relaxation_level: dropped as u32,
        dropped: drop_order[..dropped].to_vec(),
    })
}

#[derive(Serialize)]
struct CandidateRecord<'a> {
    track_id: &'a str,
    title: &'a str,
    artist_name: &'a str,
    tags: Vec<String>,
    matched_tags: Vec<String>,
}

#[derive(Serialize)]
struct CandidateDocument<'a> {
    relaxation_level: u32,
    tracks: Vec<CandidateRecord<'a>>,
}

/// Serializes candidates as the JSON document handed to later stages and the
/// debug endpoint. Field order is fixed, so output is byte-deterministic.
pub fn to_candidate_document(candidates: &CandidateSet, catalog: &Catalog) -> Result<String, RetrievalError> {
    let mut tracks = Vec::with_capacity(candidates.len());
    for id in &candidates.track_ids {
        let track = catalog
            .get(id)
            .ok_or_else(|| RetrievalError::UnknownTrackId(id.clone()))?;
        tracks.push(CandidateRecord {
            track_id: track.track_id.as_str(),
            title: &track.title,
            artist_name: &track.artist_name,
            tags: track.tags.iter().map(Tag::to_string).collect(),
            matched_tags: candidates
                .matched_tags
                .get(id)
                .into_iter()
                .flatten()
                .map(Tag::to_string)
                .collect(),
        });
    }
    let doc = CandidateDocument {
        relaxation_level: candidates.relaxation_level,
        tracks,
    };
    Ok(serde_json::to_string(&doc).expect("candidate document serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::taxonomy::TagTaxonomy;

    fn tag(facet: Facet, v: &str) -> Tag {
        Tag::new_unchecked(facet, v)
    }

    fn ids(c: &CandidateSet) -> Vec<&str> {
        c.track_ids.iter().map(TrackId::as_str).collect()
    }

    #[test]
    fn desk_postings_match_linear_scan() {
        let cat = fixtures::desk_catalog();
        let idx = build_index(&cat);
        let nineties = tag(Facet::Decade, "1990s");
        let got: Vec<&str> = idx.postings(&nineties).into_iter().map(TrackId::as_str).collect();
        assert_eq!(got, ["T1", "T2", "T5", "T6"]);
        for t in cat.taxonomy().all_tags() {
            let scan: Vec<TrackId> = cat.tracks_with_tag(&t).into_iter().collect();
            let posted: Vec<TrackId> = idx.postings(&t).into_iter().cloned().collect();
            assert_eq!(scan, posted, "{t}");
        }
        assert_eq!(idx.built_from_snapshot(), cat.snapshot_id());
    }

    #[test]
    fn empty_catalog_has_no_postings() {
        let idx = build_index(&Catalog::empty(TagTaxonomy::default_taxonomy()));
        assert_eq!(idx.tag_count(), 0);
        assert!(idx.is_empty());
    }

    #[test]
    fn rebuild_is_identical() {
        let cat = fixtures::desk_catalog();
        assert_eq!(build_index(&cat).stats(), build_index(&cat).stats());
    }

    #[test]
    fn conjunctive_match_without_relaxation() {
        let idx = build_index(&fixtures::desk_catalog());
        let spec = MatchSpec::new([tag(Facet::Decade, "1990s"), tag(Facet::Mood, "focus")], [], 50).unwrap();
        let c = retrieve(&idx, &spec, &RetrievalConfig::default()).unwrap();
        assert_eq!(ids(&c), ["T1", "T2", "T6"]);
        assert_eq!(c.relaxation_level, 0);
    }

    #[test]
    fn disjoint_required_tags_fail() {
        let idx = build_index(&fixtures::desk_catalog());
        let spec = MatchSpec::new([tag(Facet::Genre, "jazz"), tag(Facet::Mood, "party")], [], 50).unwrap();
        assert_eq!(
            retrieve(&idx, &spec, &RetrievalConfig::default()),
            Err(RetrievalError::EmptyCandidateSet)
        );
    }

    #[test]
    fn relaxation_drops_preferred() {
        let idx = build_index(&fixtures::desk_catalog());
        let spec = MatchSpec::new([tag(Facet::Mood, "focus")], [tag(Facet::Genre, "electronic")], 50).unwrap();
        let c = retrieve(&idx, &spec, &RetrievalConfig { min_candidates: 4 }).unwrap();
        assert_eq!(c.relaxation_level, 1);
        assert_eq!(ids(&c), ["T1", "T2", "T6", "T8"]);
        assert_eq!(c.dropped, [tag(Facet::Genre, "electronic")]);
        // evidence keeps the dropped preference where it still holds
        assert!(c.matched_tags[&TrackId::from("T2")].contains(&tag(Facet::Genre, "electronic")));
    }

    #[test]
    fn relaxation_follows_facet_priority() {
        let spec = MatchSpec::new(
            [],
            [
                tag(Facet::Mood, "focus"),
                tag(Facet::Language, "french"),
                tag(Facet::Genre, "rock"),
                tag(Facet::Decade, "1990s"),
                tag(Facet::ArtistGender, "female"),
            ],
            10,
        )
        .unwrap();
        let order: Vec<Facet> = spec.drop_order().iter().map(|t| t.facet).collect();
        assert_eq!(
            order,
            [Facet::Language, Facet::ArtistGender, Facet::Genre, Facet::Decade, Facet::Mood]
        );
    }

    #[test]
    fn last_preferred_tag_is_kept_without_required() {
        let idx = build_index(&fixtures::desk_catalog());
        let spec = MatchSpec::new([], [tag(Facet::Mood, "focus")], 50).unwrap();
        let c = retrieve(&idx, &spec, &RetrievalConfig::default()).unwrap();
        assert_eq!(c.relaxation_level, 0);
        assert_eq!(ids(&c), ["T1", "T2", "T6", "T8"]);
    }

    #[test]
    fn or_within_facet() {
        let idx = build_index(&fixtures::desk_catalog());
        let spec = MatchSpec::new([tag(Facet::Genre, "jazz"), tag(Facet::Genre, "pop")], [], 50).unwrap();
        let c = retrieve(&idx, &spec, &RetrievalConfig { min_candidates: 0 }).unwrap();
        assert_eq!(ids(&c), ["T4", "T6", "T7", "T8"]);
    }

    #[test]
    fn limit_truncates_in_id_order() {
        let idx = build_index(&fixtures::desk_catalog());
        let spec = MatchSpec::new([tag(Facet::Decade, "1990s")], [], 2).unwrap();
        let c = retrieve(&idx, &spec, &RetrievalConfig::default()).unwrap();
        assert_eq!(ids(&c), ["T1", "T2"]);
    }

    #[test]
    fn spec_validation() {
        let t = tag(Facet::Mood, "chill");
        assert!(MatchSpec::new([t.clone()], [t.clone()], 5).is_err());
        assert!(MatchSpec::new([t], [], 0).is_err());
    }

    #[test]
    fn candidate_document_shape() {
        let cat = fixtures::desk_catalog();
        let idx = build_index(&cat);
        let spec = MatchSpec::new([tag(Facet::Genre, "rock"), tag(Facet::Mood, "focus")], [], 50).unwrap();
        let c = retrieve(&idx, &spec, &RetrievalConfig { min_candidates: 0 }).unwrap();
        let doc = to_candidate_document(&c, &cat).unwrap();
        assert_eq!(
            doc,
            r#"{"relaxation_level":0,"tracks":[{"track_id":"T1","title":"Quiet Engines","artist_name":"Northbound","tags":["genre:rock","mood:focus","decade:1990s"],"matched_tags":["genre:rock","mood:focus"]}]}"#
        );
        assert_eq!(doc, to_candidate_document(&c, &cat).unwrap());
        assert_eq!(
            to_candidate_document(&CandidateSet::empty(), &cat).unwrap(),
            r#"{"relaxation_level":0,"tracks":[]}"#
        );
        let mut bogus = CandidateSet::empty();
        bogus.track_ids.push(TrackId::from("T99"));
        assert_eq!(
            to_candidate_document(&bogus, &cat),
            Err(RetrievalError::UnknownTrackId(TrackId::from("T99")))
        );
    }
}
