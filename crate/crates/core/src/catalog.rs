//! Music catalog snapshots loaded from line-delimited JSON exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Facet, Tag, TagTaxonomy, TaxonomyError};

/// Tags whose ingestion score falls below this are dropped.
pub const TAG_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub String);

impl TrackId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for TrackId {
    fn from(s: &str) -> Self {
        TrackId(s.to_string())
    }
}

impl From<String> for TrackId {
    fn from(s: String) -> Self {
        TrackId(s)
    }
}

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: TrackId,
    pub title: String,
    pub artist_id: String,
    pub artist_name: String,
    pub duration_sec: u32,
    pub tags: BTreeSet<Tag>,
}

impl Track {
    pub fn has_tag(&self, tag: &Tag) -> bool {
        self.tags.contains(tag)
    }

    pub fn tags_of(&self, facet: Facet) -> impl Iterator<Item = &Tag> {
        self.tags.iter().filter(move |t| t.facet == facet)
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: duplicate track id {track_id}")]
    DuplicateTrackId { line: usize, track_id: TrackId },
    #[error("line {line}: unknown tag {facet}:{value:?}")]
    UnknownTag {
        line: usize,
        facet: Facet,
        value: String,
    },
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Immutable catalog snapshot. Tracks are keyed (and iterated) by ascending id.
#[derive(Debug, Clone)]
pub struct Catalog {
    tracks: BTreeMap<TrackId, Track>,
    taxonomy: TagTaxonomy,
    snapshot_id: u64,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    track_id: String,
    title: String,
    artist_id: String,
    artist_name: String,
    duration_sec: u32,
    tags: Vec<String>,
}

impl Catalog {
    /// Builds a catalog from already-validated tracks. Enforces id uniqueness,
    /// taxonomy membership and the single-decade rule.
    pub fn from_tracks(
        tracks: impl IntoIterator<Item = Track>,
        taxonomy: TagTaxonomy,
        snapshot_id: u64,
    ) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        for (i, track) in tracks.into_iter().enumerate() {
            let line = i + 1;
            validate_track(&track, &taxonomy, line)?;
            if map.contains_key(&track.track_id) {
                return Err(CatalogError::DuplicateTrackId {
                    line,
                    track_id: track.track_id,
                });
            }
            map.insert(track.track_id.clone(), track);
        }
        Ok(Catalog {
            tracks: map,
            taxonomy,
            snapshot_id,
        })
    }

    pub fn empty(taxonomy: TagTaxonomy) -> Self {
        Catalog {
            tracks: BTreeMap::new(),
            taxonomy,
            snapshot_id: 1,
        }
    }

    /// Parses catalog lines. Blank lines are skipped but still counted for
    /// error line numbers.
    pub fn parse(text: &str, taxonomy: TagTaxonomy, snapshot_id: u64) -> Result<Self, CatalogError> {
        let mut tracks = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            if raw_line.trim().is_empty() {
                continue;
            }
            let track = parse_line(raw_line, &taxonomy, line)?;
            if tracks.contains_key(&track.track_id) {
                return Err(CatalogError::DuplicateTrackId {
                    line,
                    track_id: track.track_id,
                });
            }
            tracks.insert(track.track_id.clone(), track);
        }
        Ok(Catalog {
            tracks,
            taxonomy,
            snapshot_id,
        })
    }

    pub fn with_snapshot_id(mut self, snapshot_id: u64) -> Self {
        self.snapshot_id = snapshot_id;
        self
    }

    pub fn snapshot_id(&self) -> u64 {
        self.snapshot_id
    }

    pub fn taxonomy(&self) -> &TagTaxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, id: &TrackId) -> Option<&Track> {
        self.tracks.get(id)
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    pub fn track_ids(&self) -> impl Iterator<Item = &TrackId> {
        self.tracks.keys()
    }

    /// Linear scan for the tracks carrying `tag`.
    pub fn tracks_with_tag(&self, tag: &Tag) -> BTreeSet<TrackId> {
        self.tracks
            .values()
            .filter(|t| t.has_tag(tag))
            .map(|t| t.track_id.clone())
            .collect()
    }
}

impl Catalog {
    /// One JSON line per track in id order, tags as `facet:value`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in self.tracks.values() {
            let raw = RawRecord {
                track_id: t.track_id.0.clone(),
                title: t.title.clone(),
                artist_id: t.artist_id.clone(),
                artist_name: t.artist_name.clone(),
                duration_sec: t.duration_sec,
                tags: t.tags.iter().map(Tag::to_string).collect(),
            };
            out.push_str(&serde_json::to_string(&raw).expect("track serializes"));
            out.push('\n');
        }
        out
    }
}

/// Reads a catalog file as snapshot 1.
pub fn load_catalog(path: impl AsRef<Path>, taxonomy: TagTaxonomy) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Catalog::parse(&text, taxonomy, 1)
}

fn validate_track(track: &Track, taxonomy: &TagTaxonomy, line: usize) -> Result<(), CatalogError> {
    if track.track_id.0.trim().is_empty() {
        return Err(malformed(line, "empty track_id"));
    }
    if track.duration_sec == 0 {
        return Err(malformed(line, "duration_sec must be positive"));
    }
    for tag in &track.tags {
        if !taxonomy.contains(tag) {
            return Err(CatalogError::UnknownTag {
                line,
                facet: tag.facet,
                value: tag.value.clone(),
            });
        }
    }
    if track.tags_of(Facet::Decade).count() > 1 {
        return Err(malformed(line, "more than one decade tag"));
    }
    Ok(())
}

fn malformed(line: usize, reason: impl Into<String>) -> CatalogError {
    CatalogError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

fn parse_line(text: &str, taxonomy: &TagTaxonomy, line: usize) -> Result<Track, CatalogError> {
    let raw: RawRecord =
        serde_json::from_str(text).map_err(|e| malformed(line, e.to_string()))?;
    let mut tags = BTreeSet::new();
    for spec in &raw.tags {
        if let Some(tag) = parse_tag_field(spec, taxonomy, line)? {
            tags.insert(tag);
        }
    }
    let track = Track {
        track_id: TrackId(raw.track_id),
        title: raw.title,
        artist_id: raw.artist_id,
        artist_name: raw.artist_name,
        duration_sec: raw.duration_sec,
        tags,
    };
    validate_track(&track, taxonomy, line)?;
    Ok(track)
}

/// `facet:value[:score]`. Returns `None` when the score is below threshold.
fn parse_tag_field(spec: &str, taxonomy: &TagTaxonomy, line: usize) -> Result<Option<Tag>, CatalogError> {
    let mut parts = spec.splitn(3, ':');
    let facet = parts.next().unwrap_or_default();
    let value = parts
        .next()
        .ok_or_else(|| malformed(line, format!("tag {spec:?} is not facet:value")))?;
    let facet: Facet = facet
        .parse()
        .map_err(|_| malformed(line, format!("unknown facet in tag {spec:?}")))?;
    if let Some(score) = parts.next() {
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| malformed(line, format!("bad score in tag {spec:?}")))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(malformed(line, format!("score out of [0,1] in tag {spec:?}")));
        }
        if score < TAG_SCORE_THRESHOLD {
            return Ok(None);
        }
    }
    taxonomy
        .normalize(facet, value)
        .map(Some)
        .map_err(|e| match e {
            TaxonomyError::UnknownTag { facet, value } => CatalogError::UnknownTag { line, facet, value },
            other => malformed(line, other.to_string()),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> TagTaxonomy {
        TagTaxonomy::default_taxonomy()
    }

    fn line(id: &str, tags: &[&str]) -> String {
        serde_json::json!({
            "track_id": id, "title": "t", "artist_id": "a", "artist_name": "A",
            "duration_sec": 200, "tags": tags,
        })
        .to_string()
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}\n", line("T1", &["mood:chill"]), line("T1", &["mood:party"]));
        let err = Catalog::parse(&text, tax(), 1).unwrap_err();
        assert!(matches!(err, CatalogError::DuplicateTrackId { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_tag_rejected() {
        let err = Catalog::parse(&line("T1", &["mood:zzz"]), tax(), 1).unwrap_err();
        match err {
            CatalogError::UnknownTag { facet, value, .. } => {
                assert_eq!(facet, Facet::Mood);
                assert_eq!(value, "zzz");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn synonyms_resolve_and_scores_threshold() {
        let text = line("T1", &["decade:90s", "mood:focus:0.8", "mood:party:0.49", "mood:chill:0.5"]);
        let cat = Catalog::parse(&text, tax(), 1).unwrap();
        let t = cat.get(&"T1".into()).unwrap();
        let got: Vec<String> = t.tags.iter().map(Tag::to_string).collect();
        assert_eq!(got, ["mood:chill", "mood:focus", "decade:1990s"]);
    }

    #[test]
    fn malformed_lines() {
        let cases = [
            "{not json".to_string(),
            line("T1", &["decade:1990s", "decade:2000s"]),
            line("T1", &["mood"]),
            line("T1", &["mood:chill:abc"]),
            line("T1", &["mood:chill:1.5"]),
            line("T1", &["tempo:fast"]),
            line("", &[]),
        ];
        for c in cases {
            let err = Catalog::parse(&c, tax(), 1).unwrap_err();
            assert!(matches!(err, CatalogError::MalformedRecord { line: 1, .. }), "{c}: {err}");
        }
    }

    #[test]
    fn zero_duration_rejected() {
        let text = line("T1", &[]).replace("200", "0");
        assert!(matches!(
            Catalog::parse(&text, tax(), 1),
            Err(CatalogError::MalformedRecord { .. })
        ));
    }
}
