//! Controlled tag vocabulary: facets, canonical values and synonyms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The taxonomy shipped with the crate.
pub const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

/// A tag dimension.
///
/// Declaration order is the canonical facet order used in prompts and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Genre,
    Mood,
    Decade,
    Language,
    ArtistGender,
}

impl Facet {
    pub const ALL: [Facet; 5] = [
        Facet::Genre,
        Facet::Mood,
        Facet::Decade,
        Facet::Language,
        Facet::ArtistGender,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Genre => "genre",
            Facet::Mood => "mood",
            Facet::Decade => "decade",
            Facet::Language => "language",
            Facet::ArtistGender => "artist_gender",
        }
    }

    /// Position in the relaxation order; lower values are dropped first.
    pub fn relaxation_priority(self) -> u8 {
        match self {
            Facet::Language => 0,
            Facet::ArtistGender => 1,
            Facet::Genre => 2,
            Facet::Decade => 3,
            Facet::Mood => 4,
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facet {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "genre" => Ok(Facet::Genre),
            "mood" => Ok(Facet::Mood),
            "decade" => Ok(Facet::Decade),
            "language" => Ok(Facet::Language),
            "artist_gender" | "artist gender" | "gender" => Ok(Facet::ArtistGender),
            other => Err(TaxonomyError::UnknownFacet(other.to_string())),
        }
    }
}

/// A `(facet, value)` keyword describing a track.
///
/// Only [`TagTaxonomy::normalize`] and [`TagTaxonomy::tag`] hand out tags, so
/// a `Tag` in circulation is always canonical for the taxonomy that built it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub facet: Facet,
    pub value: String,
}

impl Tag {
    /// Builds a tag without consulting a taxonomy. Meant for fixtures and
    /// decoding already-validated data.
    pub fn new_unchecked(facet: Facet, value: impl Into<String>) -> Self {
        Tag {
            facet,
            value: value.into(),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.facet, self.value)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown facet `{0}`")]
    UnknownFacet(String),
    #[error("unknown tag {facet}:{value:?}")]
    UnknownTag { facet: Facet, value: String },
    #[error("synonym {facet}:{raw:?} points at non-canonical value {target:?}")]
    DanglingSynonym {
        facet: Facet,
        raw: String,
        target: String,
    },
    #[error("canonical value {facet}:{value:?} is empty or not lowercase/trimmed")]
    BadCanonical { facet: Facet, value: String },
    #[error("taxonomy file: {0}")]
    Io(String),
    #[error("taxonomy file is not valid JSON: {0}")]
    Parse(String),
}

#[derive(Debug, Deserialize)]
struct TaxonomyFile {
    #[serde(default)]
    version: u32,
    facets: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    synonyms: BTreeMap<String, BTreeMap<String, String>>,
}

/// Per-facet canonical values plus a raw → canonical synonym map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagTaxonomy {
    version: u32,
    canonical: BTreeMap<Facet, BTreeSet<String>>,
    synonyms: BTreeMap<Facet, BTreeMap<String, String>>,
}

/// Lowercases, trims and collapses internal whitespace runs.
fn clean(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl TagTaxonomy {
    pub fn builder() -> TaxonomyBuilder {
        TaxonomyBuilder::default()
    }

    pub fn default_taxonomy() -> Self {
        Self::from_json(DEFAULT_TAXONOMY_JSON).expect("bundled taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        let mut builder = TaxonomyBuilder {
            version: file.version,
            ..Default::default()
        };
        for (facet, values) in &file.facets {
            let facet: Facet = facet.parse()?;
            for v in values {
                builder = builder.canonical(facet, v);
            }
        }
        for (facet, map) in &file.synonyms {
            let facet: Facet = facet.parse()?;
            for (raw, target) in map {
                builder = builder.synonym(facet, raw, target);
            }
        }
        builder.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Canonical values of a facet, sorted. Empty when the facet is unused.
    pub fn values(&self, facet: Facet) -> impl Iterator<Item = &str> {
        self.canonical
            .get(&facet)
            .into_iter()
            .flat_map(|set| set.iter().map(String::as_str))
    }

    pub fn has_facet(&self, facet: Facet) -> bool {
        self.canonical.get(&facet).is_some_and(|s| !s.is_empty())
    }

    pub fn contains(&self, tag: &Tag) -> bool {
        self.canonical
            .get(&tag.facet)
            .is_some_and(|s| s.contains(&tag.value))
    }

    /// Every canonical tag, in facet then value order.
    pub fn all_tags(&self) -> Vec<Tag> {
        Facet::ALL
            .iter()
            .flat_map(|&f| self.values(f).map(move |v| Tag::new_unchecked(f, v)))
            .collect()
    }

    pub fn synonyms(&self, facet: Facet) -> impl Iterator<Item = (&str, &str)> {
        self.synonyms
            .get(&facet)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// Resolves a raw string to its canonical tag, by exact match first and
    /// then through the synonym map. Lowercases and trims the input.
    pub fn normalize(&self, facet: Facet, raw: &str) -> Result<Tag, TaxonomyError> {
        let key = clean(raw);
        if let Some(set) = self.canonical.get(&facet) {
            if set.contains(&key) {
                return Ok(Tag { facet, value: key });
            }
        }
        if let Some(target) = self.synonyms.get(&facet).and_then(|m| m.get(&key)) {
            return Ok(Tag {
                facet,
                value: target.clone(),
            });
        }
        Err(TaxonomyError::UnknownTag { facet, value: key })
    }

    /// Checked constructor for a canonical tag.
    pub fn tag(&self, facet: Facet, value: &str) -> Result<Tag, TaxonomyError> {
        let tag = Tag::new_unchecked(facet, value);
        if self.contains(&tag) {
            Ok(tag)
        } else {
            Err(TaxonomyError::UnknownTag {
                facet,
                value: value.to_string(),
            })
        }
    }
}

/// Free function form of [`TagTaxonomy::normalize`].
pub fn normalize_tag(taxonomy: &TagTaxonomy, facet: Facet, raw: &str) -> Result<Tag, TaxonomyError> {
    taxonomy.normalize(facet, raw)
}

#[derive(Debug, Default)]
pub struct TaxonomyBuilder {
    version: u32,
    canonical: BTreeMap<Facet, BTreeSet<String>>,
    synonyms: Vec<(Facet, String, String)>,
}

impl TaxonomyBuilder {
    pub fn canonical(mut self, facet: Facet, value: &str) -> Self {
        self.canonical
            .entry(facet)
            .or_default()
            .insert(value.to_string());
        self
    }

    pub fn synonym(mut self, facet: Facet, raw: &str, target: &str) -> Self {
        self.synonyms
            .push((facet, raw.to_string(), target.to_string()));
        self
    }

    pub fn build(self) -> Result<TagTaxonomy, TaxonomyError> {
        for (&facet, values) in &self.canonical {
            for v in values {
                if v.is_empty() || *v != clean(v) {
                    return Err(TaxonomyError::BadCanonical {
                        facet,
                        value: v.clone(),
                    });
                }
            }
        }
        let mut synonyms: BTreeMap<Facet, BTreeMap<String, String>> = BTreeMap::new();
        for (facet, raw, target) in self.synonyms {
            let target_clean = clean(&target);
            let ok = self
                .canonical
                .get(&facet)
                .is_some_and(|s| s.contains(&target_clean));
            if !ok {
                return Err(TaxonomyError::DanglingSynonym { facet, raw, target });
            }
            synonyms
                .entry(facet)
                .or_default()
                .insert(clean(&raw), target_clean);
        }
        Ok(TagTaxonomy {
            version: self.version,
            canonical: self.canonical,
            synonyms,
        })
    }
}
