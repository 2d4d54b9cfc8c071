//! Query understanding: turning free text into explicit and implicit tags.
//!
//! Three interchangeable extractors implement [`TagExtractor`]:
//! [`RuleExtractor`] (lexicon driven, deterministic), [`LlmExtractor`] with
//! `backend = llm`, and the same type bound to a replay gateway with
//! `backend = replay`. An [`ExtractorRegistry`] selects one by name.

mod lexicon;
mod llm;
mod rule;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Facet, Tag, TagTaxonomy};

pub use lexicon::{tokenize, Lexicon, LexiconEntry, LexiconError, Token, DEFAULT_LEXICON_TSV};
pub use llm::{build_extraction_prompt, parse_llm_tags, LlmExtractor};
pub(crate) use llm::recover_json_object;
pub use rule::{extract_rule_based, RuleExtractor};

pub const MAX_QUERY_CHARS: usize = 500;
/// Upper bound on predictions kept per query.
pub const MAX_PREDICTIONS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    text: String,
    user_id: String,
}

impl Query {
    pub fn new(text: impl Into<String>, user_id: impl Into<String>) -> Result<Self, ExtractionError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ExtractionError::InvalidQuery("query text is empty".into()));
        }
        let chars = text.chars().count();
        if chars > MAX_QUERY_CHARS {
            return Err(ExtractionError::InvalidQuery(format!(
                "query is {chars} characters, limit is {MAX_QUERY_CHARS}"
            )));
        }
        Ok(Query {
            text,
            user_id: user_id.into(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Explicitness {
    Explicit,
    Implicit,
}

impl FromStr for Explicitness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "explicit" => Ok(Explicitness::Explicit),
            "implicit" => Ok(Explicitness::Implicit),
            other => Err(format!("unknown explicitness {other:?}")),
        }
    }
}

/// Half-open character range `[start, end)` into the query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = indices.nth(self.start).unwrap_or(text.len());
        let end = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .nth(self.end)
            .unwrap_or(text.len());
        &text[start..end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPrediction {
    pub tag: Tag,
    pub explicitness: Explicitness,
    /// Present exactly when the prediction is explicit.
    pub source_span: Option<Span>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionBackend {
    Rule,
    Llm,
    Replay,
}

impl ExtractionBackend {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractionBackend::Rule => "rule",
            ExtractionBackend::Llm => "llm",
            ExtractionBackend::Replay => "replay",
        }
    }
}

impl fmt::Display for ExtractionBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub predictions: Vec<TagPrediction>,
    pub backend_used: ExtractionBackend,
    /// Tags the backend proposed that were outside the taxonomy.
    #[serde(default)]
    pub dropped_tags: usize,
}

impl ExtractionResult {
    pub fn tags(&self) -> impl Iterator<Item = &Tag> {
        self.predictions.iter().map(|p| &p.tag)
    }

    pub fn explicit_tags(&self) -> impl Iterator<Item = &Tag> {
        self.by_explicitness(Explicitness::Explicit)
    }

    pub fn implicit_tags(&self) -> impl Iterator<Item = &Tag> {
        self.by_explicitness(Explicitness::Implicit)
    }

    fn by_explicitness(&self, e: Explicitness) -> impl Iterator<Item = &Tag> {
        self.predictions
            .iter()
            .filter(move |p| p.explicitness == e)
            .map(|p| &p.tag)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractionError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("no tags could be extracted from the query")]
    NoTagsExtracted,
    #[error("unparseable llm response: {0}")]
    UnparseableResponse(String),
    #[error("unknown extraction backend `{0}`")]
    UnknownBackend(String),
}

#[async_trait]
pub trait TagExtractor: Send + Sync {
    fn backend(&self) -> ExtractionBackend;

    async fn extract(&self, query: &Query) -> Result<ExtractionResult, ExtractionError>;
}

/// Extractors keyed by backend name (`rule`, `llm`, `replay`, or anything
/// registered at runtime).
#[derive(Clone, Default)]
pub struct ExtractorRegistry {
    by_name: BTreeMap<String, Arc<dyn TagExtractor>>,
}

impl ExtractorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, extractor: Arc<dyn TagExtractor>) -> &mut Self {
        self.by_name.insert(name.to_string(), extractor);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Arc<dyn TagExtractor>, ExtractionError> {
        self.by_name
            .get(name)
            .ok_or_else(|| ExtractionError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    /// Dispatches `query` to the extractor registered under `backend`.
    pub async fn extract(&self, query: &Query, backend: &str) -> Result<ExtractionResult, ExtractionError> {
        self.get(backend)?.extract(query).await
    }
}

/// A prediction before ordering. `position` is the span start for explicit
/// hits and the trigger/response position for implicit ones.
#[derive(Debug, Clone)]
pub(crate) struct RawPrediction {
    pub tag: Tag,
    pub explicitness: Explicitness,
    pub span: Option<Span>,
    pub position: usize,
}

/// Shared post-processing: dedup on `(facet, value)` keeping the explicit
/// variant, at most one decade, explicit first ordered by position then
/// facet, capped at [`MAX_PREDICTIONS`].
pub(crate) fn finalize(raw: Vec<RawPrediction>) -> Vec<TagPrediction> {
    let mut best: Vec<RawPrediction> = Vec::new();
    for p in raw {
        match best.iter_mut().find(|b| b.tag == p.tag) {
            Some(existing) => {
                if existing.explicitness == Explicitness::Implicit && p.explicitness == Explicitness::Explicit {
                    *existing = p;
                }
            }
            None => best.push(p),
        }
    }
    best.sort_by(|a, b| {
        (a.explicitness, a.position, a.tag.facet, &a.tag.value).cmp(&(
            b.explicitness,
            b.position,
            b.tag.facet,
            &b.tag.value,
        ))
    });
    let mut seen_decade = false;
    best.retain(|p| {
        if p.tag.facet != Facet::Decade {
            return true;
        }
        !std::mem::replace(&mut seen_decade, true)
    });
    best.truncate(MAX_PREDICTIONS);
    best.into_iter()
        .map(|p| TagPrediction {
            tag: p.tag,
            explicitness: p.explicitness,
            source_span: match p.explicitness {
                Explicitness::Explicit => p.span,
                Explicitness::Implicit => None,
            },
        })
        .collect()
}

/// Checks the structural invariants every extractor must uphold.
pub fn check_invariants(result: &ExtractionResult, query: &Query, taxonomy: &TagTaxonomy) -> Result<(), String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut decades = 0;
    for p in &result.predictions {
        if !taxonomy.contains(&p.tag) {
            return Err(format!("{} is not in the taxonomy", p.tag));
        }
        if !seen.insert(&p.tag) {
            return Err(format!("{} predicted twice", p.tag));
        }
        if p.tag.facet == Facet::Decade {
            decades += 1;
        }
        match (p.explicitness, p.source_span) {
            (Explicitness::Explicit, Some(span)) => {
                let slice = span.slice(query.text());
                match taxonomy.normalize(p.tag.facet, slice) {
                    Ok(t) if t == p.tag => {}
                    _ => return Err(format!("span {slice:?} does not resolve to {}", p.tag)),
                }
            }
            (Explicitness::Explicit, None) => return Err(format!("explicit {} without span", p.tag)),
            (Explicitness::Implicit, Some(_)) => return Err(format!("implicit {} with span", p.tag)),
            (Explicitness::Implicit, None) => {}
        }
    }
    if decades > 1 {
        return Err("more than one decade predicted".into());
    }
    if result.predictions.len() > MAX_PREDICTIONS {
        return Err("too many predictions".into());
    }
    Ok(())
}
