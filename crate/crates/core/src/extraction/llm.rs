use std::fmt::Write as _;
use std::sync::Arc;

use async_trait::async_trait;
use serde::Deserialize;

use super::{
    finalize, tokenize, ExtractionBackend, ExtractionError, ExtractionResult, Explicitness, Query, RawPrediction,
    RuleExtractor, Span, TagExtractor,
};
use crate::llm::{CompletionRequest, LlmGateway, Purpose};
use crate::taxonomy::{Facet, Tag, TagTaxonomy};

const EXTRACTION_MAX_OUTPUT_TOKENS: u32 = 256;
/// Longest word n-gram tried when locating an explicit tag in the query.
const SPAN_SEARCH_WORDS: usize = 4;

/// Prompt asking the model for explicit and implicit tags, restricted to the
/// taxonomy vocabulary. Facets without values are left out.
pub fn build_extraction_prompt(query: &Query, taxonomy: &TagTaxonomy) -> String {
    let mut p = String::new();
    p.push_str("You turn a music listener's playlist request into catalog tags.\n\n");
    p.push_str("Allowed vocabulary, one line per facet (use these exact values only):\n");
    for facet in Facet::ALL {
        if !taxonomy.has_facet(facet) {
            continue;
        }
        let values: Vec<&str> = taxonomy.values(facet).collect();
        let _ = writeln!(p, "- {facet}: {}", values.join(", "));
    }
    p.push_str(
        "\nInstructions:\n\
         - Mark a tag \"explicit\" when the request states it literally (for example a decade or genre it names).\n\
         - Mark a tag \"implicit\" when it is inferred from context such as an activity, place or time of day.\n\
         - Return at most one decade tag and at most 6 tags overall.\n\
         - Answer with one JSON object and nothing else, following this schema:\n\
         {\"tags\": [{\"facet\": \"<facet>\", \"value\": \"<value>\", \"explicitness\": \"explicit\" | \"implicit\"}]}\n\n",
    );
    let _ = writeln!(p, "Request: {}", query.text());
    p
}

#[derive(Debug, Deserialize)]
struct TagResponse {
    tags: Vec<RawTag>,
}

#[derive(Debug, Deserialize)]
struct RawTag {
    facet: String,
    value: String,
    #[serde(default)]
    explicitness: Option<String>,
}

/// Pulls the first JSON object out of a model answer, tolerating code fences
/// and surrounding prose.
pub(crate) fn recover_json_object<T: serde::de::DeserializeOwned>(text: &str) -> Option<T> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str(&trimmed[start..=end]).ok()
}

/// Finds the earliest (then longest) run of whitespace-joined query words
/// that normalizes to `tag`.
fn locate_span(query: &str, tag: &Tag, taxonomy: &TagTaxonomy) -> Option<Span> {
    let tokens = tokenize(query);
    let chars: Vec<char> = query.chars().collect();
    for i in 0..tokens.len() {
        for len in (1..=SPAN_SEARCH_WORDS.min(tokens.len() - i)).rev() {
            let window = &tokens[i..i + len];
            let span = Span {
                start: window[0].start,
                end: window[len - 1].end,
            };
            if window
                .windows(2)
                .any(|w| !chars[w[0].end..w[1].start].iter().all(|c| c.is_whitespace()))
            {
                continue;
            }
            if taxonomy
                .normalize(tag.facet, span.slice(query))
                .is_ok_and(|t| &t == tag)
            {
                return Some(span);
            }
        }
    }
    None
}

/// Validates a model answer against the tag-response schema. Unknown tags
/// are dropped and counted; an explicit tag that cannot be found in the query
/// text is downgraded to implicit.
pub fn parse_llm_tags(
    response_text: &str,
    query: &Query,
    taxonomy: &TagTaxonomy,
) -> Result<ExtractionResult, ExtractionError> {
    let parsed: TagResponse = recover_json_object(response_text)
        .ok_or_else(|| ExtractionError::UnparseableResponse(truncate(response_text, 120)))?;
    let mut dropped = 0;
    let mut raw = Vec::new();
    for (position, t) in parsed.tags.into_iter().enumerate() {
        let Ok(facet) = t.facet.parse::<Facet>() else {
            dropped += 1;
            continue;
        };
        let Ok(tag) = taxonomy.normalize(facet, &t.value) else {
            dropped += 1;
            continue;
        };
        let claimed = t
            .explicitness
            .as_deref()
            .and_then(|e| e.parse().ok())
            .unwrap_or(Explicitness::Implicit);
        let span = match claimed {
            Explicitness::Explicit => locate_span(query.text(), &tag, taxonomy),
            Explicitness::Implicit => None,
        };
        let (explicitness, position) = match span {
            Some(s) => (Explicitness::Explicit, s.start),
            None => (Explicitness::Implicit, position),
        };
        raw.push(RawPrediction {
            tag,
            explicitness,
            span,
            position,
        });
    }
    if dropped > 0 {
        tracing::warn!(dropped, "llm proposed tags outside the taxonomy");
    }
    let predictions = finalize(raw);
    if predictions.is_empty() {
        return Err(ExtractionError::NoTagsExtracted);
    }
    Ok(ExtractionResult {
        predictions,
        backend_used: ExtractionBackend::Llm,
        dropped_tags: dropped,
    })
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

/// Prompt → gateway → parse, falling back to the rule extractor when the
/// model call or its answer fails.
pub struct LlmExtractor {
    gateway: Arc<LlmGateway>,
    taxonomy: Arc<TagTaxonomy>,
    fallback: RuleExtractor,
    label: ExtractionBackend,
}

impl LlmExtractor {
    pub fn new(gateway: Arc<LlmGateway>, taxonomy: Arc<TagTaxonomy>, fallback: RuleExtractor) -> Self {
        LlmExtractor {
            gateway,
            taxonomy,
            fallback,
            label: ExtractionBackend::Llm,
        }
    }

    /// Same pipeline, reported as the `replay` backend. Pair it with a
    /// gateway over recorded fixtures.
    pub fn replay(gateway: Arc<LlmGateway>, taxonomy: Arc<TagTaxonomy>, fallback: RuleExtractor) -> Self {
        LlmExtractor {
            label: ExtractionBackend::Replay,
            ..Self::new(gateway, taxonomy, fallback)
        }
    }

    async fn try_model(&self, query: &Query) -> Result<ExtractionResult, String> {
        let prompt = build_extraction_prompt(query, &self.taxonomy);
        let request = CompletionRequest::new(Purpose::Extraction, prompt, EXTRACTION_MAX_OUTPUT_TOKENS);
        let response = self.gateway.complete(&request).await.map_err(|e| e.to_string())?;
        let mut result = parse_llm_tags(&response.text, query, &self.taxonomy).map_err(|e| e.to_string())?;
        result.backend_used = self.label;
        Ok(result)
    }
}

#[async_trait]
impl TagExtractor for LlmExtractor {
    fn backend(&self) -> ExtractionBackend {
        self.label
    }

    async fn extract(&self, query: &Query) -> Result<ExtractionResult, ExtractionError> {
        match self.try_model(query).await {
            Ok(result) => Ok(result),
            Err(reason) => {
                tracing::warn!(%reason, backend = %self.label, "llm extraction failed, using rule backend");
                self.fallback.extract_sync(query)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{check_invariants, Lexicon, TagPrediction};
    use crate::llm::{record_fixture, MockBackend, ReplayBackend, UsageLedger};

    fn tax() -> TagTaxonomy {
        TagTaxonomy::default_taxonomy()
    }

    fn q(text: &str) -> Query {
        Query::new(text, "U1").unwrap()
    }

    const WORK_QUERY: &str = "I want music from the 90s for work";

    #[test]
    fn prompt_embeds_query_and_all_facets() {
        let p = build_extraction_prompt(&q("90s for work"), &tax());
        assert!(p.contains("Request: 90s for work\n"));
        for f in Facet::ALL {
            assert!(p.contains(&format!("- {f}: ")), "{f}");
        }
        assert!(p.contains("1950s, 1960s"));
        assert_eq!(p, build_extraction_prompt(&q("90s for work"), &tax()));
    }

    #[test]
    fn prompt_omits_empty_facets() {
        let small = TagTaxonomy::builder()
            .canonical(Facet::Mood, "chill")
            .canonical(Facet::Decade, "1990s")
            .build()
            .unwrap();
        let p = build_extraction_prompt(&q("x"), &small);
        assert!(!p.contains("- language:"));
        assert!(p.contains("- mood: chill\n"));
    }

    #[test]
    fn parses_worked_example() {
        let resp = r#"{"tags":[{"facet":"decade","value":"90s","explicitness":"explicit"},
                               {"facet":"mood","value":"Focus","explicitness":"implicit"}]}"#;
        let query = q(WORK_QUERY);
        let r = parse_llm_tags(resp, &query, &tax()).unwrap();
        assert_eq!(
            r.predictions,
            vec![
                TagPrediction {
                    tag: Tag::new_unchecked(Facet::Decade, "1990s"),
                    explicitness: Explicitness::Explicit,
                    source_span: Some(Span { start: 22, end: 25 }),
                },
                TagPrediction {
                    tag: Tag::new_unchecked(Facet::Mood, "focus"),
                    explicitness: Explicitness::Implicit,
                    source_span: None,
                },
            ]
        );
        check_invariants(&r, &query, &tax()).unwrap();
    }

    #[test]
    fn out_of_taxonomy_only_means_no_tags() {
        let resp = r#"{"tags":[{"facet":"mood","value":"zzz","explicitness":"implicit"}]}"#;
        assert_eq!(
            parse_llm_tags(resp, &q("whatever"), &tax()),
            Err(ExtractionError::NoTagsExtracted)
        );
    }

    #[test]
    fn duplicate_keeps_explicit_variant() {
        let resp = r#"{"tags":[{"facet":"mood","value":"chill","explicitness":"implicit"},
                               {"facet":"mood","value":"chill","explicitness":"explicit"}]}"#;
        let r = parse_llm_tags(resp, &q("Chill vibes on a rainy afternoon"), &tax()).unwrap();
        assert_eq!(r.predictions.len(), 1);
        assert_eq!(r.predictions[0].explicitness, Explicitness::Explicit);
        assert_eq!(r.predictions[0].source_span, Some(Span { start: 0, end: 5 }));
    }

    #[test]
    fn unfounded_explicit_claim_is_downgraded() {
        let resp = r#"{"tags":[{"facet":"genre","value":"jazz","explicitness":"explicit"}]}"#;
        let r = parse_llm_tags(resp, &q("late night coffee"), &tax()).unwrap();
        assert_eq!(r.predictions[0].explicitness, Explicitness::Implicit);
        assert_eq!(r.predictions[0].source_span, None);
    }

    #[test]
    fn tolerates_fences_and_counts_drops() {
        let resp = "Sure!\n```json\n{\"tags\":[{\"facet\":\"tempo\",\"value\":\"fast\"},{\"facet\":\"genre\",\"value\":\"hip hop\",\"explicitness\":\"explicit\"}]}\n```";
        let r = parse_llm_tags(resp, &q("some hip hop please"), &tax()).unwrap();
        assert_eq!(r.dropped_tags, 1);
        assert_eq!(r.predictions[0].tag, Tag::new_unchecked(Facet::Genre, "hip-hop"));
        assert_eq!(r.predictions[0].source_span, Some(Span { start: 5, end: 12 }));
    }

    #[test]
    fn garbage_is_unparseable() {
        assert!(matches!(
            parse_llm_tags("I cannot help with that", &q("x"), &tax()),
            Err(ExtractionError::UnparseableResponse(_))
        ));
        assert!(matches!(
            parse_llm_tags("{\"labels\": []}", &q("x"), &tax()),
            Err(ExtractionError::UnparseableResponse(_))
        ));
    }

    fn rule(tax: &Arc<TagTaxonomy>) -> RuleExtractor {
        RuleExtractor::new(tax.clone(), Arc::new(Lexicon::default_lexicon(tax)))
    }

    #[tokio::test]
    async fn replay_returns_recorded_answer() {
        let tax = Arc::new(tax());
        let dir = tempfile::tempdir().unwrap();
        let query = q(WORK_QUERY);
        // recorded answer deliberately differs from what the rule backend would say
        record_fixture(
            dir.path(),
            &build_extraction_prompt(&query, &tax),
            r#"{"tags":[{"facet":"decade","value":"1990s","explicitness":"explicit"},{"facet":"genre","value":"rock","explicitness":"implicit"}]}"#,
        )
        .unwrap();
        let gw = Arc::new(LlmGateway::new(
            Arc::new(ReplayBackend::new(dir.path())),
            Arc::new(UsageLedger::new()),
        ));
        let ex = LlmExtractor::replay(gw, tax.clone(), rule(&tax));
        let r = ex.extract(&query).await.unwrap();
        assert_eq!(r.backend_used, ExtractionBackend::Replay);
        let tags: Vec<String> = r.tags().map(Tag::to_string).collect();
        assert_eq!(tags, ["decade:1990s", "genre:rock"]);
    }

    #[tokio::test]
    async fn model_failure_falls_back_to_rules() {
        let tax = Arc::new(tax());
        let dir = tempfile::tempdir().unwrap();
        let gw = Arc::new(LlmGateway::new(
            Arc::new(ReplayBackend::new(dir.path())),
            Arc::new(UsageLedger::new()),
        ));
        let ex = LlmExtractor::new(gw, tax.clone(), rule(&tax));
        let r = ex.extract(&q(WORK_QUERY)).await.unwrap();
        assert_eq!(r.backend_used, ExtractionBackend::Rule);
        assert_eq!(r.predictions.len(), 2);
    }

    #[tokio::test]
    async fn mock_answer_is_used() {
        let tax = Arc::new(tax());
        let query = q(WORK_QUERY);
        let mock = MockBackend::new().answer(
            Purpose::Extraction,
            &build_extraction_prompt(&query, &tax),
            r#"{"tags":[{"facet":"decade","value":"nineties","explicitness":"explicit"},{"facet":"mood","value":"focus","explicitness":"implicit"}]}"#,
        );
        let ledger = Arc::new(UsageLedger::new());
        let gw = Arc::new(LlmGateway::new(Arc::new(mock), ledger.clone()));
        let ex = LlmExtractor::new(gw, tax.clone(), rule(&tax));
        let r = ex.extract(&query).await.unwrap();
        assert_eq!(r.backend_used, ExtractionBackend::Llm);
        assert_eq!(r.predictions[0].source_span, Some(Span { start: 22, end: 25 }));
        assert_eq!(ledger.usage(Purpose::Extraction).calls, 1);
        assert!(ledger.usage(Purpose::Extraction).input_tokens > 0);
    }
}
