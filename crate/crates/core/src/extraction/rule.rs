use std::sync::Arc;

use async_trait::async_trait;

use super::{
    finalize, tokenize, ExtractionBackend, ExtractionError, ExtractionResult, Explicitness, Lexicon, Query,
    RawPrediction, Span, TagExtractor,
};
use crate::taxonomy::TagTaxonomy;

/// Lexicon-driven extraction. Pure: the same inputs always give the same result.
pub fn extract_rule_based(
    query: &Query,
    _taxonomy: &TagTaxonomy,
    lexicon: &Lexicon,
) -> Result<ExtractionResult, ExtractionError> {
    let text = query.text();
    let tokens = tokenize(text);
    let raw: Vec<RawPrediction> = lexicon
        .scan(text, &tokens)
        .into_iter()
        .map(|(first, last, entry)| {
            let span = Span {
                start: tokens[first].start,
                end: tokens[last].end,
            };
            RawPrediction {
                tag: entry.tag.clone(),
                explicitness: entry.explicitness,
                span: (entry.explicitness == Explicitness::Explicit).then_some(span),
                position: span.start,
            }
        })
        .collect();
    let predictions = finalize(raw);
    if predictions.is_empty() {
        return Err(ExtractionError::NoTagsExtracted);
    }
    Ok(ExtractionResult {
        predictions,
        backend_used: ExtractionBackend::Rule,
        dropped_tags: 0,
    })
}

#[derive(Debug, Clone)]
pub struct RuleExtractor {
    taxonomy: Arc<TagTaxonomy>,
    lexicon: Arc<Lexicon>,
}

impl RuleExtractor {
    pub fn new(taxonomy: Arc<TagTaxonomy>, lexicon: Arc<Lexicon>) -> Self {
        RuleExtractor { taxonomy, lexicon }
    }

    pub fn extract_sync(&self, query: &Query) -> Result<ExtractionResult, ExtractionError> {
        extract_rule_based(query, &self.taxonomy, &self.lexicon)
    }
}

#[async_trait]
impl TagExtractor for RuleExtractor {
    fn backend(&self) -> ExtractionBackend {
        ExtractionBackend::Rule
    }

    async fn extract(&self, query: &Query) -> Result<ExtractionResult, ExtractionError> {
        self.extract_sync(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{check_invariants, TagPrediction};
    use crate::taxonomy::{Facet, Tag};
    use proptest::prelude::*;

    fn setup() -> (TagTaxonomy, Lexicon) {
        let tax = TagTaxonomy::default_taxonomy();
        let lex = Lexicon::default_lexicon(&tax);
        (tax, lex)
    }

    fn q(text: &str) -> Query {
        Query::new(text, "U1").unwrap()
    }

    #[test]
    fn worked_example_90s_for_work() {
        let (tax, lex) = setup();
        let query = q("I want music from the 90s for work");
        let r = extract_rule_based(&query, &tax, &lex).unwrap();
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
        assert_eq!(Span { start: 22, end: 25 }.slice(query.text()), "90s");
        assert_eq!(r.backend_used, ExtractionBackend::Rule);
        check_invariants(&r, &query, &tax).unwrap();
    }

    #[test]
    fn chill_vibes_on_a_rainy_afternoon() {
        let (tax, lex) = setup();
        let query = q("Chill vibes on a rainy afternoon");
        let r = extract_rule_based(&query, &tax, &lex).unwrap();
        assert_eq!(
            r.predictions,
            vec![TagPrediction {
                tag: Tag::new_unchecked(Facet::Mood, "chill"),
                explicitness: Explicitness::Explicit,
                source_span: Some(Span { start: 0, end: 5 }),
            }]
        );
        assert_eq!(Span { start: 0, end: 5 }.slice(query.text()), "Chill");
    }

    #[test]
    fn gibberish_yields_nothing() {
        let (tax, lex) = setup();
        assert_eq!(
            extract_rule_based(&q("asdf qwerty"), &tax, &lex),
            Err(ExtractionError::NoTagsExtracted)
        );
    }

    #[test]
    fn only_one_decade_kept() {
        let (tax, lex) = setup();
        let r = extract_rule_based(&q("80s or 90s rock"), &tax, &lex).unwrap();
        let decades: Vec<_> = r.tags().filter(|t| t.facet == Facet::Decade).collect();
        assert_eq!(decades, [&Tag::new_unchecked(Facet::Decade, "1980s")]);
    }

    #[test]
    fn cap_keeps_explicit_first() {
        let (tax, lex) = setup();
        let query = q("study while running at the beach, paris and tokyo, rock jazz pop soul folk metal");
        let r = extract_rule_based(&query, &tax, &lex).unwrap();
        assert_eq!(r.predictions.len(), 6);
        assert!(r.predictions.iter().all(|p| p.explicitness == Explicitness::Explicit));
        check_invariants(&r, &query, &tax).unwrap();
    }

    #[test]
    fn repeated_calls_are_identical() {
        let (tax, lex) = setup();
        let query = q("I want music from the 90s for work");
        let first = extract_rule_based(&query, &tax, &lex).unwrap();
        for _ in 0..1000 {
            assert_eq!(extract_rule_based(&query, &tax, &lex).unwrap(), first);
        }
    }

    proptest! {
        #[test]
        fn invariants_hold_on_lexicon_soup(words in prop::collection::vec(
            prop_oneof![
                Just("90s"), Just("Nineties"), Just("work"), Just("chill"), Just("rainy"), Just("party"),
                Just("hip hop"), Just("hip"), Just("hop"), Just("for"), Just("the"), Just("women"),
                Just("k-pop"), Just("jazz"), Just("coffee shop"), Just("eighties"), Just("2010"),
                Just("r&b"), Just("dance"), Just(","), Just("!"), Just("  "), Just("ÉNERGIE"),
            ],
            1..25,
        )) {
            let (tax, lex) = setup();
            let text = words.join(" ");
            let Ok(query) = Query::new(text, "u") else { return Ok(()) };
            match extract_rule_based(&query, &tax, &lex) {
                Ok(r) => prop_assert!(check_invariants(&r, &query, &tax).is_ok(), "{:?}", check_invariants(&r, &query, &tax)),
                Err(e) => prop_assert_eq!(e, ExtractionError::NoTagsExtracted),
            }
        }
    }
}
