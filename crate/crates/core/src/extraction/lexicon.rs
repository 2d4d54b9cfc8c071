use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use super::Explicitness;
use crate::taxonomy::{Facet, Tag, TagTaxonomy};

pub const DEFAULT_LEXICON_TSV: &str = include_str!("../../data/lexicon.tsv");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("lexicon line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("cannot read lexicon: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub phrase: String,
    pub tag: Tag,
    pub explicitness: Explicitness,
}

/// A word of the query with its character range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '&' | '\'' | '-')
}

/// Splits into lowercase word tokens (alphanumerics plus `&`, `'` and `-`),
/// recording character offsets.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<Token> = None;
    for (pos, c) in text.chars().enumerate() {
        if is_token_char(c) {
            let tok = current.get_or_insert_with(|| Token {
                text: String::new(),
                start: pos,
                end: pos,
            });
            tok.text.extend(c.to_lowercase());
            tok.end = pos + 1;
        } else if let Some(tok) = current.take() {
            tokens.push(tok);
        }
    }
    tokens.extend(current);
    tokens
}

/// Phrase → tag table matched longest-first over query tokens.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    by_phrase: HashMap<Vec<String>, Vec<usize>>,
    max_words: usize,
}

impl Lexicon {
    pub fn default_lexicon(taxonomy: &TagTaxonomy) -> Self {
        Self::parse(DEFAULT_LEXICON_TSV, taxonomy).expect("bundled lexicon is valid")
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &TagTaxonomy) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| LexiconError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text, taxonomy)
    }

    /// Parses `phrase TAB facet:value TAB explicit|implicit` lines. `#` starts
    /// a comment line. Explicit phrases must normalize to their own tag so
    /// that spans always resolve.
    pub fn parse(text: &str, taxonomy: &TagTaxonomy) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |reason: String| LexiconError::BadLine { line: line_no, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated columns, got {}", cols.len())));
            }
            let phrase = cols[0].trim();
            if tokenize(phrase).is_empty() {
                return Err(bad("empty phrase".into()));
            }
            let (facet, value) = cols[1]
                .split_once(':')
                .ok_or_else(|| bad(format!("{:?} is not facet:value", cols[1])))?;
            let facet: Facet = facet.parse().map_err(|e| bad(format!("{e}")))?;
            let tag = taxonomy.tag(facet, value.trim()).map_err(|e| bad(e.to_string()))?;
            let explicitness: Explicitness = cols[2].parse().map_err(bad)?;
            if explicitness == Explicitness::Explicit {
                match taxonomy.normalize(facet, phrase) {
                    Ok(t) if t == tag => {}
                    _ => {
                        return Err(bad(format!(
                            "explicit phrase {phrase:?} does not normalize to {tag}"
                        )))
                    }
                }
            }
            entries.push(LexiconEntry {
                phrase: phrase.to_string(),
                tag,
                explicitness,
            });
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: Vec<LexiconEntry>) -> Self {
        let mut by_phrase: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
        let mut max_words = 0;
        for (i, e) in entries.iter().enumerate() {
            let key: Vec<String> = tokenize(&e.phrase).into_iter().map(|t| t.text).collect();
            max_words = max_words.max(key.len());
            by_phrase.entry(key).or_default().push(i);
        }
        Lexicon {
            entries,
            by_phrase,
            max_words,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// Longest-match-first scan. Returns `(first token, last token, entry)`
    /// for each hit, in query order. Words of a multi-word hit must be
    /// separated by whitespace only.
    pub fn scan<'a>(&'a self, text: &str, tokens: &[Token]) -> Vec<(usize, usize, &'a LexiconEntry)> {
        let chars: Vec<char> = text.chars().collect();
        let joined_by_space = |a: &Token, b: &Token| chars[a.end..b.start].iter().all(|c| c.is_whitespace());
        let mut hits = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut advanced = false;
            let longest = self.max_words.min(tokens.len() - i);
            for len in (1..=longest).rev() {
                let window = &tokens[i..i + len];
                if window.windows(2).any(|w| !joined_by_space(&w[0], &w[1])) {
                    continue;
                }
                let key: Vec<String> = window.iter().map(|t| t.text.clone()).collect();
                if let Some(ids) = self.by_phrase.get(&key) {
                    for &id in ids {
                        hits.push((i, i + len - 1, &self.entries[id]));
                    }
                    i += len;
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                i += 1;
            }
        }
        hits
    }
}
