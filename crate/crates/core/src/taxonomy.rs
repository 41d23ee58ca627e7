//! Mapping from free-text model labels onto the misuse taxonomy.

use std::path::Path;

use thiserror::Error;

use crate::model::MisuseCategory;

const DEFAULT_LEXICON: &str = include_str!("../data/taxonomy.tsv");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: expected `<CategoryTag>\\t<keyword>`")]
    Malformed { line: usize },
    #[error("lexicon line {line}: unknown category tag `{tag}`")]
    UnknownTag { line: usize, tag: String },
    #[error("lexicon line {line}: empty keyword")]
    EmptyKeyword { line: usize },
    #[error("reading lexicon: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("category label is empty")]
pub struct EmptyLabel;

/// Keyword lexicon, ordered longest keyword first.
#[derive(Debug, Clone)]
pub struct CategoryLexicon {
    entries: Vec<(MisuseCategory, String)>,
}

impl Default for CategoryLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is well-formed")
    }
}

impl CategoryLexicon {
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (tag, keyword) = raw
                .split_once('\t')
                .ok_or(LexiconError::Malformed { line })?;
            let category = MisuseCategory::from_tag(tag.trim()).ok_or_else(|| {
                LexiconError::UnknownTag {
                    line,
                    tag: tag.trim().to_string(),
                }
            })?;
            let keyword = keyword.trim().to_lowercase();
            if keyword.is_empty() {
                return Err(LexiconError::EmptyKeyword { line });
            }
            entries.push((category, keyword));
        }
        // stable: equal-length keywords keep file order
        entries.sort_by_key(|e| std::cmp::Reverse(e.1.len()));
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> impl Iterator<Item = (MisuseCategory, &str)> {
        self.entries.iter().map(|(c, k)| (*c, k.as_str()))
    }

    /// Maps a model-emitted label to a taxonomy tag. Labels that match no
    /// keyword land in `OutOfTaxonomy`.
    pub fn canonical_category(&self, label: &str) -> Result<MisuseCategory, EmptyLabel> {
        if label.is_empty() {
            return Err(EmptyLabel);
        }
        if let Some(c) = MisuseCategory::from_tag(label.trim()) {
            return Ok(c);
        }
        let lowered = label.to_lowercase();
        Ok(self
            .entries
            .iter()
            .find(|(_, kw)| contains_word(&lowered, kw))
            .map(|(c, _)| *c)
            .unwrap_or(MisuseCategory::OutOfTaxonomy))
    }
}

/// True when `needle` occurs in `haystack` bounded by non-alphanumeric
/// characters (or the string ends).
pub(crate) fn contains_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}
