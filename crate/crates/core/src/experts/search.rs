use std::collections::HashMap;
use std::path::Path;

use super::{ExpertCall, ExpertError, ExpertExecutor, ExpertOutput, RawExpertOutput};

/// Snippet returned when the corpus has no entry for a query.
pub const NO_RESULTS: &str = "no results";

/// Lowercase and collapse runs of whitespace.
pub fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Local query → snippet table backing the mock search expert.
///
/// File format is a flat TOML table: `"query text" = "snippet"`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchCorpus {
    entries: HashMap<String, String>,
}

impl SearchCorpus {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (normalize_query(k.as_ref()), v.into()))
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let table: HashMap<String, String> = toml::from_str(text).map_err(|e| e.to_string())?;
        Ok(Self::new(table))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn lookup(&self, query: &str) -> &str {
        self.entries
            .get(&normalize_query(query))
            .map_or(NO_RESULTS, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Web-search stand-in that answers from a [`SearchCorpus`].
#[derive(Debug, Clone, Default)]
pub struct SearchExpert {
    corpus: SearchCorpus,
}

impl SearchExpert {
    pub fn new(corpus: SearchCorpus) -> Self {
        Self { corpus }
    }

    pub fn search_lookup(&self, query: &str) -> String {
        self.corpus.lookup(query).to_string()
    }
}

impl ExpertExecutor for SearchExpert {
    fn execute(&self, call: &ExpertCall<'_>) -> Result<ExpertOutput, ExpertError> {
        let query = call.query.unwrap_or_default();
        Ok(RawExpertOutput::PlainText(self.search_lookup(query)).into())
    }
}
