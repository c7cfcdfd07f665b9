//! Retrieval strategies over an [`Index`].
//!
//! Every strategy selects results by rank alone. Scores travel with the hits
//! for reporting, but scores from different embedding spaces (term vs.
//! definition) are never compared with each other.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, EmbeddingProvider};
use crate::index::{glossary_unit_id, Index, IndexError, SearchHit, UnitKind};

/// Default number of results handed to the generator.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query text is empty")]
    EmptyInput,
    #[error("strategy `{0}` is not a single-embedding glossary mode")]
    NotGlossaryMode(StrategyKind),
    #[error("unit `{0}` needed for context is missing from the index")]
    MissingUnit(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub type Result<T, E = RetrievalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    GlossaryTerm,
    GlossaryDefinition,
    GlossaryCombined,
    GlossaryBest,
    SentenceToParagraph,
    ParagraphDirect,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::GlossaryTerm,
        StrategyKind::GlossaryDefinition,
        StrategyKind::GlossaryCombined,
        StrategyKind::GlossaryBest,
        StrategyKind::SentenceToParagraph,
        StrategyKind::ParagraphDirect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::GlossaryTerm => "glossary-term",
            StrategyKind::GlossaryDefinition => "glossary-definition",
            StrategyKind::GlossaryCombined => "glossary-combined",
            StrategyKind::GlossaryBest => "glossary-best",
            StrategyKind::SentenceToParagraph => "sentence-to-paragraph",
            StrategyKind::ParagraphDirect => "paragraph-direct",
        }
    }

    pub fn is_glossary(self) -> bool {
        matches!(
            self,
            StrategyKind::GlossaryTerm
                | StrategyKind::GlossaryDefinition
                | StrategyKind::GlossaryCombined
                | StrategyKind::GlossaryBest
        )
    }

    /// Index kind searched by a single-embedding glossary mode.
    fn glossary_kind(self) -> Option<UnitKind> {
        match self {
            StrategyKind::GlossaryTerm => Some(UnitKind::Term),
            StrategyKind::GlossaryDefinition => Some(UnitKind::Definition),
            StrategyKind::GlossaryCombined => Some(UnitKind::Combined),
            _ => None,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
                format!(
                    "unknown strategy `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalResult<'a> {
    pub strategy: StrategyKind,
    pub query_text: String,
    pub hits: Vec<SearchHit<'a>>,
    /// Text handed to the generator for each hit, in rank order.
    pub context_texts: Vec<String>,
}

impl RetrievalResult<'_> {
    pub fn hit_ids(&self) -> Vec<String> {
        self.hits.iter().map(|h| h.entry.unit_id.clone()).collect()
    }
}

/// Stateless view pairing an index with the provider used to embed queries.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    index: &'a Index,
    provider: &'a dyn EmbeddingProvider,
}

impl<'a> Retriever<'a> {
    pub fn new(index: &'a Index, provider: &'a dyn EmbeddingProvider) -> Self {
        Self { index, provider }
    }

    pub fn index(&self) -> &'a Index {
        self.index
    }

    pub fn provider(&self) -> &'a dyn EmbeddingProvider {
        self.provider
    }

    pub fn retrieve(
        &self,
        strategy: StrategyKind,
        query: &str,
        k: usize,
    ) -> Result<RetrievalResult<'a>> {
        match strategy {
            StrategyKind::GlossaryTerm
            | StrategyKind::GlossaryDefinition
            | StrategyKind::GlossaryCombined => self.glossary(query, k, strategy),
            StrategyKind::GlossaryBest => self.glossary_best(query, k),
            StrategyKind::SentenceToParagraph => self.sentence_to_paragraph(query, k),
            StrategyKind::ParagraphDirect => self.paragraph_direct(query, k),
        }
    }

    fn embed_query(&self, query: &str) -> Result<crate::embedding::EmbeddingVector> {
        if query.trim().is_empty() {
            return Err(RetrievalError::EmptyInput);
        }
        Ok(self.provider.embed(query)?)
    }

    /// Glossary search against one of the term, definition or combined
    /// embeddings. Contexts are always the combined term + definition text.
    pub fn glossary(
        &self,
        query: &str,
        k: usize,
        mode: StrategyKind,
    ) -> Result<RetrievalResult<'a>> {
        let kind = mode
            .glossary_kind()
            .ok_or(RetrievalError::NotGlossaryMode(mode))?;
        let q = self.embed_query(query)?;
        let hits = self.index.search(&q, k, Some(&[kind]))?;
        self.glossary_result(mode, query, hits)
    }

    /// Runs term and definition searches and merges them by each entry's
    /// best rank. Equal ranks put the term match first.
    pub fn glossary_best(&self, query: &str, k: usize) -> Result<RetrievalResult<'a>> {
        let q = self.embed_query(query)?;
        let by_term = self.index.search(&q, k, Some(&[UnitKind::Term]))?;
        let by_definition = self.index.search(&q, k, Some(&[UnitKind::Definition]))?;

        let mut candidates: Vec<(usize, u8, SearchHit<'a>)> = by_term
            .into_iter()
            .map(|h| (h.rank, 0, h))
            .chain(by_definition.into_iter().map(|h| (h.rank, 1, h)))
            .collect();
        candidates.sort_by_key(|(rank, mode, _)| (*rank, *mode));

        let mut seen = HashSet::new();
        let hits = candidates
            .into_iter()
            .filter(|(_, _, h)| seen.insert(h.entry.source_id.as_str()))
            .take(k)
            .enumerate()
            .map(|(i, (_, _, h))| SearchHit { rank: i + 1, ..h })
            .collect();
        self.glossary_result(StrategyKind::GlossaryBest, query, hits)
    }

    fn glossary_result(
        &self,
        strategy: StrategyKind,
        query: &str,
        hits: Vec<SearchHit<'a>>,
    ) -> Result<RetrievalResult<'a>> {
        let context_texts = hits
            .iter()
            .map(|h| {
                let id = glossary_unit_id(&h.entry.source_id, UnitKind::Combined);
                self.index
                    .get(&id)
                    .map(|e| e.text.clone())
                    .ok_or(RetrievalError::MissingUnit(id))
            })
            .collect::<Result<_>>()?;
        Ok(RetrievalResult {
            strategy,
            query_text: query.to_string(),
            hits,
            context_texts,
        })
    }

    /// Sentence search whose hits are the distinct parent paragraphs.
    pub fn sentence_to_paragraph(&self, query: &str, k: usize) -> Result<RetrievalResult<'a>> {
        let q = self.embed_query(query)?;
        let hits = self.index.search_distinct_parents(&q, k)?;
        Ok(paragraph_result(
            StrategyKind::SentenceToParagraph,
            query,
            hits,
        ))
    }

    pub fn paragraph_direct(&self, query: &str, k: usize) -> Result<RetrievalResult<'a>> {
        let q = self.embed_query(query)?;
        let hits = self.index.search(&q, k, Some(&[UnitKind::Paragraph]))?;
        Ok(paragraph_result(StrategyKind::ParagraphDirect, query, hits))
    }
}

fn paragraph_result<'a>(
    strategy: StrategyKind,
    query: &str,
    hits: Vec<SearchHit<'a>>,
) -> RetrievalResult<'a> {
    RetrievalResult {
        strategy,
        query_text: query.to_string(),
        context_texts: hits.iter().map(|h| h.entry.text.clone()).collect(),
        hits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_document, Corpus, GlossaryEntry};
    use crate::embedding::ReferenceEmbedder;
    use crate::index::units_from_corpus;

    fn glossary_index(entries: &[(&str, &str)]) -> (Index, ReferenceEmbedder) {
        let mut corpus = Corpus::new();
        corpus.glossary = entries
            .iter()
            .enumerate()
            .map(|(i, (t, d))| GlossaryEntry::new(format!("g{i}"), t, d))
            .collect();
        let e = ReferenceEmbedder::new();
        (Index::build(units_from_corpus(&corpus), &e).unwrap(), e)
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in StrategyKind::ALL {
            assert_eq!(s.as_str().parse::<StrategyKind>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert_eq!(
            "Glossary_Best".parse::<StrategyKind>().unwrap(),
            StrategyKind::GlossaryBest
        );
        assert!("bm25".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn term_query_finds_entry_with_combined_context() {
        let (idx, e) = glossary_index(&[
            (
                "access point",
                "an entity that provides distribution services",
            ),
            ("beacon", "a frame transmitted periodically"),
            ("cell", "the basic electrochemical unit"),
        ]);
        let r = Retriever::new(&idx, &e);
        let res = r.glossary("beacon", 3, StrategyKind::GlossaryTerm).unwrap();
        assert_eq!(res.hits[0].entry.unit_id, "g1/term");
        assert_eq!(
            res.context_texts[0],
            "beacon — a frame transmitted periodically"
        );
        assert_eq!(res.context_texts.len(), res.hits.len());
        assert!(matches!(
            r.glossary("beacon", 3, StrategyKind::GlossaryBest),
            Err(RetrievalError::NotGlossaryMode(_))
        ));
        assert!(matches!(
            r.glossary("  ", 3, StrategyKind::GlossaryTerm),
            Err(RetrievalError::EmptyInput)
        ));
    }

    #[test]
    fn best_merges_by_rank_and_dedups() {
        let (idx, e) = glossary_index(&[
            (
                "float charge",
                "constant voltage applied to keep a battery charged",
            ),
            (
                "equalizing charge",
                "an extended charge to balance cell voltages",
            ),
            ("cell", "the basic electrochemical unit of a battery"),
            ("electrolyte", "the conducting medium between electrodes"),
        ]);
        let r = Retriever::new(&idx, &e);
        let q = "float charge battery";
        let res = r.glossary_best(q, 3).unwrap();
        let term = r.glossary(q, 3, StrategyKind::GlossaryTerm).unwrap();
        let def = r.glossary(q, 3, StrategyKind::GlossaryDefinition).unwrap();

        let sources: Vec<_> = res.hits.iter().map(|h| h.entry.source_id.clone()).collect();
        let unique: HashSet<_> = sources.iter().collect();
        assert_eq!(unique.len(), sources.len());
        assert_eq!(
            res.hits.iter().map(|h| h.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        // The term winner leads; ties at equal rank go to the term side.
        assert_eq!(res.hits[0].entry.unit_id, term.hits[0].entry.unit_id);
        let best_rank = |source: &str| {
            term.hits
                .iter()
                .chain(&def.hits)
                .filter(|x| x.entry.source_id == source)
                .map(|x| x.rank)
                .min()
                .unwrap()
        };
        let keys: Vec<_> = res
            .hits
            .iter()
            .map(|h| best_rank(&h.entry.source_id))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        // Anything with a strictly better key than the last kept entry made the cut.
        let last = *keys.last().unwrap();
        for x in term.hits.iter().chain(&def.hits) {
            if best_rank(&x.entry.source_id) < last {
                assert!(sources.contains(&x.entry.source_id));
            }
        }
    }

    #[test]
    fn sentence_to_paragraph_returns_distinct_paragraphs() {
        let text = "The beacon interval is set by the access point. Stations listen.\n\n\
                    Battery cells age. Float charge keeps a cell charged.\n\n\
                    The access point buffers frames. It sends a beacon.";
        let mut corpus = Corpus::new();
        corpus
            .add_document(ingest_document(text.as_bytes(), "d").unwrap())
            .unwrap();
        let e = ReferenceEmbedder::new();
        let idx = Index::build(units_from_corpus(&corpus), &e).unwrap();
        let r = Retriever::new(&idx, &e);
        let res = r
            .sentence_to_paragraph("beacon interval set by the access point", 3)
            .unwrap();
        assert_eq!(res.hits.len(), 3);
        let ids: HashSet<_> = res.hits.iter().map(|h| h.entry.unit_id.as_str()).collect();
        assert_eq!(ids.len(), 3);
        assert!(res.hits.iter().all(|h| h.entry.kind == UnitKind::Paragraph));
        assert_eq!(res.hits[0].entry.unit_id, "d/p0");
        assert_eq!(res.context_texts[0], corpus.documents[0].paragraphs[0].text);

        let direct = r.paragraph_direct("float charge", 1).unwrap();
        assert_eq!(direct.hits[0].entry.unit_id, "d/p1");
    }
}
