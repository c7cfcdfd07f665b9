//! Exact cosine index over embedded text units.
//!
//! Search is a full linear scan. Results are ordered by score descending,
//! then by ascending `unit_id`, so equal scores always rank the same way.
//! Scores are returned to callers but never used to cut results off.

mod store;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedding::{self, EmbedError, EmbeddingProvider, EmbeddingVector};

pub use store::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero units")]
    Empty,
    #[error("duplicate unit id `{0}`")]
    DuplicateUnit(String),
    #[error("embedding unit `{unit_id}` failed")]
    Embedding {
        unit_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("dimension mismatch: index has {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("sentence parent paragraph `{0}` is not in the index")]
    MissingParent(String),
    #[error("incompatible index file: {0}")]
    IncompatibleIndex(String),
    #[error("index checksum mismatch")]
    ChecksumMismatch,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IndexError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Term,
    Definition,
    Combined,
    Sentence,
    Paragraph,
}

impl UnitKind {
    pub const ALL: [UnitKind; 5] = [
        UnitKind::Term,
        UnitKind::Definition,
        UnitKind::Combined,
        UnitKind::Sentence,
        UnitKind::Paragraph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Term => "term",
            UnitKind::Definition => "definition",
            UnitKind::Combined => "combined",
            UnitKind::Sentence => "sentence",
            UnitKind::Paragraph => "paragraph",
        }
    }

    pub fn is_glossary(self) -> bool {
        matches!(
            self,
            UnitKind::Term | UnitKind::Definition | UnitKind::Combined
        )
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown unit kind `{s}`"))
    }
}

/// Unit id of one of the three embeddings of a glossary entry.
pub fn glossary_unit_id(entry_id: &str, kind: UnitKind) -> String {
    format!("{entry_id}/{kind}")
}

/// A text unit awaiting embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexUnit {
    pub unit_id: String,
    pub kind: UnitKind,
    pub parent_para_id: Option<String>,
    /// Document id for sentences and paragraphs, glossary entry id otherwise.
    pub source_id: String,
    pub text: String,
    pub word_count: usize,
}

/// Every indexable unit of a corpus: term, definition and combined text for
/// each glossary entry, then each paragraph followed by its sentences.
pub fn units_from_corpus(corpus: &Corpus) -> Vec<IndexUnit> {
    let mut units = Vec::new();
    for g in &corpus.glossary {
        for (kind, text) in [
            (UnitKind::Term, &g.term),
            (UnitKind::Definition, &g.definition),
            (UnitKind::Combined, &g.combined),
        ] {
            units.push(IndexUnit {
                unit_id: glossary_unit_id(&g.entry_id, kind),
                kind,
                parent_para_id: None,
                source_id: g.entry_id.clone(),
                text: text.clone(),
                word_count: crate::corpus::word_count(text),
            });
        }
    }
    for p in corpus.paragraphs() {
        units.push(IndexUnit {
            unit_id: p.para_id.clone(),
            kind: UnitKind::Paragraph,
            parent_para_id: None,
            source_id: p.doc_id.clone(),
            text: p.text.clone(),
            word_count: p.word_count,
        });
        for s in &p.sentences {
            units.push(IndexUnit {
                unit_id: s.sent_id.clone(),
                kind: UnitKind::Sentence,
                parent_para_id: Some(p.para_id.clone()),
                source_id: p.doc_id.clone(),
                text: s.text.clone(),
                word_count: s.word_count,
            });
        }
    }
    units
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub unit_id: String,
    pub kind: UnitKind,
    pub parent_para_id: Option<String>,
    pub source_id: String,
    pub vector: EmbeddingVector,
    pub text: String,
    pub word_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit<'a> {
    pub entry: &'a IndexEntry,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

impl Serialize for SearchHit<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("SearchHit", 6)?;
        s.serialize_field("rank", &self.rank)?;
        s.serialize_field("unit_id", &self.entry.unit_id)?;
        s.serialize_field("kind", &self.entry.kind)?;
        s.serialize_field("source_id", &self.entry.source_id)?;
        s.serialize_field("parent_para_id", &self.entry.parent_para_id)?;
        s.serialize_field("score", &self.score)?;
        s.end()
    }
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Index {
    provider_id: String,
    dim: usize,
    entries: Vec<IndexEntry>,
    norms_sq: Vec<f64>,
    by_id: HashMap<String, usize>,
}

impl Index {
    /// Embeds every unit with `provider`.
    pub fn build(units: Vec<IndexUnit>, provider: &dyn EmbeddingProvider) -> Result<Self> {
        if units.is_empty() {
            return Err(IndexError::Empty);
        }
        let texts: Vec<&str> = units.iter().map(|u| u.text.as_str()).collect();
        let vectors = provider.embed_batch(&texts).map_err(|e| match e {
            EmbedError::Batch { index, source } => IndexError::Embedding {
                unit_id: units[index].unit_id.clone(),
                source: *source,
            },
            other => IndexError::Embedding {
                unit_id: units[0].unit_id.clone(),
                source: other,
            },
        })?;
        let entries = units
            .into_iter()
            .zip(vectors)
            .map(|(u, vector)| IndexEntry {
                unit_id: u.unit_id,
                kind: u.kind,
                parent_para_id: u.parent_para_id,
                source_id: u.source_id,
                vector,
                text: u.text,
                word_count: u.word_count,
            })
            .collect();
        Self::from_entries(provider.provider_id().to_string(), provider.dim(), entries)
    }

    pub(crate) fn from_entries(
        provider_id: String,
        dim: usize,
        entries: Vec<IndexEntry>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(IndexError::Empty);
        }
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.vector.dim() != dim {
                return Err(IndexError::Dimension {
                    expected: dim,
                    found: e.vector.dim(),
                });
            }
            if by_id.insert(e.unit_id.clone(), i).is_some() {
                return Err(IndexError::DuplicateUnit(e.unit_id.clone()));
            }
        }
        let norms_sq = entries
            .iter()
            .map(|e| embedding::norm_sq(e.vector.values()))
            .collect();
        Ok(Self {
            provider_id,
            dim,
            entries,
            norms_sq,
            by_id,
        })
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, unit_id: &str) -> Option<&IndexEntry> {
        self.by_id.get(unit_id).map(|&i| &self.entries[i])
    }

    pub fn count_kind(&self, kind: UnitKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    fn check_query(&self, query: &EmbeddingVector, k: usize) -> Result<()> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::Dimension {
                expected: self.dim,
                found: query.dim(),
            });
        }
        Ok(())
    }

    /// Scores every entry whose kind passes `keep`, sorted best first.
    fn ranked(
        &self,
        query: &EmbeddingVector,
        keep: impl Fn(UnitKind) -> bool,
    ) -> Vec<(f64, usize)> {
        let q = query.values();
        let q_norm_sq = embedding::norm_sq(q);
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| keep(e.kind))
            .map(|(i, e)| {
                let s =
                    embedding::cosine_with_norms(q, q_norm_sq, e.vector.values(), self.norms_sq[i]);
                (s, i)
            })
            .collect();
        scored.sort_unstable_by(|a, b| self.order(a, b));
        scored
    }

    fn order(&self, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| self.entries[a.1].unit_id.cmp(&self.entries[b.1].unit_id))
    }

    /// Top `k` entries by cosine, optionally restricted to `filter` kinds.
    ///
    /// Returns fewer than `k` hits only when fewer entries pass the filter.
    pub fn search(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: Option<&[UnitKind]>,
    ) -> Result<Vec<SearchHit<'_>>> {
        self.check_query(query, k)?;
        let keep = |kind: UnitKind| filter.is_none_or(|f| f.contains(&kind));
        Ok(self
            .ranked(query, keep)
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(r, (score, i))| SearchHit {
                entry: &self.entries[i],
                score,
                rank: r + 1,
            })
            .collect())
    }

    /// Sentence search collapsed onto parent paragraphs.
    ///
    /// Sentences are walked best first; each paragraph is emitted the first
    /// time one of its sentences appears, carrying that sentence's score.
    /// Stops after `k` distinct paragraphs.
    pub fn search_distinct_parents(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<SearchHit<'_>>> {
        self.check_query(query, k)?;
        let mut seen = HashSet::new();
        let mut hits = Vec::with_capacity(k);
        for (score, i) in self.ranked(query, |kind| kind == UnitKind::Sentence) {
            let Some(parent) = self.entries[i].parent_para_id.as_deref() else {
                continue;
            };
            if !seen.insert(parent) {
                continue;
            }
            let entry = self
                .get(parent)
                .ok_or_else(|| IndexError::MissingParent(parent.to_string()))?;
            hits.push(SearchHit {
                entry,
                score,
                rank: hits.len() + 1,
            });
            if hits.len() == k {
                break;
            }
        }
        Ok(hits)
    }
}
