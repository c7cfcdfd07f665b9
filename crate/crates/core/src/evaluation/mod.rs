//! Gold-annotated query sets, retrieval outcomes and strategy comparisons.

mod report;
mod suite;

pub use report::{
    emit_report, hypothesis_report, render_report, HypothesisReport, ReportFormat, ReportInputs,
    ReportRow,
};
pub use suite::{run_suite, SuiteConfig, SuiteResult};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::diagnostics::DiagnosticsError;
use crate::embedding::EmbeddingProvider;
use crate::generation::GenerationError;
use crate::index::{Index, SearchHit};
use crate::retrieval::{RetrievalError, Retriever, StrategyKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query set validation failed:\n  {}", .problems.join("\n  "))]
    Validation { problems: Vec<String> },
    #[error("query set line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("query `{query_id}`")]
    Retrieval {
        query_id: String,
        #[source]
        source: RetrievalError,
    },
    #[error("query `{query_id}`")]
    Generation {
        query_id: String,
        #[source]
        source: GenerationError,
    },
    #[error("query `{query_id}`")]
    Diagnostics {
        query_id: String,
        #[source]
        source: DiagnosticsError,
    },
    #[error("strategies cover different queries; unmatched: {}", .unmatched.join(", "))]
    Coverage { unmatched: Vec<String> },
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("invalid json")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HypothesisId {
    H1,
    H2,
    H3,
    H4,
    H5,
    H6,
    H7,
}

impl HypothesisId {
    pub const ALL: [HypothesisId; 7] = [
        HypothesisId::H1,
        HypothesisId::H2,
        HypothesisId::H3,
        HypothesisId::H4,
        HypothesisId::H5,
        HypothesisId::H6,
        HypothesisId::H7,
    ];
}

impl fmt::Display for HypothesisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for HypothesisId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|h| h.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown hypothesis `{s}`"))
    }
}

/// One line of a query-set file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_id: String,
    pub text: String,
    pub gold_unit_ids: BTreeSet<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub keyword: Option<String>,
    pub hypothesis_ids: BTreeSet<HypothesisId>,
    /// Reference answer used to score generated responses by containment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl EvalQuery {
    pub fn has(&self, h: HypothesisId) -> bool {
        self.hypothesis_ids.contains(&h)
    }
}

/// Parses and validates a JSON-Lines query set against `corpus`.
///
/// Every problem is collected before failing, so one run lists all
/// unresolved gold ids.
pub fn parse_query_set(text: &str, corpus: &Corpus) -> Result<Vec<EvalQuery>> {
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: EvalQuery = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        queries.push(q);
    }

    let known = corpus.known_ids();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for q in &queries {
        let id = &q.query_id;
        if !seen.insert(id.as_str()) {
            problems.push(format!("{id}: duplicate query id"));
        }
        if q.text.trim().is_empty() {
            problems.push(format!("{id}: empty query text"));
        }
        if q.gold_unit_ids.is_empty() {
            problems.push(format!("{id}: no gold unit ids"));
        }
        if q.hypothesis_ids.is_empty() {
            problems.push(format!("{id}: no hypothesis ids"));
        }
        for g in &q.gold_unit_ids {
            if !known.contains(g.as_str()) {
                problems.push(format!("{id}: unresolved gold id `{g}`"));
            }
        }
        if q.has(HypothesisId::H3) {
            if q.keyword.as_deref().is_none_or(|k| k.trim().is_empty()) {
                problems.push(format!("{id}: H3 query needs a keyword"));
            }
            if !q.gold_unit_ids.iter().any(|g| corpus.sentence(g).is_some()) {
                problems.push(format!("{id}: H3 query needs a gold sentence id"));
            }
        }
        if q.has(HypothesisId::H5) && q.answer.as_deref().is_none_or(|a| a.trim().is_empty()) {
            problems.push(format!("{id}: H5 query needs an answer"));
        }
        if q.has(HypothesisId::H6)
            && !q
                .gold_unit_ids
                .iter()
                .any(|g| corpus.glossary_entry(g).is_some())
        {
            problems.push(format!("{id}: H6 query needs a gold glossary entry"));
        }
    }
    if problems.is_empty() {
        Ok(queries)
    } else {
        Err(EvalError::Validation { problems })
    }
}

pub fn load_query_set(path: &Path, corpus: &Corpus) -> Result<Vec<EvalQuery>> {
    parse_query_set(&std::fs::read_to_string(path)?, corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeHit {
    pub unit_id: String,
    pub gold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub query_id: String,
    pub strategy: StrategyKind,
    pub k: usize,
    pub hit_at_k: bool,
    pub gold_rank: Option<usize>,
    pub reciprocal_rank: f64,
    pub scores_of_top_k: Vec<f64>,
    /// Retrieved ids in rank order, parallel to `scores_of_top_k`.
    pub hits: Vec<OutcomeHit>,
}

impl EvalOutcome {
    pub fn gold_score(&self) -> Option<f64> {
        self.gold_rank.map(|r| self.scores_of_top_k[r - 1])
    }

    /// Best score among retrieved units that are not gold.
    pub fn top_non_gold_score(&self) -> Option<f64> {
        self.hits
            .iter()
            .zip(&self.scores_of_top_k)
            .find(|(h, _)| !h.gold)
            .map(|(_, &s)| s)
    }
}

/// Ids a hit may match for `query`: the gold ids themselves plus the
/// paragraph of any gold sentence.
pub(crate) fn gold_targets(query: &EvalQuery, corpus: &Corpus) -> BTreeSet<String> {
    let mut targets = query.gold_unit_ids.clone();
    for g in &query.gold_unit_ids {
        if let Some(s) = corpus.sentence(g) {
            targets.insert(s.para_id.clone());
        }
    }
    targets
}

fn is_gold(hit: &SearchHit<'_>, targets: &BTreeSet<String>) -> bool {
    targets.contains(&hit.entry.unit_id)
        || (hit.entry.kind.is_glossary() && targets.contains(&hit.entry.source_id))
}

/// Scores retrieval results against gold targets.
pub(crate) fn outcome_from_hits(
    query_id: &str,
    strategy: StrategyKind,
    k: usize,
    hits: &[SearchHit<'_>],
    targets: &BTreeSet<String>,
) -> EvalOutcome {
    let scores_of_top_k = hits.iter().map(|h| h.score).collect();
    let hits: Vec<OutcomeHit> = hits
        .iter()
        .map(|h| OutcomeHit {
            unit_id: h.entry.unit_id.clone(),
            gold: is_gold(h, targets),
        })
        .collect();
    let gold_rank = hits.iter().position(|h| h.gold).map(|p| p + 1);
    EvalOutcome {
        query_id: query_id.to_string(),
        strategy,
        k,
        hit_at_k: gold_rank.is_some_and(|r| r <= k),
        gold_rank,
        reciprocal_rank: gold_rank.map_or(0.0, |r| 1.0 / r as f64),
        scores_of_top_k,
        hits,
    }
}

/// Runs every strategy on every query. Output is query-major in input order.
pub fn run_eval(
    corpus: &Corpus,
    index: &Index,
    provider: &dyn EmbeddingProvider,
    queries: &[EvalQuery],
    strategies: &[StrategyKind],
    k: usize,
) -> Result<Vec<EvalOutcome>> {
    let retriever = Retriever::new(index, provider);
    let per_query: Vec<Vec<EvalOutcome>> = queries
        .par_iter()
        .map(|q| {
            let targets = gold_targets(q, corpus);
            strategies
                .iter()
                .map(|&s| {
                    let r = retriever.retrieve(s, &q.text, k).map_err(|source| {
                        EvalError::Retrieval {
                            query_id: q.query_id.clone(),
                            source,
                        }
                    })?;
                    Ok(outcome_from_hits(&q.query_id, s, k, &r.hits, &targets))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub a: StrategyKind,
    pub b: StrategyKind,
    pub a_wins: usize,
    pub b_wins: usize,
    pub ties: usize,
    pub applicable: usize,
    /// `(a_wins + ties) / applicable`.
    pub support_fraction: f64,
    pub per_query: Vec<(String, Verdict)>,
}

/// Ordering of two outcomes: a hit beats a miss, then the better gold rank
/// wins.
fn outcome_order(a: &EvalOutcome, b: &EvalOutcome) -> Ordering {
    let key = |o: &EvalOutcome| {
        (
            o.hit_at_k,
            std::cmp::Reverse(o.gold_rank.unwrap_or(usize::MAX)),
        )
    };
    key(a).cmp(&key(b))
}

/// Head-to-head comparison of two strategies over the queries both ran on.
pub fn compare_strategies(
    outcomes: &[EvalOutcome],
    a: StrategyKind,
    b: StrategyKind,
) -> Result<StrategyComparison> {
    let collect = |s: StrategyKind| -> BTreeMap<&str, &EvalOutcome> {
        outcomes
            .iter()
            .filter(|o| o.strategy == s)
            .map(|o| (o.query_id.as_str(), o))
            .collect()
    };
    let (oa, ob) = (collect(a), collect(b));
    if oa.is_empty() || ob.is_empty() {
        let missing = if oa.is_empty() { a } else { b };
        return Err(EvalError::MissingData(format!("no `{missing}` outcomes")));
    }
    let ka: BTreeSet<&str> = oa.keys().copied().collect();
    let kb: BTreeSet<&str> = ob.keys().copied().collect();
    let unmatched: Vec<String> = ka
        .symmetric_difference(&kb)
        .map(|s| s.to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(EvalError::Coverage { unmatched });
    }

    let mut cmp = StrategyComparison {
        a,
        b,
        a_wins: 0,
        b_wins: 0,
        ties: 0,
        applicable: oa.len(),
        support_fraction: 0.0,
        per_query: Vec::with_capacity(oa.len()),
    };
    for (qid, x) in &oa {
        let verdict = match outcome_order(x, ob[qid]) {
            Ordering::Greater => {
                cmp.a_wins += 1;
                Verdict::A
            }
            Ordering::Less => {
                cmp.b_wins += 1;
                Verdict::B
            }
            Ordering::Equal => {
                cmp.ties += 1;
                Verdict::Tie
            }
        };
        cmp.per_query.push((qid.to_string(), verdict));
    }
    cmp.support_fraction = (cmp.a_wins + cmp.ties) as f64 / cmp.applicable as f64;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_document, GlossaryEntry};

    fn corpus() -> Corpus {
        let mut c = Corpus::new();
        c.add_document(ingest_document("One sentence. Two sentence.".as_bytes(), "d").unwrap())
            .unwrap();
        c.glossary
            .push(GlossaryEntry::new("g0", "cell", "the basic unit"));
        c
    }

    fn outcome(q: &str, s: StrategyKind, rank: Option<usize>) -> EvalOutcome {
        EvalOutcome {
            query_id: q.into(),
            strategy: s,
            k: 3,
            hit_at_k: rank.is_some_and(|r| r <= 3),
            gold_rank: rank,
            reciprocal_rank: rank.map_or(0.0, |r| 1.0 / r as f64),
            scores_of_top_k: vec![],
            hits: vec![],
        }
    }

    #[test]
    fn empty_query_set() {
        assert!(parse_query_set("", &corpus()).unwrap().is_empty());
    }

    #[test]
    fn unresolved_gold_ids_are_all_listed() {
        let text = r#"{"query_id":"q1","text":"a","gold_unit_ids":["g0"],"hypothesis_ids":["H1"]}
{"query_id":"q2","text":"b","gold_unit_ids":["nope"],"hypothesis_ids":["H1"]}
{"query_id":"q3","text":"c","gold_unit_ids":["d/p0/s9","d/p0"],"hypothesis_ids":["H4"]}"#;
        match parse_query_set(text, &corpus()) {
            Err(EvalError::Validation { problems }) => {
                assert_eq!(problems.len(), 2);
                assert!(problems[0].contains("nope"));
                assert!(problems[1].contains("d/p0/s9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hypothesis_prerequisites_validated() {
        let text =
            r#"{"query_id":"q1","text":"a","gold_unit_ids":["d/p0"],"hypothesis_ids":["H3","H5"]}"#;
        match parse_query_set(text, &corpus()) {
            Err(EvalError::Validation { problems }) => assert_eq!(problems.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comparison_rules() {
        use StrategyKind::*;
        let o = vec![
            outcome("q1", GlossaryBest, Some(1)),
            outcome("q1", GlossaryCombined, Some(2)),
            outcome("q2", GlossaryBest, None),
            outcome("q2", GlossaryCombined, Some(3)),
            outcome("q3", GlossaryBest, None),
            outcome("q3", GlossaryCombined, None),
        ];
        let c = compare_strategies(&o, GlossaryBest, GlossaryCombined).unwrap();
        assert_eq!((c.a_wins, c.b_wins, c.ties, c.applicable), (1, 1, 1, 3));
        assert!((c.support_fraction - 2.0 / 3.0).abs() < 1e-12);
        let r = compare_strategies(&o, GlossaryCombined, GlossaryBest).unwrap();
        assert_eq!((r.a_wins, r.b_wins, r.ties), (c.b_wins, c.a_wins, c.ties));

        let same = compare_strategies(&o, GlossaryBest, GlossaryBest).unwrap();
        assert_eq!(same.ties, 3);

        let partial = vec![
            outcome("q1", GlossaryBest, Some(1)),
            outcome("q2", GlossaryCombined, None),
        ];
        assert!(matches!(
            compare_strategies(&partial, GlossaryBest, GlossaryCombined),
            Err(EvalError::Coverage { .. })
        ));
        assert!(matches!(
            compare_strategies(&partial, GlossaryBest, ParagraphDirect),
            Err(EvalError::MissingData(_))
        ));
    }

    #[test]
    fn hypothesis_id_parse() {
        assert_eq!("h3".parse::<HypothesisId>().unwrap(), HypothesisId::H3);
        assert_eq!(serde_json::to_string(&HypothesisId::H7).unwrap(), "\"H7\"");
        assert!("H8".parse::<HypothesisId>().is_err());
    }
}
