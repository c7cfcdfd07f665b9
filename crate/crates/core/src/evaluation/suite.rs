//! One-call driver that produces every run a query set's hypotheses need.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    hypothesis_report, run_eval, EvalError, EvalOutcome, EvalQuery, HypothesisId, HypothesisReport,
    ReportInputs, Result,
};
use crate::corpus::Corpus;
use crate::diagnostics::{keyword_position_profile, KeywordProbe, ProbeResult};
use crate::embedding::EmbeddingProvider;
use crate::generation::{
    build_prompt, generate, permutation_experiment, ChatProvider, GenerationRecord,
    PermutationReport,
};
use crate::index::Index;
use crate::retrieval::{Retriever, StrategyKind, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub k: usize,
    pub max_permutations: usize,
    pub max_in_flight: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_permutations: 120,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub outcomes: Vec<EvalOutcome>,
    pub generations: Vec<GenerationRecord>,
    pub probes: Vec<(String, ProbeResult)>,
    pub permutations: Vec<(String, PermutationReport)>,
    pub reports: Vec<HypothesisReport>,
}

fn strategies_for(h: HypothesisId) -> &'static [StrategyKind] {
    use StrategyKind::*;
    match h {
        HypothesisId::H1 => &[GlossaryBest, GlossaryCombined],
        HypothesisId::H2 => &[GlossaryTerm, GlossaryDefinition, GlossaryCombined],
        HypothesisId::H4 => &[SentenceToParagraph, ParagraphDirect],
        _ => &[],
    }
}

fn generation_strategies(q: &EvalQuery) -> Vec<StrategyKind> {
    let mut s = Vec::new();
    if q.has(HypothesisId::H5) {
        s.extend([
            StrategyKind::SentenceToParagraph,
            StrategyKind::ParagraphDirect,
        ]);
    }
    if q.has(HypothesisId::H6) {
        s.push(StrategyKind::GlossaryBest);
    }
    s
}

/// Context source for the permutation run: glossary retrieval for queries
/// whose gold is a glossary entry, sentence-to-paragraph otherwise.
fn permutation_strategy(corpus: &Corpus, q: &EvalQuery) -> StrategyKind {
    if q.gold_unit_ids
        .iter()
        .any(|g| corpus.glossary_entry(g).is_some())
    {
        StrategyKind::GlossaryBest
    } else {
        StrategyKind::SentenceToParagraph
    }
}

/// Runs retrieval, generation, keyword probes and permutation experiments as
/// required by the hypotheses present in `queries`, then builds one report
/// per hypothesis in `H1..H7` order.
pub fn run_suite(
    corpus: &Corpus,
    index: &Index,
    embedder: &dyn EmbeddingProvider,
    llm: &dyn ChatProvider,
    queries: &[EvalQuery],
    config: &SuiteConfig,
) -> Result<SuiteResult> {
    let k = config.k;
    let present: BTreeSet<HypothesisId> = queries
        .iter()
        .flat_map(|q| q.hypothesis_ids.iter().copied())
        .collect();
    let needed: BTreeSet<StrategyKind> = present
        .iter()
        .flat_map(|&h| strategies_for(h).iter().copied())
        .collect();
    let strategies: Vec<StrategyKind> = StrategyKind::ALL
        .into_iter()
        .filter(|s| needed.contains(s))
        .collect();
    let outcomes = run_eval(corpus, index, embedder, queries, &strategies, k)?;

    let retriever = Retriever::new(index, embedder);
    let generations: Vec<GenerationRecord> = queries
        .par_iter()
        .map(|q| {
            generation_strategies(q)
                .into_iter()
                .map(|s| {
                    let r = retriever.retrieve(s, &q.text, k).map_err(|source| {
                        EvalError::Retrieval {
                            query_id: q.query_id.clone(),
                            source,
                        }
                    })?;
                    let gen_err = |source| EvalError::Generation {
                        query_id: q.query_id.clone(),
                        source,
                    };
                    let prompt = build_prompt(&r.context_texts, &q.text).map_err(gen_err)?;
                    let mut rec = generate(llm, prompt, r.hit_ids()).map_err(gen_err)?;
                    rec.query_id = Some(q.query_id.clone());
                    rec.strategy = Some(s);
                    Ok(rec)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let probes = queries
        .iter()
        .filter(|q| q.has(HypothesisId::H3))
        .map(|q| {
            let gold = q
                .gold_unit_ids
                .iter()
                .find(|g| corpus.sentence(g).is_some())
                .ok_or_else(|| {
                    EvalError::MissingData(format!("gold sentence for query `{}`", q.query_id))
                })?;
            let probe = KeywordProbe {
                keyword: q.keyword.clone().unwrap_or_default(),
                gold_sentence_id: gold.clone(),
            };
            let mut res =
                keyword_position_profile(index, embedder, &[probe], k).map_err(|source| {
                    EvalError::Diagnostics {
                        query_id: q.query_id.clone(),
                        source,
                    }
                })?;
            Ok((q.query_id.clone(), res.remove(0)))
        })
        .collect::<Result<Vec<_>>>()?;

    let permutations = queries
        .iter()
        .filter(|q| q.has(HypothesisId::H7))
        .map(|q| {
            let s = permutation_strategy(corpus, q);
            let r = retriever
                .retrieve(s, &q.text, k)
                .map_err(|source| EvalError::Retrieval {
                    query_id: q.query_id.clone(),
                    source,
                })?;
            let report = permutation_experiment(
                llm,
                embedder,
                &r.context_texts,
                &q.text,
                config.max_permutations,
                config.max_in_flight,
            )
            .map_err(|source| EvalError::Generation {
                query_id: q.query_id.clone(),
                source,
            })?;
            Ok((q.query_id.clone(), report))
        })
        .collect::<Result<Vec<_>>>()?;

    let inputs = ReportInputs {
        corpus,
        queries,
        outcomes: &outcomes,
        generations: &generations,
        probes: &probes,
        permutations: &permutations,
        k,
    };
    let reports = present
        .iter()
        .map(|&h| hypothesis_report(&inputs, h))
        .collect::<Result<Vec<_>>>()?;

    Ok(SuiteResult {
        outcomes,
        generations,
        probes,
        permutations,
        reports,
    })
}
