//! Per-hypothesis tallies and their markdown, CSV and JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{compare_strategies, EvalError, EvalOutcome, EvalQuery, HypothesisId, Result, Verdict};
use crate::corpus::{Corpus, GlossaryEntry};
use crate::diagnostics::ProbeResult;
use crate::generation::{acronym_expansion_flag, GenerationRecord, PermutationReport};
use crate::retrieval::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query_id: String,
    /// `None` for informational rows that carry no verdict.
    pub supported: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub hypothesis_id: HypothesisId,
    pub hypothesis: String,
    pub observation: String,
    /// `None` when the hypothesis has no supported/total tally.
    pub supported_count: Option<usize>,
    pub applicable_count: usize,
    pub k: usize,
    pub rows: Vec<ReportRow>,
}

impl HypothesisReport {
    /// "N of M queries", or "NA" without a tally.
    pub fn support(&self) -> String {
        match self.supported_count {
            Some(n) => format!("{n} of {} queries", self.applicable_count),
            None => "NA".to_string(),
        }
    }
}

/// Everything a report may draw on. Unused parts can be left empty.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub corpus: &'a Corpus,
    pub queries: &'a [EvalQuery],
    pub outcomes: &'a [EvalOutcome],
    pub generations: &'a [GenerationRecord],
    /// Keyword probe results keyed by query id.
    pub probes: &'a [(String, ProbeResult)],
    /// Permutation experiments keyed by query id.
    pub permutations: &'a [(String, PermutationReport)],
    pub k: usize,
}

impl<'a> ReportInputs<'a> {
    /// Queries tagged with `h`, sorted by query id.
    fn tagged(&self, h: HypothesisId) -> Vec<&'a EvalQuery> {
        let mut qs: Vec<&EvalQuery> = self.queries.iter().filter(|q| q.has(h)).collect();
        qs.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        qs
    }

    fn outcome(&self, query_id: &str, strategy: StrategyKind) -> Result<&'a EvalOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.query_id == query_id && o.strategy == strategy)
            .ok_or_else(|| {
                EvalError::MissingData(format!("{strategy} outcome for query `{query_id}`"))
            })
    }

    fn generation(
        &self,
        query_id: &str,
        strategy: Option<StrategyKind>,
    ) -> Result<&'a GenerationRecord> {
        self.generations
            .iter()
            .find(|g| {
                g.query_id.as_deref() == Some(query_id)
                    && (strategy.is_none() || g.strategy == strategy)
            })
            .ok_or_else(|| {
                let what = strategy.map_or("any".to_string(), |s| s.to_string());
                EvalError::MissingData(format!("{what} generation for query `{query_id}`"))
            })
    }
}

fn label(h: HypothesisId) -> &'static str {
    match h {
        HypothesisId::H1 => {
            "Separate term and definition retrieval versus combined glossary entries"
        }
        HypothesisId::H2 => "Similarity scores as a cross-mode selection signal",
        HypothesisId::H3 => "Keyword position in the gold sentence versus retrieval success",
        HypothesisId::H4 => "Sentence-level versus paragraph-level retrieval",
        HypothesisId::H5 => "Generation from sentence-level versus paragraph-level contexts",
        HypothesisId::H6 => "Acronym questions answered by expansion alone",
        HypothesisId::H7 => "Answer sensitivity to context order",
    }
}

/// Builds the report for one hypothesis over its tagged queries.
pub fn hypothesis_report(
    inputs: &ReportInputs<'_>,
    hypothesis: HypothesisId,
) -> Result<HypothesisReport> {
    let queries = inputs.tagged(hypothesis);
    let mut report = HypothesisReport {
        hypothesis_id: hypothesis,
        hypothesis: label(hypothesis).to_string(),
        observation: String::new(),
        supported_count: None,
        applicable_count: queries.len(),
        k: inputs.k,
        rows: Vec::new(),
    };
    match hypothesis {
        HypothesisId::H1 => retrieval_comparison(
            inputs,
            &queries,
            StrategyKind::GlossaryBest,
            StrategyKind::GlossaryCombined,
            &mut report,
        )?,
        HypothesisId::H2 => score_comparability(inputs, &queries, &mut report)?,
        HypothesisId::H3 => keyword_positions(inputs, &queries, &mut report)?,
        HypothesisId::H4 => retrieval_comparison(
            inputs,
            &queries,
            StrategyKind::SentenceToParagraph,
            StrategyKind::ParagraphDirect,
            &mut report,
        )?,
        HypothesisId::H5 => generation_comparison(inputs, &queries, &mut report)?,
        HypothesisId::H6 => acronym_tally(inputs, &queries, &mut report)?,
        HypothesisId::H7 => order_sensitivity(inputs, &queries, &mut report)?,
    }
    Ok(report)
}

fn retrieval_comparison(
    inputs: &ReportInputs<'_>,
    queries: &[&EvalQuery],
    a: StrategyKind,
    b: StrategyKind,
    report: &mut HypothesisReport,
) -> Result<()> {
    let mut subset = Vec::with_capacity(queries.len() * 2);
    for q in queries {
        subset.push(inputs.outcome(&q.query_id, a)?.clone());
        subset.push(inputs.outcome(&q.query_id, b)?.clone());
    }
    if queries.is_empty() {
        return Err(EvalError::MissingData(format!(
            "no queries tagged {}",
            report.hypothesis_id
        )));
    }
    let cmp = compare_strategies(&subset, a, b)?;
    let by_id: BTreeMap<&str, (&EvalOutcome, &EvalOutcome)> = queries
        .iter()
        .map(|q| {
            let find = |s| {
                subset
                    .iter()
                    .find(|o| o.query_id == q.query_id && o.strategy == s)
                    .unwrap()
            };
            (q.query_id.as_str(), (find(a), find(b)))
        })
        .collect();
    let rank = |o: &EvalOutcome| o.gold_rank.map_or("-".to_string(), |r| r.to_string());
    for (qid, verdict) in &cmp.per_query {
        let (oa, ob) = by_id[qid.as_str()];
        report.rows.push(ReportRow {
            query_id: qid.clone(),
            supported: Some(*verdict != Verdict::B),
            detail: format!("{a} rank {}, {b} rank {}, {verdict:?}", rank(oa), rank(ob))
                .to_lowercase(),
        });
    }
    report.supported_count = Some(cmp.a_wins + cmp.ties);
    report.observation = format!(
        "{a} won {}, tied {}, lost {} against {b} (hit@{}, then gold rank)",
        cmp.a_wins, cmp.ties, cmp.b_wins, inputs.k
    );
    Ok(())
}

const SCORE_MODES: [StrategyKind; 3] = [
    StrategyKind::GlossaryTerm,
    StrategyKind::GlossaryDefinition,
    StrategyKind::GlossaryCombined,
];

fn score_comparability(
    inputs: &ReportInputs<'_>,
    queries: &[&EvalQuery],
    report: &mut HypothesisReport,
) -> Result<()> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut flagged = 0;
    for q in queries {
        let outcomes = SCORE_MODES
            .iter()
            .map(|&s| inputs.outcome(&q.query_id, s))
            .collect::<Result<Vec<_>>>()?;
        for s in outcomes.iter().flat_map(|o| &o.scores_of_top_k) {
            lo = lo.min(*s);
            hi = hi.max(*s);
        }
        let best_gold = outcomes
            .iter()
            .filter_map(|o| o.gold_score())
            .fold(f64::NEG_INFINITY, f64::max);
        let best_other = outcomes
            .iter()
            .filter_map(|o| o.top_non_gold_score())
            .fold(f64::NEG_INFINITY, f64::max);
        let gold_found = best_gold > f64::NEG_INFINITY;
        let inverted = gold_found && best_other > best_gold;
        flagged += usize::from(inverted);
        let parts: Vec<String> = outcomes
            .iter()
            .map(|o| {
                let gold = o
                    .gold_score()
                    .map_or("-".to_string(), |s| format!("{s:.3}"));
                let other = o
                    .top_non_gold_score()
                    .map_or("-".to_string(), |s| format!("{s:.3}"));
                format!("{}: gold {gold} other {other}", o.strategy)
            })
            .collect();
        report.rows.push(ReportRow {
            query_id: q.query_id.clone(),
            supported: Some(inverted),
            detail: parts.join("; "),
        });
    }
    report.supported_count = Some(flagged);
    report.observation = if lo <= hi {
        format!(
            "top-{} scores span {lo:.3} to {hi:.3} across glossary modes; a non-gold unit outscored the best gold score in {flagged} queries",
            inputs.k
        )
    } else {
        "no scores retrieved".to_string()
    };
    Ok(())
}

fn keyword_positions(
    inputs: &ReportInputs<'_>,
    queries: &[&EvalQuery],
    report: &mut HypothesisReport,
) -> Result<()> {
    let (mut early, mut early_hit, mut late, mut late_miss) = (0, 0, 0, 0);
    for q in queries {
        let probe = inputs
            .probes
            .iter()
            .find(|(id, _)| *id == q.query_id)
            .map(|(_, p)| p)
            .ok_or_else(|| {
                EvalError::MissingData(format!("keyword probe for query `{}`", q.query_id))
            })?;
        let is_early = probe.normalized_position < 0.5;
        if is_early {
            early += 1;
            early_hit += usize::from(probe.hit);
        } else {
            late += 1;
            late_miss += usize::from(!probe.hit);
        }
        let supported = probe.hit == is_early;
        report.rows.push(ReportRow {
            query_id: q.query_id.clone(),
            supported: Some(supported),
            detail: format!(
                "`{}` at position {:.2} in {}, {}",
                probe.keyword,
                probe.normalized_position,
                probe.gold_sentence_id,
                probe
                    .gold_rank
                    .map_or("missed".to_string(), |r| format!("rank {r}"))
            ),
        });
    }
    report.supported_count = Some(early_hit + late_miss);
    report.observation = format!(
        "early keywords retrieved their sentence in {early_hit} of {early}; late keywords missed in {late_miss} of {late}; one combined tally"
    );
    Ok(())
}

/// Case-folded, whitespace-normalized containment of the reference answer.
pub(crate) fn answer_contained(response: &str, answer: &str) -> bool {
    let norm = |s: &str| {
        s.split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
    };
    let answer = norm(answer);
    !answer.is_empty() && norm(response).contains(&answer)
}

fn generation_comparison(
    inputs: &ReportInputs<'_>,
    queries: &[&EvalQuery],
    report: &mut HypothesisReport,
) -> Result<()> {
    let (a, b) = (
        StrategyKind::SentenceToParagraph,
        StrategyKind::ParagraphDirect,
    );
    let (mut a_ok, mut b_ok, mut supported) = (0, 0, 0);
    for q in queries {
        let answer = q.answer.as_deref().ok_or_else(|| {
            EvalError::MissingData(format!("reference answer for query `{}`", q.query_id))
        })?;
        let ha = answer_contained(&inputs.generation(&q.query_id, Some(a))?.response, answer);
        let hb = answer_contained(&inputs.generation(&q.query_id, Some(b))?.response, answer);
        a_ok += usize::from(ha);
        b_ok += usize::from(hb);
        let ok = ha || !hb;
        supported += usize::from(ok);
        report.rows.push(ReportRow {
            query_id: q.query_id.clone(),
            supported: Some(ok),
            detail: format!("{a} {}, {b} {}", mark(ha), mark(hb)),
        });
    }
    report.supported_count = Some(supported);
    report.observation = format!(
        "answer containment (offline proxy for correctness): {a} {a_ok} of {n}, {b} {b_ok} of {n}",
        n = queries.len()
    );
    Ok(())
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "correct"
    } else {
        "incorrect"
    }
}

fn gold_entry<'c>(corpus: &'c Corpus, q: &EvalQuery) -> Option<&'c GlossaryEntry> {
    q.gold_unit_ids
        .iter()
        .find_map(|g| corpus.glossary_entry(g))
}

fn acronym_tally(
    inputs: &ReportInputs<'_>,
    queries: &[&EvalQuery],
    report: &mut HypothesisReport,
) -> Result<()> {
    let mut flagged = 0;
    for q in queries {
        let entry = gold_entry(inputs.corpus, q).ok_or_else(|| {
            EvalError::MissingData(format!("gold glossary entry for query `{}`", q.query_id))
        })?;
        let record = inputs
            .generation(&q.query_id, Some(StrategyKind::GlossaryBest))
            .or_else(|_| inputs.generation(&q.query_id, None))?;
        let flag = acronym_expansion_flag(&record.response, entry);
        flagged += usize::from(flag);
        report.rows.push(ReportRow {
            query_id: q.query_id.clone(),
            supported: Some(flag),
            detail: format!(
                "{} `{}`: {}",
                entry.entry_id,
                entry.term,
                if flag {
                    "expansion only"
                } else {
                    "adds definition content"
                }
            ),
        });
    }
    report.supported_count = Some(flagged);
    report.observation = format!("{flagged} responses restated the abbreviation and its expansion without further definition");
    Ok(())
}

fn order_sensitivity(
    inputs: &ReportInputs<'_>,
    queries: &[&EvalQuery],
    report: &mut HypothesisReport,
) -> Result<()> {
    let (mut min_sim, mut runs, mut exact, mut affected) = (1.0f64, 0, 0, 0);
    for q in queries {
        let perm = inputs
            .permutations
            .iter()
            .find(|(id, _)| *id == q.query_id)
            .map(|(_, p)| p)
            .ok_or_else(|| {
                EvalError::MissingData(format!("permutation run for query `{}`", q.query_id))
            })?;
        min_sim = min_sim.min(perm.min_similarity());
        runs += perm.runs.len();
        exact += perm.exact_matches();
        affected += usize::from(perm.order_effect());
        report.rows.push(ReportRow {
            query_id: q.query_id.clone(),
            supported: None,
            detail: format!(
                "{} orderings, min similarity {:.4}, {} exact matches",
                perm.runs.len(),
                perm.min_similarity(),
                perm.exact_matches()
            ),
        });
    }
    report.observation = if affected == 0 {
        format!("no order effect: min response similarity {min_sim:.4} over {runs} orderings, {exact} exact matches")
    } else {
        format!(
            "order effect in {affected} queries: min response similarity {min_sim:.4} over {runs} orderings, {exact} exact matches"
        )
    };
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(format!(
                "unknown report format `{s}` (expected markdown, csv or json)"
            )),
        }
    }
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_report(reports: &[HypothesisReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(EvalError::MissingData("no reports to emit".into()));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Hyp | Hypothesis | Observation | Support (Samples) |\n");
            out.push_str("| --- | --- | --- | --- |\n");
            for r in reports {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    r.hypothesis_id,
                    md_cell(&r.hypothesis),
                    md_cell(&r.observation),
                    r.support()
                );
            }
        }
        ReportFormat::Csv => {
            out.push_str(
                "hypothesis_id,hypothesis,observation,supported_count,applicable_count,support,k\n",
            );
            for r in reports {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.hypothesis_id,
                    csv_field(&r.hypothesis),
                    csv_field(&r.observation),
                    r.supported_count.map_or(String::new(), |n| n.to_string()),
                    r.applicable_count,
                    csv_field(&r.support()),
                    r.k
                );
            }
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(reports)?;
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn emit_report(reports: &[HypothesisReport], path: &Path, format: ReportFormat) -> Result<()> {
    let text = render_report(reports, format)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HypothesisReport {
        HypothesisReport {
            hypothesis_id: HypothesisId::H1,
            hypothesis: "a | b".into(),
            observation: "x, \"y\"".into(),
            supported_count: Some(22),
            applicable_count: 30,
            k: 3,
            rows: vec![ReportRow {
                query_id: "q1".into(),
                supported: Some(true),
                detail: "d".into(),
            }],
        }
    }

    #[test]
    fn markdown_single_row() {
        let md = render_report(&[sample()], ReportFormat::Markdown).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "| Hyp | Hypothesis | Observation | Support (Samples) |"
        );
        assert!(lines[2].ends_with("| 22 of 30 queries |"));
        assert!(lines[2].contains("a \\| b"));
    }

    #[test]
    fn json_round_trip() {
        let mut na = sample();
        na.hypothesis_id = HypothesisId::H7;
        na.supported_count = None;
        let reports = vec![sample(), na];
        let json = render_report(&reports, ReportFormat::Json).unwrap();
        let back: Vec<HypothesisReport> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, reports);
        assert_eq!(back[1].support(), "NA");
    }

    #[test]
    fn csv_quoting() {
        let csv = render_report(&[sample()], ReportFormat::Csv).unwrap();
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "H1,a | b,\"x, \"\"y\"\"\",22,30,22 of 30 queries,3"
        );
    }

    #[test]
    fn empty_reports_rejected() {
        assert!(matches!(
            render_report(&[], ReportFormat::Json),
            Err(EvalError::MissingData(_))
        ));
    }

    #[test]
    fn containment_normalizes() {
        assert!(answer_contained(
            "The  Beacon\nInterval.",
            "beacon interval"
        ));
        assert!(!answer_contained("beacon", "beacon interval"));
        assert!(!answer_contained("anything", "  "));
    }
}
