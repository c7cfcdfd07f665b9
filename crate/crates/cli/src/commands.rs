use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::Serialize;
use serde_json::json;

use ragkit_core::corpus::{ingest_document, ingest_glossary, Corpus};
use ragkit_core::diagnostics::{
    chunk_length_study, emit_distribution_data, sidecar_path, DiagnosticsConfig,
};
use ragkit_core::evaluation::{
    load_query_set, render_report, run_eval, run_suite, EvalOutcome, ReportFormat, SuiteConfig,
};
use ragkit_core::generation::{build_prompt, generate, permutation_experiment, write_records};
use ragkit_core::index::{units_from_corpus, Index, UnitKind};
use ragkit_core::retrieval::{Retriever, StrategyKind};

use crate::config::{check_index, Config};
use crate::{DiagnoseArgs, EvalArgs, IndexArgs, IngestArgs, PermuteArgs, QueryArgs};

pub struct Context {
    pub config: Config,
    pub json: bool,
}

impl Context {
    fn k(&self, flag: Option<usize>) -> Result<usize> {
        let k = flag.unwrap_or(self.config.defaults.k);
        if k == 0 {
            bail!("k must be positive");
        }
        Ok(k)
    }

    fn load_corpus(&self, flag: Option<&Path>) -> Result<Corpus> {
        let path = flag.unwrap_or(&self.config.paths.corpus);
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading corpus {}", path.display()))?;
        Corpus::from_json(&text).with_context(|| format!("parsing corpus {}", path.display()))
    }

    fn load_index(&self, flag: Option<&Path>) -> Result<Index> {
        let path = flag.unwrap_or(&self.config.paths.index);
        Index::load(path).with_context(|| format!("loading index {}", path.display()))
    }

    fn emit_json(&self, value: &impl Serialize) -> Result<()> {
        outln!("{}", serde_json::to_string_pretty(value)?);
        Ok(())
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn ingest(ctx: &Context, args: IngestArgs) -> Result<()> {
    if args.docs.is_empty() && args.glossary.is_none() {
        bail!("nothing to ingest: pass --doc and/or --glossary");
    }
    let mut corpus = Corpus::new();
    for path in &args.docs {
        let doc_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("no usable file name in {}", path.display()))?;
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let doc = ingest_document(file, doc_id)
            .with_context(|| format!("ingesting {}", path.display()))?;
        corpus.add_document(doc)?;
    }
    if let Some(path) = &args.glossary {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        corpus.glossary =
            ingest_glossary(file).with_context(|| format!("ingesting {}", path.display()))?;
    }

    let out = args.out.unwrap_or_else(|| ctx.config.paths.corpus.clone());
    ensure_parent(&out)?;
    std::fs::write(&out, corpus.to_json()?)
        .with_context(|| format!("writing {}", out.display()))?;

    let counts = json!({
        "out": out,
        "documents": corpus.documents.len(),
        "paragraphs": corpus.paragraphs().count(),
        "sentences": corpus.sentences().count(),
        "glossary_entries": corpus.glossary.len(),
    });
    if ctx.json {
        ctx.emit_json(&counts)
    } else {
        outln!(
            "wrote {}: {} documents, {} paragraphs, {} sentences, {} glossary entries",
            out.display(),
            counts["documents"],
            counts["paragraphs"],
            counts["sentences"],
            counts["glossary_entries"]
        );
        Ok(())
    }
}

pub fn index(ctx: &Context, args: IndexArgs) -> Result<()> {
    let corpus = ctx.load_corpus(args.corpus.as_deref())?;
    let embedder = ctx.config.embedder()?;
    let index = Index::build(units_from_corpus(&corpus), embedder.as_ref())?;
    let out = args.out.unwrap_or_else(|| ctx.config.paths.index.clone());
    ensure_parent(&out)?;
    index
        .save(&out)
        .with_context(|| format!("writing {}", out.display()))?;

    let by_kind: BTreeMap<&str, usize> = UnitKind::ALL
        .iter()
        .map(|&k| (k.as_str(), index.count_kind(k)))
        .collect();
    if ctx.json {
        ctx.emit_json(&json!({
            "out": out,
            "provider_id": index.provider_id(),
            "dim": index.dim(),
            "entries": index.len(),
            "by_kind": by_kind,
        }))
    } else {
        let kinds: Vec<String> = by_kind.iter().map(|(k, n)| format!("{n} {k}")).collect();
        outln!(
            "wrote {}: {} entries ({}), provider {} dim {}",
            out.display(),
            index.len(),
            kinds.join(", "),
            index.provider_id(),
            index.dim()
        );
        Ok(())
    }
}

fn snippet(text: &str) -> String {
    const MAX: usize = 96;
    match text.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &text[..i]),
        None => text.to_string(),
    }
}

pub fn query(ctx: &Context, args: QueryArgs) -> Result<()> {
    let index = ctx.load_index(args.index.as_deref())?;
    let embedder = ctx.config.embedder()?;
    check_index(&index, embedder.as_ref())?;
    let k = ctx.k(args.k)?;

    let result =
        Retriever::new(&index, embedder.as_ref()).retrieve(args.strategy, &args.text, k)?;
    let prompt = if args.show_prompt || args.generate {
        Some(build_prompt(&result.context_texts, &args.text)?)
    } else {
        None
    };
    let record = match (&prompt, args.generate) {
        (Some(p), true) => {
            let llm = ctx.config.chat()?;
            Some(generate(llm.as_ref(), p.clone(), result.hit_ids())?)
        }
        _ => None,
    };

    if ctx.json {
        return ctx.emit_json(&json!({
            "strategy": result.strategy,
            "query": args.text,
            "k": k,
            "hits": result.hits,
            "contexts": result.context_texts,
            "prompt": if args.show_prompt { prompt.as_ref() } else { None },
            "response": record.as_ref().map(|r| &r.response),
        }));
    }
    outln!("{} hits for `{}` (k = {k})", result.strategy, args.text);
    for h in &result.hits {
        outln!(
            "{:>3}  {:.6}  {}  [{}]",
            h.rank,
            h.score,
            h.entry.unit_id,
            h.entry.kind
        );
        outln!("       {}", snippet(&h.entry.text));
    }
    if let (true, Some(p)) = (args.show_prompt, &prompt) {
        outln!("--- system prompt ---");
        outln!("{}", p.system);
        outln!("--- user prompt ---");
        outln!("{}", p.user);
    }
    if let Some(r) = &record {
        outln!("--- response ({}) ---", r.provider_meta.model_id);
        outln!("{}", r.response);
    }
    Ok(())
}

pub fn diagnose(ctx: &Context, args: DiagnoseArgs) -> Result<()> {
    let index = ctx.load_index(args.index.as_deref())?;
    let d = &ctx.config.defaults;
    let config = DiagnosticsConfig {
        threshold_words: args.threshold_words.unwrap_or(d.threshold_words),
        grid_size: args.grid_size.unwrap_or(d.grid_size),
        valley_ratio: args.valley_ratio.unwrap_or(d.valley_ratio),
        ..DiagnosticsConfig::default()
    };
    let report = chunk_length_study(&index, &args.kinds, config)?;
    let out = args
        .out
        .unwrap_or_else(|| ctx.config.paths.reports.join("chunk_similarity.csv"));
    ensure_parent(&out)?;
    emit_distribution_data(&report, &out)?;

    if ctx.json {
        return ctx.emit_json(&json!({
            "csv": out,
            "summary": sidecar_path(&out),
            "report": report,
        }));
    }
    outln!(
        "{} units, {} pairs, long = more than {} words",
        report.n_units,
        report.n_pairs,
        config.threshold_words
    );
    for b in &report.buckets {
        let verdict = match (&b.bimodality, b.point_mass) {
            (Some(m), _) => {
                let modes: Vec<String> = m.modes.iter().map(|(x, _)| format!("{x:.3}")).collect();
                format!(
                    "{} (modes at {})",
                    if m.is_bimodal { "bimodal" } else { "unimodal" },
                    modes.join(", ")
                )
            }
            (None, Some(v)) => format!("point mass at {v:.6}"),
            (None, None) => "too few pairs".to_string(),
        };
        let mean = b.mean.map_or("-".to_string(), |m| format!("{m:.4}"));
        let bw = b.bandwidth.map_or("-".to_string(), |h| format!("{h:.4}"));
        outln!(
            "{:<11} n={:<8} mean={mean:<8} bandwidth={bw:<8} {verdict}",
            b.bucket.as_str(),
            b.n_samples
        );
    }
    outln!(
        "wrote {} and {}",
        out.display(),
        sidecar_path(&out).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct StrategyMetrics {
    strategy: StrategyKind,
    queries: usize,
    hit_rate: f64,
    mrr: f64,
}

fn metrics(outcomes: &[EvalOutcome], strategies: &[StrategyKind]) -> Vec<StrategyMetrics> {
    strategies
        .iter()
        .map(|&s| {
            let rows: Vec<&EvalOutcome> = outcomes.iter().filter(|o| o.strategy == s).collect();
            let n = rows.len().max(1) as f64;
            StrategyMetrics {
                strategy: s,
                queries: rows.len(),
                hit_rate: rows.iter().filter(|o| o.hit_at_k).count() as f64 / n,
                mrr: rows.iter().map(|o| o.reciprocal_rank).sum::<f64>() / n,
            }
        })
        .collect()
}

fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut f = std::io::BufWriter::new(
        File::create(path).with_context(|| format!("writing {}", path.display()))?,
    );
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn default_report_path(reports: &Path, format: ReportFormat) -> PathBuf {
    let ext = match format {
        ReportFormat::Markdown => "md",
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    reports.join(format!("report.{ext}"))
}

pub fn eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let corpus = ctx.load_corpus(args.corpus.as_deref())?;
    let index = ctx.load_index(args.index.as_deref())?;
    let embedder = ctx.config.embedder()?;
    check_index(&index, embedder.as_ref())?;
    let k = ctx.k(args.k)?;
    let queries = load_query_set(&args.queries, &corpus)?;
    if queries.is_empty() {
        bail!("query set {} is empty", args.queries.display());
    }
    let llm = ctx.config.chat()?;

    let suite = SuiteConfig {
        k,
        ..SuiteConfig::default()
    };
    let result = run_suite(
        &corpus,
        &index,
        embedder.as_ref(),
        llm.as_ref(),
        &queries,
        &suite,
    )?;
    let strategies = if args.strategies.is_empty() {
        StrategyKind::ALL.to_vec()
    } else {
        args.strategies.clone()
    };
    let outcomes = run_eval(&corpus, &index, embedder.as_ref(), &queries, &strategies, k)?;
    let table = metrics(&outcomes, &strategies);

    let out = args
        .out
        .unwrap_or_else(|| default_report_path(&ctx.config.paths.reports, args.report_format));
    ensure_parent(&out)?;
    let rendered = render_report(&result.reports, args.report_format)?;
    std::fs::write(&out, &rendered).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = &args.outcomes {
        write_jsonl(&outcomes, path)?;
    }
    if let Some(path) = &args.records {
        ensure_parent(path)?;
        write_records(&result.generations, path)?;
    }

    if ctx.json {
        return ctx.emit_json(&json!({
            "report": out,
            "format": args.report_format,
            "k": k,
            "queries": queries.len(),
            "metrics": table,
            "reports": result.reports,
        }));
    }
    outln!("{} queries, k = {k}", queries.len());
    outln!("{:<22} {:>8} {:>8}", "strategy", "hit@k", "mrr");
    for m in &table {
        outln!(
            "{:<22} {:>8.3} {:>8.3}",
            m.strategy.as_str(),
            m.hit_rate,
            m.mrr
        );
    }
    for r in &result.reports {
        outln!("{}  {}  {}", r.hypothesis_id, r.support(), r.observation);
    }
    outln!("wrote {}", out.display());
    Ok(())
}

pub fn permute(ctx: &Context, args: PermuteArgs) -> Result<()> {
    let index = ctx.load_index(args.index.as_deref())?;
    let embedder = ctx.config.embedder()?;
    check_index(&index, embedder.as_ref())?;
    let k = ctx.k(args.k)?;
    let llm = ctx.config.chat()?;

    let retrieved =
        Retriever::new(&index, embedder.as_ref()).retrieve(args.strategy, &args.text, k)?;
    let report = permutation_experiment(
        llm.as_ref(),
        embedder.as_ref(),
        &retrieved.context_texts,
        &args.text,
        args.max_permutations,
        args.max_in_flight,
    )?;
    let summary = if report.order_effect() {
        "order effect"
    } else {
        "no order effect"
    };

    if ctx.json {
        return ctx.emit_json(&json!({
            "contexts": retrieved.hit_ids(),
            "summary": summary,
            "min_similarity": report.min_similarity(),
            "exact_matches": report.exact_matches(),
            "report": report,
        }));
    }
    outln!("contexts: {}", retrieved.hit_ids().join(", "));
    for run in &report.runs {
        outln!(
            "{:?}  similarity {:.6}  {}",
            run.order,
            run.similarity_to_first,
            if run.exact_match { "exact" } else { "differs" }
        );
    }
    outln!(
        "{summary}: {} orderings, min similarity {:.6}, {} exact matches",
        report.runs.len(),
        report.min_similarity(),
        report.exact_matches()
    );
    Ok(())
}
