#![allow(dead_code)]

pub mod synthetic;

use std::fs::File;
use std::path::{Path, PathBuf};

use ragkit_core::corpus::{ingest_document, ingest_glossary, Corpus};
use ragkit_core::embedding::ReferenceEmbedder;
use ragkit_core::evaluation::{load_query_set, EvalQuery};
use ragkit_core::generation::{CannedStub, EchoMode, EchoStub};
use ragkit_core::index::{units_from_corpus, Index};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_corpus() -> Corpus {
    let mut corpus = Corpus::new();
    corpus
        .add_document(ingest_document(File::open(fixture("wlan.txt")).unwrap(), "wlan").unwrap())
        .unwrap();
    corpus.glossary = ingest_glossary(File::open(fixture("glossary.jsonl")).unwrap()).unwrap();
    corpus
}

pub fn fixture_index(corpus: &Corpus, embedder: &ReferenceEmbedder) -> Index {
    Index::build(units_from_corpus(corpus), embedder).unwrap()
}

pub fn fixture_queries(corpus: &Corpus) -> Vec<EvalQuery> {
    load_query_set(&fixture("queries.jsonl"), corpus).unwrap()
}

pub fn fixture_llm() -> CannedStub {
    CannedStub::from_jsonl(
        &fixture("canned_responses.jsonl"),
        Some(EchoStub::new(EchoMode::BestOverlap)),
    )
    .unwrap()
}

/// Row of the oracle's frozen outcome table.
pub struct ExpectedOutcome {
    pub query_id: String,
    pub strategy: String,
    pub gold_rank: Option<usize>,
    pub hit_ids: Vec<String>,
    pub scores: Vec<f64>,
}

pub fn expected_outcomes() -> Vec<ExpectedOutcome> {
    std::fs::read_to_string(fixture("expected_outcomes.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            ExpectedOutcome {
                query_id: f[0].into(),
                strategy: f[1].into(),
                gold_rank: (!f[2].is_empty()).then(|| f[2].parse().unwrap()),
                hit_ids: f[3].split(';').map(String::from).collect(),
                scores: f[4].split(';').map(|s| s.parse().unwrap()).collect(),
            }
        })
        .collect()
}
