//! Random and scaled embedding providers plus brute-force search oracles.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use ragkit_core::embedding::{EmbedError, EmbeddingProvider, EmbeddingVector, ReferenceEmbedder};
use ragkit_core::index::{Index, IndexUnit, UnitKind};

/// Looks texts up in a fixed table of raw vectors.
pub struct TableProvider {
    pub dim: usize,
    pub table: HashMap<String, Vec<f64>>,
}

impl EmbeddingProvider for TableProvider {
    fn provider_id(&self) -> &str {
        "table"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let raw = self.table.get(text).ok_or(EmbedError::EmptyInput)?;
        EmbeddingVector::from_raw(raw, "table")
    }
}

/// Reference embedder whose raw vectors are multiplied by `factor` before
/// normalization.
pub struct ScaledProvider {
    pub inner: ReferenceEmbedder,
    pub factor: f64,
}

impl EmbeddingProvider for ScaledProvider {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let raw: Vec<f64> = self
            .inner
            .raw(text)
            .iter()
            .map(|v| v * self.factor)
            .collect();
        EmbeddingVector::from_raw(&raw, self.inner.provider_id())
    }
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

pub fn unit(unit_id: &str, kind: UnitKind, parent: Option<&str>) -> IndexUnit {
    IndexUnit {
        unit_id: unit_id.to_string(),
        kind,
        parent_para_id: parent.map(String::from),
        source_id: "synthetic".into(),
        text: unit_id.to_string(),
        word_count: 1,
    }
}

/// Flat corpus of `n` units with random vectors, a few of them exact copies
/// of earlier ones so that tied scores occur. Unit texts are their ids.
pub fn random_flat(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<IndexUnit>, TableProvider) {
    const KINDS: [UnitKind; 4] = [
        UnitKind::Paragraph,
        UnitKind::Term,
        UnitKind::Definition,
        UnitKind::Combined,
    ];
    let mut table = HashMap::new();
    let mut units = Vec::with_capacity(n);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("u{i:05}");
        let v = if i > 0 && rng.random_bool(0.1) {
            vectors[rng.random_range(0..i)].clone()
        } else {
            random_vector(rng, dim)
        };
        vectors.push(v.clone());
        table.insert(id.clone(), v);
        units.push(unit(&id, KINDS[rng.random_range(0..KINDS.len())], None));
    }
    (units, TableProvider { dim, table })
}

/// Paragraphs with one to six sentences each, random vectors throughout.
pub fn random_nested(
    rng: &mut ChaCha8Rng,
    paragraphs: usize,
    dim: usize,
) -> (Vec<IndexUnit>, TableProvider) {
    let mut table = HashMap::new();
    let mut units = Vec::new();
    let mut sentence_vectors: Vec<Vec<f64>> = Vec::new();
    for p in 0..paragraphs {
        let pid = format!("p{p:04}");
        table.insert(pid.clone(), random_vector(rng, dim));
        units.push(unit(&pid, UnitKind::Paragraph, None));
        for s in 0..rng.random_range(1..=6) {
            let sid = format!("{pid}/s{s}");
            let v = if !sentence_vectors.is_empty() && rng.random_bool(0.1) {
                sentence_vectors[rng.random_range(0..sentence_vectors.len())].clone()
            } else {
                random_vector(rng, dim)
            };
            sentence_vectors.push(v.clone());
            table.insert(sid.clone(), v);
            units.push(unit(&sid, UnitKind::Sentence, Some(&pid)));
        }
    }
    (units, TableProvider { dim, table })
}

fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa * bb).sqrt()
}

/// All entries passing `filter`, scored and fully sorted.
pub fn oracle_ranking(
    index: &Index,
    query: &EmbeddingVector,
    filter: Option<&[UnitKind]>,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = index
        .entries()
        .iter()
        .filter(|e| filter.is_none_or(|f| f.contains(&e.kind)))
        .map(|e| {
            (
                e.unit_id.clone(),
                oracle_cosine(query.values(), e.vector.values()),
            )
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

pub fn oracle_search(
    index: &Index,
    query: &EmbeddingVector,
    k: usize,
    filter: Option<&[UnitKind]>,
) -> Vec<String> {
    oracle_ranking(index, query, filter)
        .into_iter()
        .take(k)
        .map(|(id, _)| id)
        .collect()
}

/// Sort every sentence, keep the first sentence of each paragraph, take `k`.
pub fn oracle_distinct_parents(
    index: &Index,
    query: &EmbeddingVector,
    k: usize,
) -> Vec<(String, f64)> {
    let mut seen = HashSet::new();
    oracle_ranking(index, query, Some(&[UnitKind::Sentence]))
        .into_iter()
        .filter_map(|(id, score)| {
            let parent = index.get(&id).unwrap().parent_para_id.clone().unwrap();
            seen.insert(parent.clone()).then_some((parent, score))
        })
        .take(k)
        .collect()
}
