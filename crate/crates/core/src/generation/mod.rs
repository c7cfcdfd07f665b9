//! Prompt assembly, chat providers and the context-order experiment.

mod http;
mod stub;

pub use http::{HttpChatConfig, HttpChatProvider};
pub use stub::{CannedStub, EchoMode, EchoStub};

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{acronym_tokens, GlossaryEntry};
use crate::embedding::{cosine, tokenize, EmbedError, EmbeddingProvider};
use crate::retrieval::StrategyKind;

/// System prompt sent with every generation request. Must not be edited.
pub const SYSTEM_PROMPT: &str = "Answer the questions based on the paragraphs provided here. \
DO NOT use any other information except that in the paragraphs. \
Keep the answers as short as possible. JUST GIVE THE ANSWER. NO PREAMBLE REQUIRED.";

pub const PARAGRAPHS_PREFIX: &str = "PARAGRAPHS : ";
pub const QUESTIONS_PREFIX: &str = "QUESTIONS: ";
/// Joins multiple context texts inside the user prompt.
pub const CONTEXT_JOIN: &str = "\n";

pub const MAX_PERMUTED_CONTEXTS: usize = 5;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("prompt needs at least one context text")]
    EmptyContext,
    #[error("query text is empty")]
    EmptyQuery,
    #[error("chat provider `{provider}` unavailable after {attempts} attempt(s): {message}")]
    ProviderUnavailable {
        provider: String,
        attempts: u32,
        message: String,
    },
    #[error("prompt of ~{estimated_tokens} tokens exceeds the model context{}", .limit.map(|l| format!(" of {l}")).unwrap_or_default())]
    ContextOverflow {
        estimated_tokens: usize,
        limit: Option<usize>,
    },
    #[error("malformed chat response: {0}")]
    Protocol(String),
    #[error("permutation experiment needs 2..={MAX_PERMUTED_CONTEXTS} contexts and at least one ordering, got {contexts} contexts, max {max_permutations}")]
    TooManyPermutations {
        contexts: usize,
        max_permutations: usize,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("invalid json")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GenerationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

impl PromptPair {
    /// Context texts and query recovered from the user prompt.
    pub fn parts(&self) -> Option<(Vec<&str>, &str)> {
        let body = self.user.strip_prefix(PARAGRAPHS_PREFIX)?;
        let cut = body.rfind(QUESTIONS_PREFIX)?;
        let contexts = body[..cut].split(CONTEXT_JOIN).collect();
        Some((contexts, &body[cut + QUESTIONS_PREFIX.len()..]))
    }

    /// Rough token count (4 tokens per 3 words) used for overflow checks.
    pub fn estimated_tokens(&self) -> usize {
        let words = crate::corpus::word_count(&self.system) + crate::corpus::word_count(&self.user);
        (words * 4).div_ceil(3)
    }
}

/// Assembles the system/user prompt pair. The user prompt is the literal
/// concatenation `"PARAGRAPHS : " + context + "QUESTIONS: " + query`.
pub fn build_prompt<S: AsRef<str>>(context_texts: &[S], query: &str) -> Result<PromptPair> {
    if context_texts.is_empty() {
        return Err(GenerationError::EmptyContext);
    }
    if query.trim().is_empty() {
        return Err(GenerationError::EmptyQuery);
    }
    let context = context_texts
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(CONTEXT_JOIN);
    Ok(PromptPair {
        system: SYSTEM_PROMPT.to_string(),
        user: format!("{PARAGRAPHS_PREFIX}{context}{QUESTIONS_PREFIX}{query}"),
    })
}

/// A chat model reached through a single request/response call.
pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn temperature(&self) -> f64;

    fn complete(&self, prompt: &PromptPair) -> Result<String>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn temperature(&self) -> f64 {
        (**self).temperature()
    }
    fn complete(&self, prompt: &PromptPair) -> Result<String> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderMeta {
    pub model_id: String,
    pub temperature: f64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    pub prompt: PromptPair,
    /// Unit ids of the contexts, in prompt order.
    pub context_order: Vec<String>,
    pub response: String,
    pub provider_meta: ProviderMeta,
}

/// Sends `prompt` and records the verbatim response.
pub fn generate(
    llm: &dyn ChatProvider,
    prompt: PromptPair,
    context_order: Vec<String>,
) -> Result<GenerationRecord> {
    let started = Instant::now();
    let response = llm.complete(&prompt)?;
    Ok(GenerationRecord {
        query_id: None,
        strategy: None,
        prompt,
        context_order,
        response,
        provider_meta: ProviderMeta {
            model_id: llm.model_id().to_string(),
            temperature: llm.temperature(),
            latency_ms: started.elapsed().as_millis() as u64,
        },
    })
}

/// Writes records as JSON Lines.
pub fn write_records(records: &[GenerationRecord], path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_records(path: &std::path::Path) -> Result<Vec<GenerationRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Rearranges `v` into the next lexicographic permutation; false at the last.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|&x| x > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// The first `limit` permutations of `0..n` in lexicographic order.
pub fn lexicographic_permutations(n: usize, limit: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    while out.len() < limit {
        out.push(cur.clone());
        if !next_permutation(&mut cur) {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRun {
    /// Positions into the original context list, in prompt order.
    pub order: Vec<usize>,
    pub prompt: PromptPair,
    pub response: String,
    /// Cosine between this response's embedding and the identity-order one.
    pub similarity_to_first: f64,
    pub exact_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub query: String,
    pub runs: Vec<PermutationRun>,
}

impl PermutationReport {
    pub fn min_similarity(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.similarity_to_first)
            .fold(1.0, f64::min)
    }

    pub fn exact_matches(&self) -> usize {
        self.runs.iter().filter(|r| r.exact_match).count()
    }

    /// True when any ordering changed the response embedding.
    pub fn order_effect(&self) -> bool {
        self.runs.iter().any(|r| r.similarity_to_first < 1.0)
    }
}

fn response_similarity(embedder: &dyn EmbeddingProvider, a: &str, b: &str) -> Result<f64> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    let (va, vb) = (embedder.embed(a)?, embedder.embed(b)?);
    Ok(cosine(&va, &vb)?)
}

/// Generates once per context ordering and compares every response with the
/// identity-order response.
///
/// Orderings are the first `min(n!, max_permutations)` permutations in
/// lexicographic order. Up to `max_in_flight` requests run at once; runs come
/// back in permutation order.
pub fn permutation_experiment<S: AsRef<str> + Sync>(
    llm: &dyn ChatProvider,
    embedder: &dyn EmbeddingProvider,
    context_texts: &[S],
    query: &str,
    max_permutations: usize,
    max_in_flight: usize,
) -> Result<PermutationReport> {
    let n = context_texts.len();
    if !(2..=MAX_PERMUTED_CONTEXTS).contains(&n) || max_permutations == 0 {
        return Err(GenerationError::TooManyPermutations {
            contexts: n,
            max_permutations,
        });
    }
    let orders = lexicographic_permutations(n, max_permutations);
    let prompts = orders
        .iter()
        .map(|o| {
            let ctx: Vec<&str> = o.iter().map(|&i| context_texts[i].as_ref()).collect();
            build_prompt(&ctx, query)
        })
        .collect::<Result<Vec<_>>>()?;

    let slots: Vec<Mutex<Option<Result<String>>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|s| {
        for _ in 0..max_in_flight.clamp(1, prompts.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = prompts.get(i) else { break };
                *slots[i].lock().unwrap() = Some(llm.complete(p));
            });
        }
    });
    let responses = slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every prompt is claimed"))
        .collect::<Result<Vec<_>>>()?;

    let first = responses[0].clone();
    let runs = orders
        .into_iter()
        .zip(prompts)
        .zip(responses)
        .map(|((order, prompt), response)| {
            Ok(PermutationRun {
                similarity_to_first: response_similarity(embedder, &first, &response)?,
                exact_match: response == first,
                order,
                prompt,
                response,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PermutationReport {
        query: query.to_string(),
        runs,
    })
}

/// Connective words ignored when judging whether an answer only restates an
/// abbreviation.
const RESTATEMENT_STOPWORDS: &[&str] = &[
    "a",
    "an",
    "the",
    "is",
    "are",
    "it",
    "this",
    "that",
    "of",
    "for",
    "to",
    "in",
    "and",
    "or",
    "as",
    "stands",
    "stand",
    "means",
    "mean",
    "refers",
    "refer",
    "short",
    "abbreviation",
    "abbreviated",
    "acronym",
    "expansion",
    "expands",
    "expanded",
    "known",
    "also",
    "called",
    "term",
    "full",
    "form",
];

fn initials_match(window: &[String], letters: &str) -> bool {
    window
        .iter()
        .zip(letters.chars())
        .all(|(w, c)| w.starts_with(c))
}

/// Tokens of the term plus any run of term/definition words whose initials
/// spell one of the entry's acronyms.
fn expansion_tokens(entry: &GlossaryEntry) -> HashSet<String> {
    let mut set: HashSet<String> = tokenize(&entry.term).collect();
    let words: Vec<String> = tokenize(&entry.term)
        .chain(tokenize(&entry.definition))
        .collect();
    for acronym in acronym_tokens(&entry.term).chain(acronym_tokens(&entry.definition)) {
        let letters: String = acronym
            .chars()
            .take_while(char::is_ascii_uppercase)
            .collect::<String>()
            .to_lowercase();
        let n = letters.len();
        set.insert(acronym.to_lowercase());
        if n > words.len() {
            continue;
        }
        for w in words.windows(n).filter(|w| initials_match(w, &letters)) {
            set.extend(w.iter().cloned());
        }
    }
    set
}

/// True when `response` does nothing but restate an abbreviation and its
/// expansion: every content word comes from the term or an acronym
/// expansion, so no definition-only word appears. Always false for entries
/// without an acronym.
pub fn acronym_expansion_flag(response: &str, entry: &GlossaryEntry) -> bool {
    if !entry.contains_acronym {
        return false;
    }
    let allowed = expansion_tokens(entry);
    let content: Vec<String> = tokenize(response)
        .filter(|t| !RESTATEMENT_STOPWORDS.contains(&t.as_str()))
        .collect();
    !content.is_empty() && content.iter().all(|t| allowed.contains(t))
}
