//! Offline chat providers for tests and reproducible evaluation runs.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{ChatProvider, GenerationError, PromptPair, Result};
use crate::corpus::segment_sentences;
use crate::embedding::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoMode {
    /// First sentence of the first context.
    FirstSentence,
    /// The context sentence sharing the most distinct words with the query,
    /// ties going to the lexicographically smallest sentence. Independent of
    /// context order.
    BestOverlap,
}

/// Answers by copying a sentence out of the prompt's contexts.
#[derive(Debug, Clone)]
pub struct EchoStub {
    mode: EchoMode,
    id: String,
}

impl EchoStub {
    pub fn new(mode: EchoMode) -> Self {
        let id = match mode {
            EchoMode::FirstSentence => "stub-echo-first",
            EchoMode::BestOverlap => "stub-echo-overlap",
        };
        Self {
            mode,
            id: id.into(),
        }
    }

    fn answer(&self, prompt: &PromptPair) -> Result<String> {
        let (contexts, query) = prompt.parts().ok_or_else(|| {
            GenerationError::Protocol("user prompt is not in PARAGRAPHS/QUESTIONS form".into())
        })?;
        let answer = match self.mode {
            EchoMode::FirstSentence => contexts
                .first()
                .and_then(|c| segment_sentences(c).first().map(|(s, _)| s.to_string()))
                .unwrap_or_default(),
            EchoMode::BestOverlap => {
                let wanted: BTreeSet<String> = tokenize(query).collect();
                contexts
                    .iter()
                    .flat_map(|c| segment_sentences(c))
                    .map(|(s, _)| {
                        let have: BTreeSet<String> = tokenize(s).collect();
                        (wanted.intersection(&have).count(), s)
                    })
                    .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(a.1)))
                    .map(|(_, s)| s.to_string())
                    .unwrap_or_default()
            }
        };
        Ok(answer)
    }
}

impl ChatProvider for EchoStub {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn temperature(&self) -> f64 {
        0.0
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String> {
        self.answer(prompt)
    }
}

#[derive(Deserialize)]
struct CannedLine {
    query: String,
    response: String,
}

/// Fixed responses keyed by query text, with an optional echo fallback for
/// queries that have no canned answer.
#[derive(Debug, Clone)]
pub struct CannedStub {
    answers: HashMap<String, String>,
    fallback: Option<EchoStub>,
}

impl CannedStub {
    pub fn new(answers: HashMap<String, String>, fallback: Option<EchoStub>) -> Self {
        let answers = answers
            .into_iter()
            .map(|(q, a)| (q.trim().to_string(), a))
            .collect();
        Self { answers, fallback }
    }

    /// Loads `{"query": ..., "response": ...}` JSON Lines.
    pub fn from_jsonl(path: &Path, fallback: Option<EchoStub>) -> Result<Self> {
        let mut answers = HashMap::new();
        for line in std::fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
        {
            let c: CannedLine = serde_json::from_str(line)?;
            answers.insert(c.query, c.response);
        }
        Ok(Self::new(answers, fallback))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl ChatProvider for CannedStub {
    fn model_id(&self) -> &str {
        "stub-canned"
    }

    fn temperature(&self) -> f64 {
        0.0
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String> {
        let query = prompt
            .parts()
            .map(|(_, q)| q.trim().to_string())
            .ok_or_else(|| {
                GenerationError::Protocol("user prompt is not in PARAGRAPHS/QUESTIONS form".into())
            })?;
        if let Some(a) = self.answers.get(&query) {
            return Ok(a.clone());
        }
        match &self.fallback {
            Some(echo) => echo.complete(prompt),
            None => Err(GenerationError::ProviderUnavailable {
                provider: self.model_id().into(),
                attempts: 1,
                message: format!("no canned response for query `{query}`"),
            }),
        }
    }
}
