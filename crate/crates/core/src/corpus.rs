//! Document and glossary ingestion.
//!
//! Plain-text documents are split into paragraphs on blank lines and each
//! paragraph is segmented into sentences. Identifiers are assigned from
//! position only (`doc/pN`, `doc/pN/sM`, `gN`), so identical input bytes
//! always produce identical structures.

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator placed between a glossary term and its definition in the
/// combined text.
pub const COMBINED_SEPARATOR: &str = " — ";

/// Tokens ending in a terminator that never close a sentence.
///
/// Matching is case-sensitive against the whitespace-delimited token that
/// ends at the terminator. Single-letter tokens such as `A.` are deliberately
/// absent.
pub const ABBREVIATIONS: &[&str] = &[
    "Fig.", "Figs.", "fig.", "e.g.", "i.e.", "al.", "No.", "Nos.", "no.", "Std.", "Eq.", "Eqs.",
    "Sec.", "Ref.", "Refs.", "Vol.", "pp.", "cf.", "vs.", "approx.", "Dr.", "Mr.", "Ms.", "Inc.",
    "Ltd.", "Co.", "Corp.",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("source `{0}` contains no text")]
    EmptyCorpus(String),
    #[error("source `{source_name}` is not valid UTF-8 (first bad byte at offset {offset})")]
    Encoding { source_name: String, offset: usize },
    #[error("glossary record {index} is malformed: {reason}")]
    MalformedEntry { index: usize, reason: String },
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("document id must be nonempty")]
    EmptyDocId,
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("invalid corpus json")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    pub para_id: String,
    pub text: String,
    pub word_count: usize,
    /// Byte offset of the sentence start within the paragraph text.
    pub char_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub para_id: String,
    pub doc_id: String,
    /// Whitespace-normalized paragraph text.
    pub text: String,
    pub sentences: Vec<Sentence>,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

impl Document {
    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.paragraphs.iter().flat_map(|p| p.sentences.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryEntry {
    pub entry_id: String,
    pub term: String,
    pub definition: String,
    pub combined: String,
    pub contains_acronym: bool,
}

impl GlossaryEntry {
    pub fn new(entry_id: impl Into<String>, term: &str, definition: &str) -> Self {
        let term = term.trim().to_string();
        let definition = definition.trim().to_string();
        let combined = format!("{term}{COMBINED_SEPARATOR}{definition}");
        let contains_acronym = contains_acronym(&term) || contains_acronym(&definition);
        Self {
            entry_id: entry_id.into(),
            term,
            definition,
            combined,
            contains_acronym,
        }
    }
}

/// A set of documents plus an optional glossary, serialized as one JSON file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    #[serde(default)]
    pub glossary: Vec<GlossaryEntry>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_document(&mut self, doc: Document) -> Result<()> {
        if self.documents.iter().any(|d| d.doc_id == doc.doc_id) {
            return Err(CorpusError::DuplicateDocument(doc.doc_id));
        }
        self.documents.push(doc);
        Ok(())
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = &Paragraph> {
        self.documents.iter().flat_map(|d| d.paragraphs.iter())
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.paragraphs().flat_map(|p| p.sentences.iter())
    }

    pub fn paragraph(&self, para_id: &str) -> Option<&Paragraph> {
        self.paragraphs().find(|p| p.para_id == para_id)
    }

    pub fn sentence(&self, sent_id: &str) -> Option<&Sentence> {
        self.sentences().find(|s| s.sent_id == sent_id)
    }

    pub fn glossary_entry(&self, entry_id: &str) -> Option<&GlossaryEntry> {
        self.glossary.iter().find(|g| g.entry_id == entry_id)
    }

    /// Every identifier a query may reference: documents, paragraphs,
    /// sentences and glossary entries.
    pub fn known_ids(&self) -> HashSet<&str> {
        let mut ids = HashSet::new();
        for d in &self.documents {
            ids.insert(d.doc_id.as_str());
            for p in &d.paragraphs {
                ids.insert(p.para_id.as_str());
                ids.extend(p.sentences.iter().map(|s| s.sent_id.as_str()));
            }
        }
        ids.extend(self.glossary.iter().map(|g| g.entry_id.as_str()));
        ids
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Count of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read_utf8(mut source: impl Read, name: &str) -> Result<String> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| CorpusError::Encoding {
        source_name: name.to_string(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Reads a plain-text document and segments it into paragraphs and sentences.
pub fn ingest_document(source: impl Read, doc_id: &str) -> Result<Document> {
    if doc_id.is_empty() {
        return Err(CorpusError::EmptyDocId);
    }
    let text = read_utf8(source, doc_id)?;
    let blocks = split_paragraphs(&text);
    if blocks.is_empty() {
        return Err(CorpusError::EmptyCorpus(doc_id.to_string()));
    }

    let title = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or_default()
        .to_string();

    let paragraphs = blocks
        .into_iter()
        .enumerate()
        .map(|(pi, block)| {
            let para_id = format!("{doc_id}/p{pi}");
            let text = normalize_whitespace(&block);
            let sentences = segment_sentences(&text)
                .into_iter()
                .enumerate()
                .map(|(si, (s, offset))| Sentence {
                    sent_id: format!("{para_id}/s{si}"),
                    para_id: para_id.clone(),
                    word_count: word_count(s),
                    text: s.to_string(),
                    char_offset: offset,
                })
                .collect();
            Paragraph {
                para_id,
                doc_id: doc_id.to_string(),
                word_count: word_count(&text),
                text,
                sentences,
            }
        })
        .collect();

    Ok(Document {
        doc_id: doc_id.to_string(),
        title,
        paragraphs,
    })
}

/// Groups lines into blocks separated by one or more blank lines.
fn split_paragraphs(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current.join("\n"));
    }
    blocks
}

/// Splits paragraph text into sentences, returning each sentence with its
/// byte offset into `text`.
///
/// A boundary is a terminator (`.`, `?`, `!`), optionally followed by closing
/// quotes or brackets, then whitespace, then an uppercase letter or digit.
/// Periods ending a token from [`ABBREVIATIONS`] never split. Returned
/// sentences are trimmed; text without a boundary comes back whole.
pub fn segment_sentences(text: &str) -> Vec<(&str, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;

    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, ')' | ']' | '"' | '\'' | '’' | '”') {
                j += 1;
            }
            let ws_start = j;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            let boundary = j > ws_start
                && j < chars.len()
                && (chars[j].1.is_uppercase() || chars[j].1.is_ascii_digit())
                && !(c == '.' && is_guarded(&text[start..pos + 1]));
            if boundary {
                let end = chars[ws_start].0;
                push_trimmed(&mut out, text, start, end);
                start = chars[j].0;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(&mut out, text, start, text.len());
    if out.is_empty() && !text.is_empty() {
        out.push((text, 0));
    }
    out
}

fn push_trimmed<'a>(out: &mut Vec<(&'a str, usize)>, text: &'a str, start: usize, end: usize) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        out.push((trimmed, start + lead));
    }
}

fn is_guarded(upto_terminator: &str) -> bool {
    let token = upto_terminator
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or_default()
        .trim_start_matches(['(', '[', '"', '\'']);
    ABBREVIATIONS.contains(&token)
}

/// True when `text` holds a token of two or more uppercase ASCII letters,
/// optionally followed by digits. Tokens are split on any non-alphanumeric
/// character, so `(BSS)` and `802.11-AP` both count.
pub fn contains_acronym(text: &str) -> bool {
    acronym_tokens(text).next().is_some()
}

pub fn acronym_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|tok| is_acronym_token(tok))
}

fn is_acronym_token(tok: &str) -> bool {
    let letters = tok.bytes().take_while(u8::is_ascii_uppercase).count();
    letters >= 2 && tok[letters..].bytes().all(|b| b.is_ascii_digit())
}

#[derive(Deserialize)]
struct RawGlossaryRecord {
    term: Option<String>,
    definition: Option<String>,
}

/// Parses JSON-Lines glossary records (`{"term": ..., "definition": ...}`).
///
/// Blank lines are skipped; record indices count only non-blank lines and
/// become the entry ids `g0`, `g1`, ...
pub fn ingest_glossary(source: impl Read) -> Result<Vec<GlossaryEntry>> {
    let text = read_utf8(source, "glossary")?;
    let mut entries = Vec::new();
    for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let raw: RawGlossaryRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedEntry {
                index,
                reason: e.to_string(),
            })?;
        let field = |v: Option<String>, name: &str| match v {
            Some(s) if !s.trim().is_empty() => Ok(s),
            _ => Err(CorpusError::MalformedEntry {
                index,
                reason: format!("missing or empty `{name}`"),
            }),
        };
        let term = field(raw.term, "term")?;
        let definition = field(raw.definition, "definition")?;
        entries.push(GlossaryEntry::new(format!("g{index}"), &term, &definition));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(v: Vec<(&str, usize)>) -> Vec<&str> {
        v.into_iter().map(|(t, _)| t).collect()
    }

    #[test]
    fn word_count_cases() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("   \t\n"), 0);
        assert_eq!(word_count("alpha  beta\tgamma"), 3);
        let two_hundred = vec!["w"; 200].join(" ");
        assert_eq!(word_count(&two_hundred), 200);
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(
            segment_sentences("No boundary here"),
            vec![("No boundary here", 0)]
        );
        assert_eq!(
            texts(segment_sentences("See Fig. 3. It works.")),
            vec!["See Fig. 3.", "It works."]
        );
        assert_eq!(texts(segment_sentences("A. B. C.")), vec!["A.", "B.", "C."]);
        assert_eq!(
            texts(segment_sentences(
                "Use e.g. Alpha here. Smith et al. Show it."
            )),
            vec!["Use e.g. Alpha here.", "Smith et al. Show it."]
        );
        assert_eq!(
            texts(segment_sentences("Is it? Yes! 5 more. lower case. Next")),
            vec!["Is it?", "Yes!", "5 more. lower case.", "Next"]
        );
        assert_eq!(
            texts(segment_sentences("It ended (see above.) Then more.")),
            vec!["It ended (see above.)", "Then more."]
        );
    }

    #[test]
    fn offsets_point_into_text() {
        let t = "First one. Second one! Third?";
        for (s, off) in segment_sentences(t) {
            assert_eq!(&t[off..off + s.len()], s);
        }
    }

    #[test]
    fn ingest_two_paragraphs() {
        let doc = ingest_document("One two.\n\n\nThree four.".as_bytes(), "d").unwrap();
        assert_eq!(doc.paragraphs.len(), 2);
        assert_eq!(doc.paragraphs[1].para_id, "d/p1");
        assert_eq!(doc.paragraphs[1].sentences[0].sent_id, "d/p1/s0");
    }

    #[test]
    fn ingest_one_paragraph_two_sentences() {
        let doc = ingest_document("A B C. D E.".as_bytes(), "d").unwrap();
        assert_eq!(doc.paragraphs.len(), 1);
        let counts: Vec<_> = doc.paragraphs[0]
            .sentences
            .iter()
            .map(|s| s.word_count)
            .collect();
        assert_eq!(counts, vec![3, 2]);
    }

    #[test]
    fn ingest_errors() {
        assert!(matches!(
            ingest_document("  \n\n ".as_bytes(), "d"),
            Err(CorpusError::EmptyCorpus(_))
        ));
        assert!(matches!(
            ingest_document(&[b'o', b'k', 0xff, 0xfe][..], "d"),
            Err(CorpusError::Encoding { offset: 2, .. })
        ));
    }

    #[test]
    fn glossary_acronyms() {
        let src = r#"{"term": "basic service set (BSS)", "definition": "A set of stations."}
{"term": "cell", "definition": "the basic electrochemical unit"}"#;
        let g = ingest_glossary(src.as_bytes()).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g[0].contains_acronym);
        assert!(!g[1].contains_acronym);
        assert_eq!(
            g[0].combined,
            "basic service set (BSS) — A set of stations."
        );
        assert_eq!(g[1].entry_id, "g1");
    }

    #[test]
    fn glossary_missing_field_names_index() {
        let src = "{\"term\": \"a\", \"definition\": \"b\"}\n{\"term\": \"x\"}\n";
        match ingest_glossary(src.as_bytes()) {
            Err(CorpusError::MalformedEntry { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn acronym_rule() {
        assert!(contains_acronym("IEEE 802.11"));
        assert!(contains_acronym("(AP2)"));
        assert!(contains_acronym("MAC-layer"));
        assert!(!contains_acronym("A set"));
        assert!(!contains_acronym("Wi-Fi"));
        assert!(!contains_acronym("PHYs"));
        assert!(!contains_acronym("2AB"));
    }
}
