//! Annotated-document model, JSONL ingestion and sentence segmentation.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"doc_id": "d1", "text": "...", "annotations": [{"entity": "e", "begin": 0, "end": 4, "surface": "Ford"}]}
//! ```
//!
//! Offsets are UTF-8 byte offsets into `text`. Extra annotation fields (FACC1-style
//! confidence scores, for instance) are accepted and ignored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },
}

impl CorpusError {
    /// Line number of a record-level error.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Record { line, .. } => Some(*line),
            CorpusError::Io { .. } => None,
        }
    }
}

/// A linked entity mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    #[serde(rename = "entity")]
    pub entity_id: String,
    pub begin: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    pub annotations: Vec<EntityAnnotation>,
}

impl AnnotatedDocument {
    /// Validates a document and normalizes annotation order (by begin, longer span first).
    pub fn new(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        mut annotations: Vec<EntityAnnotation>,
    ) -> Result<Self, String> {
        let doc_id = doc_id.into();
        let text = text.into();
        if doc_id.is_empty() {
            return Err("empty doc_id".into());
        }
        for a in &annotations {
            validate_annotation(&text, a)?;
        }
        annotations.sort_by(|a, b| {
            a.begin
                .cmp(&b.begin)
                .then(b.end.cmp(&a.end))
                .then_with(|| a.entity_id.cmp(&b.entity_id))
        });
        // Spans must nest or be disjoint. With begin-sorted spans a stack of open
        // spans is enough to find a partial overlap.
        let mut open: Vec<(usize, usize)> = Vec::new();
        for a in &annotations {
            while open.last().is_some_and(|&(_, end)| end <= a.begin) {
                open.pop();
            }
            if let Some(&(b, e)) = open.last() {
                if a.end > e {
                    return Err(format!(
                        "annotation [{}, {}) partially overlaps [{}, {})",
                        a.begin, a.end, b, e
                    ));
                }
            }
            open.push((a.begin, a.end));
        }
        Ok(AnnotatedDocument {
            doc_id,
            text,
            annotations,
        })
    }
}

fn validate_annotation(text: &str, a: &EntityAnnotation) -> Result<(), String> {
    if a.entity_id.is_empty() {
        return Err("empty entity id".into());
    }
    // Entity ids end up whitespace- and pipe-delimited in run and qrels files.
    if a.entity_id.chars().any(|c| c.is_whitespace() || c == '|') {
        return Err(format!("entity id {:?} contains whitespace or '|'", a.entity_id));
    }
    if a.begin >= a.end {
        return Err(format!("empty or inverted span [{}, {})", a.begin, a.end));
    }
    if a.end > text.len() {
        return Err(format!(
            "span [{}, {}) exceeds text length {}",
            a.begin,
            a.end,
            text.len()
        ));
    }
    if !text.is_char_boundary(a.begin) || !text.is_char_boundary(a.end) {
        return Err(format!("span [{}, {}) is not on a character boundary", a.begin, a.end));
    }
    if text[a.begin..a.end] != a.surface {
        return Err(format!(
            "surface {:?} does not match text {:?} at [{}, {})",
            a.surface,
            &text[a.begin..a.end],
            a.begin,
            a.end
        ));
    }
    Ok(())
}

/// What to do with a malformed record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    #[default]
    Fail,
    Skip,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub on_error: OnError,
    pub tokenizer: Tokenizer,
}

#[derive(Deserialize)]
struct RawRecord {
    doc_id: String,
    text: String,
    #[serde(default)]
    annotations: Vec<EntityAnnotation>,
}

/// Parses one corpus line.
pub fn parse_record(line: &str) -> Result<AnnotatedDocument, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    AnnotatedDocument::new(raw.doc_id, raw.text, raw.annotations)
}

/// Streaming reader over a corpus file.
///
/// Yields documents in file order. In [`OnError::Fail`] mode the first bad record is
/// yielded as an error and iteration stops; in [`OnError::Skip`] mode bad records are
/// counted in [`Corpus::errors`] and skipped.
pub struct Corpus<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    on_error: OnError,
    seen: HashSet<String>,
    errors: Vec<CorpusError>,
    done: bool,
}

/// Opens a corpus file.
pub fn ingest_corpus(path: impl AsRef<Path>, config: &IngestConfig) -> Result<Corpus<BufReader<File>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Corpus::from_reader(BufReader::new(file), config.on_error))
}

impl<R: BufRead> Corpus<R> {
    pub fn from_reader(reader: R, on_error: OnError) -> Self {
        Corpus {
            lines: reader.lines(),
            line_no: 0,
            on_error,
            seen: HashSet::new(),
            errors: Vec::new(),
            done: false,
        }
    }

    /// Record errors skipped so far.
    pub fn errors(&self) -> &[CorpusError] {
        &self.errors
    }

    pub fn take_errors(&mut self) -> Vec<CorpusError> {
        std::mem::take(&mut self.errors)
    }

    pub fn lines_read(&self) -> usize {
        self.line_no
    }
}

impl<R: BufRead> Iterator for Corpus<R> {
    type Item = Result<AnnotatedDocument, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(source) => {
                    self.done = true;
                    return Some(Err(CorpusError::Io {
                        path: format!("<line {}>", self.line_no + 1),
                        source,
                    }));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = parse_record(&line).and_then(|doc| {
                if self.seen.contains(&doc.doc_id) {
                    Err(format!("duplicate doc_id {:?}", doc.doc_id))
                } else {
                    Ok(doc)
                }
            });
            match parsed {
                Ok(doc) => {
                    self.seen.insert(doc.doc_id.clone());
                    return Some(Ok(doc));
                }
                Err(reason) => {
                    let err = CorpusError::Record {
                        line: self.line_no,
                        reason,
                    };
                    match self.on_error {
                        OnError::Fail => {
                            self.done = true;
                            return Some(Err(err));
                        }
                        OnError::Skip => self.errors.push(err),
                    }
                }
            }
        }
        None
    }
}

/// Serializes a document back to its corpus line.
pub fn serialize_record(doc: &AnnotatedDocument) -> String {
    serde_json::to_string(doc).expect("documents always serialize")
}

/// Token normalization shared by corpus, queries and table titles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tokenizer {
    /// Terms dropped after normalization. Empty keeps every token.
    pub stopwords: Vec<String>,
}

/// Strips non-alphanumeric characters from both ends and lowercases.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

impl Tokenizer {
    pub fn with_stopwords<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Tokenizer {
            stopwords: stopwords.into_iter().map(Into::into).collect(),
        }
    }

    fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.iter().any(|s| s == term)
    }

    /// Tokenizes `text[begin..end]`, returning terms with absolute byte spans.
    pub fn tokenize_span(&self, text: &str, begin: usize, end: usize) -> Vec<Token> {
        let mut out = Vec::new();
        let slice = &text[begin..end];
        let mut start: Option<usize> = None;
        let push = |s: usize, e: usize, out: &mut Vec<Token>| {
            let raw = &slice[s..e];
            let lead = raw.len() - raw.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return;
            }
            let term = trimmed.to_lowercase();
            if self.is_stopword(&term) {
                return;
            }
            let tb = begin + s + lead;
            out.push(Token {
                term,
                begin: tb,
                end: tb + trimmed.len(),
            });
        };
        for (i, c) in slice.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    push(s, i, &mut out);
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            push(s, slice.len(), &mut out);
        }
        out
    }

    /// Tokenizes free text into normalized terms.
    pub fn terms(&self, text: &str) -> Vec<String> {
        self.tokenize_span(text, 0, text.len())
            .into_iter()
            .map(|t| t.term)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub term: String,
    pub begin: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub sent_index: usize,
    pub begin: usize,
    pub end: usize,
    pub tokens: Vec<Token>,
}

/// Byte spans of the sentences in `text`.
///
/// A sentence starts at the first non-whitespace character and ends after a `.`, `!`
/// or `?` that is followed by whitespace or the end of text. Trailing text without a
/// terminator forms a final sentence ending at its last non-whitespace character.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_non_ws = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        last_non_ws = i + c.len_utf8();
        if matches!(c, '.' | '!' | '?') {
            let at_break = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if at_break {
                spans.push((start.take().unwrap(), last_non_ws));
            }
        }
    }
    if let Some(s) = start {
        spans.push((s, last_non_ws));
    }
    spans
}

pub fn segment_sentences(doc: &AnnotatedDocument, tokenizer: &Tokenizer) -> Vec<Sentence> {
    sentence_spans(&doc.text)
        .into_iter()
        .enumerate()
        .map(|(sent_index, (begin, end))| Sentence {
            doc_id: doc.doc_id.clone(),
            sent_index,
            begin,
            end,
            tokens: tokenizer.tokenize_span(&doc.text, begin, end),
        })
        .collect()
}

/// Annotations of one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceAnnotations<'a> {
    /// Annotations fully inside the sentence, in offset order.
    pub contained: Vec<&'a EntityAnnotation>,
    /// Annotations crossing the sentence boundary; excluded from `contained`.
    pub straddling: usize,
}

pub fn annotations_in_sentence<'a>(doc: &'a AnnotatedDocument, s: &Sentence) -> SentenceAnnotations<'a> {
    let mut contained = Vec::new();
    let mut straddling = 0;
    for a in &doc.annotations {
        if a.end <= s.begin || a.begin >= s.end {
            continue;
        }
        if a.begin >= s.begin && a.end <= s.end {
            contained.push(a);
        } else {
            straddling += 1;
        }
    }
    SentenceAnnotations { contained, straddling }
}
