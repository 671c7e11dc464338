//! Coreference-annotated documents and the line-delimited exchange format.
//!
//! One record per line, fields in this order:
//!
//! ```text
//! {"doc_key":"d0","sentences":[["Auto","workers"]],"speakers":[["s","s"]],"genre":"nw","clusters":[[[0,1]]]}
//! ```
//!
//! Spans are inclusive `[start, end]` pairs over the flattened token sequence.

mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{synthesize_corpus, SynthConfig, SynthError};

/// Genre tags with learned embeddings. Anything else maps to [`UNKNOWN_GENRE`].
pub const GENRES: [&str; 7] = ["bc", "bn", "mz", "nw", "pt", "tc", "wb"];
/// Reserved id for genres outside [`GENRES`].
pub const UNKNOWN_GENRE: usize = GENRES.len();
/// Number of rows in a genre embedding table.
pub const GENRE_TABLE_SIZE: usize = GENRES.len() + 1;

pub fn genre_id(genre: &str) -> usize {
    GENRES
        .iter()
        .position(|g| *g == genre)
        .unwrap_or(UNKNOWN_GENRE)
}

/// Inclusive token interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
}

impl MentionSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        MentionSpan { start, end }
    }

    /// Number of tokens minus one; zero for single-token spans.
    pub fn width(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn contains(&self, other: &MentionSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn is_disjoint(&self, other: &MentionSpan) -> bool {
        self.end < other.start || other.end < self.start
    }

    /// True when the two spans overlap without one containing the other.
    pub fn crosses(&self, other: &MentionSpan) -> bool {
        !self.is_disjoint(other) && !self.contains(other) && !other.contains(self)
    }
}

impl From<[usize; 2]> for MentionSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        MentionSpan { start, end }
    }
}

impl From<MentionSpan> for [usize; 2] {
    fn from(span: MentionSpan) -> Self {
        [span.start, span.end]
    }
}

impl fmt::Display for MentionSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

/// Clusters of mentions in creation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<MentionSpan>>,
}

impl ClusterSet {
    pub fn new(clusters: Vec<Vec<MentionSpan>>) -> Self {
        ClusterSet { clusters }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<MentionSpan>> {
        self.clusters.iter()
    }

    pub fn mentions(&self) -> impl Iterator<Item = MentionSpan> + '_ {
        self.clusters.iter().flatten().copied()
    }

    pub fn num_mentions(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Drops clusters with fewer than two members.
    pub fn without_singletons(&self) -> ClusterSet {
        ClusterSet {
            clusters: self
                .clusters
                .iter()
                .filter(|c| c.len() >= 2)
                .cloned()
                .collect(),
        }
    }

    /// Order-insensitive form: each cluster sorted, clusters sorted.
    pub fn canonical(&self) -> Vec<Vec<MentionSpan>> {
        let mut out: Vec<Vec<MentionSpan>> = self
            .clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort();
                c
            })
            .collect();
        out.sort();
        out
    }

    /// Equality as a set of sets.
    pub fn same_partition(&self, other: &ClusterSet) -> bool {
        self.canonical() == other.canonical()
    }
}

impl FromIterator<Vec<MentionSpan>> for ClusterSet {
    fn from_iter<I: IntoIterator<Item = Vec<MentionSpan>>>(iter: I) -> Self {
        ClusterSet {
            clusters: iter.into_iter().collect(),
        }
    }
}

/// A tokenized document with speakers, genre and gold clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_key: String,
    pub sentences: Vec<Vec<String>>,
    pub speakers: Vec<Vec<String>>,
    pub genre: String,
    #[serde(rename = "clusters")]
    pub gold_clusters: ClusterSet,
}

impl Document {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    pub fn flat_speakers(&self) -> impl Iterator<Item = &str> {
        self.speakers.iter().flatten().map(String::as_str)
    }

    /// Index of the first token of every sentence.
    pub fn sentence_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.sentences.len());
        let mut offset = 0;
        for sentence in &self.sentences {
            starts.push(offset);
            offset += sentence.len();
        }
        starts
    }

    /// Sentence index of every token.
    pub fn sentence_map(&self) -> Vec<usize> {
        self.sentences
            .iter()
            .enumerate()
            .flat_map(|(s, toks)| std::iter::repeat_n(s, toks.len()))
            .collect()
    }

    pub fn genre_id(&self) -> usize {
        genre_id(&self.genre)
    }
}

/// A broken document invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Inverted(MentionSpan),
    OutOfBounds {
        span: MentionSpan,
        num_tokens: usize,
    },
    Crossing(MentionSpan, MentionSpan),
    Duplicate(MentionSpan),
    SpeakerCount {
        expected: usize,
        found: usize,
    },
    SpeakerShape {
        sentence: usize,
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Inverted(s) => write!(f, "span {s}: start after end"),
            Violation::OutOfBounds { span, num_tokens } => {
                write!(f, "span {span}: outside document of {num_tokens} tokens")
            }
            Violation::Crossing(a, b) => write!(f, "spans {a} and {b} cross"),
            Violation::Duplicate(s) => write!(f, "span {s} annotated more than once"),
            Violation::SpeakerCount { expected, found } => {
                write!(f, "expected {expected} speaker entries, found {found}")
            }
            Violation::SpeakerShape {
                sentence,
                expected,
                found,
            } => write!(
                f,
                "sentence {sentence}: {expected} tokens but {found} speakers"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid document {doc_key}: {}", join_violations(.violations))]
    Invalid {
        doc_key: String,
        violations: Vec<Violation>,
    },
    #[error("predicted span {span} outside document of {num_tokens} tokens")]
    SpanOutOfBounds {
        span: MentionSpan,
        num_tokens: usize,
    },
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Lists every broken invariant; empty iff the document is well formed.
pub fn validate_document(doc: &Document) -> Vec<Violation> {
    let n = doc.num_tokens();
    let mut violations = Vec::new();

    let found: usize = doc.speakers.iter().map(Vec::len).sum();
    if found != n {
        violations.push(Violation::SpeakerCount { expected: n, found });
    } else if doc.speakers.len() == doc.sentences.len() {
        for (sentence, (toks, spks)) in doc.sentences.iter().zip(&doc.speakers).enumerate() {
            if toks.len() != spks.len() {
                violations.push(Violation::SpeakerShape {
                    sentence,
                    expected: toks.len(),
                    found: spks.len(),
                });
            }
        }
    } else {
        violations.push(Violation::SpeakerShape {
            sentence: doc.sentences.len().min(doc.speakers.len()),
            expected: doc.sentences.len(),
            found: doc.speakers.len(),
        });
    }

    let mut spans = Vec::with_capacity(doc.gold_clusters.num_mentions());
    for span in doc.gold_clusters.mentions() {
        if span.start > span.end {
            violations.push(Violation::Inverted(span));
        } else if span.end >= n {
            violations.push(Violation::OutOfBounds {
                span,
                num_tokens: n,
            });
        } else {
            spans.push(span);
        }
    }
    violations.extend(nesting_violations(spans));
    violations
}

/// Sweep over spans sorted by (start, -end), keeping a stack of open spans.
fn nesting_violations(mut spans: Vec<MentionSpan>) -> Vec<Violation> {
    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut violations = Vec::new();
    let mut open: Vec<MentionSpan> = Vec::new();
    let mut prev: Option<MentionSpan> = None;
    for span in spans {
        if prev == Some(span) {
            violations.push(Violation::Duplicate(span));
            continue;
        }
        prev = Some(span);
        while open.last().is_some_and(|top| top.end < span.start) {
            open.pop();
        }
        match open.last() {
            Some(top) if span.end > top.end => {
                violations.push(Violation::Crossing(*top, span));
            }
            _ => open.push(span),
        }
    }
    violations
}

/// Parses and validates one exchange-format record.
pub fn parse_document(line: &[u8]) -> Result<Document, CorpusError> {
    let doc: Document = serde_json::from_slice(line).map_err(|e| CorpusError::Parse {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let violations = validate_document(&doc);
    if violations.is_empty() {
        Ok(doc)
    } else {
        Err(CorpusError::Invalid {
            doc_key: doc.doc_key,
            violations,
        })
    }
}

fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = input
        .split(|b| *b == b'\n')
        .take(line.saturating_sub(1))
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}

/// Serializes `doc` with `predicted` in place of the gold clusters.
pub fn write_predictions(doc: &Document, predicted: &ClusterSet) -> Result<String, CorpusError> {
    let n = doc.num_tokens();
    if let Some(span) = predicted.mentions().find(|s| s.start > s.end || s.end >= n) {
        return Err(CorpusError::SpanOutOfBounds {
            span,
            num_tokens: n,
        });
    }
    #[derive(Serialize)]
    struct Record<'a> {
        doc_key: &'a str,
        sentences: &'a [Vec<String>],
        speakers: &'a [Vec<String>],
        genre: &'a str,
        clusters: &'a ClusterSet,
    }
    let record = Record {
        doc_key: &doc.doc_key,
        sentences: &doc.sentences,
        speakers: &doc.speakers,
        genre: &doc.genre,
        clusters: predicted,
    };
    Ok(serde_json::to_string(&record).expect("records always serialize"))
}

pub fn write_document(doc: &Document) -> String {
    write_predictions(doc, &doc.gold_clusters).expect("validated documents serialize")
}

/// Reads a whole corpus, one record per non-blank line.
pub fn read_corpus(text: &str) -> Result<Vec<Document>, (usize, CorpusError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_document(l.as_bytes()).map_err(|e| (i + 1, e)))
        .collect()
}

/// The single-sentence document "Auto workers ended their strike".
pub fn auto_workers_document() -> Document {
    let tokens = ["Auto", "workers", "ended", "their", "strike"];
    Document {
        doc_key: "auto_workers".to_string(),
        sentences: vec![tokens.iter().map(|t| t.to_string()).collect()],
        speakers: vec![vec!["-".to_string(); tokens.len()]],
        genre: "nw".to_string(),
        gold_clusters: ClusterSet::new(vec![
            vec![MentionSpan::new(0, 1), MentionSpan::new(3, 3)],
            vec![MentionSpan::new(3, 4)],
        ]),
    }
}
