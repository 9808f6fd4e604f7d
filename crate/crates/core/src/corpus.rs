//! Document ingestion, repository concatenation and length census.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::tokenizer::Tokenizer;
use crate::{Error, Result, TokenId};

pub const CODE_REPOS_DOMAIN: &str = "code_repos";

/// Length at which a document counts as long-context data.
pub const LONG_THRESHOLD: usize = 64 * 1024;

/// A tokenized text unit. Always holds at least one token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub domain: String,
    tokens: Vec<TokenId>,
    pub repo_key: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, domain: impl Into<String>, tokens: Vec<TokenId>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::Document(format!("document {id} has no tokens")));
        }
        Ok(Self {
            id,
            domain: domain.into(),
            tokens,
            repo_key: None,
        })
    }

    pub fn with_repo_key(mut self, key: impl Into<String>) -> Self {
        self.repo_key = Some(key.into());
        self
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keep only the first `len` tokens.
    pub fn truncate(&mut self, len: usize) {
        assert!(len >= 1, "documents cannot be truncated to zero tokens");
        self.tokens.truncate(len);
    }
}

/// One line of the newline-delimited JSON input.
#[derive(Debug, Deserialize)]
struct InputRecord {
    id: Option<String>,
    tokens: Option<Vec<TokenId>>,
    text: Option<String>,
    repo_key: Option<String>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: u64,
    pub documents: u64,
    pub dropped_empty: u64,
    pub malformed: u64,
    pub tokens: u64,
}

/// Streaming reader over JSON-lines records.
///
/// Malformed records surface as [`Error::Record`] and the stream continues;
/// an I/O failure on the source is yielded once and ends the stream.
pub struct Ingest<'a, R> {
    reader: R,
    domain: String,
    tokenizer: &'a dyn Tokenizer,
    line: usize,
    buf: Vec<u8>,
    stats: IngestStats,
    done: bool,
}

pub fn ingest<'a, R: BufRead>(reader: R, domain: &str, tokenizer: &'a dyn Tokenizer) -> Ingest<'a, R> {
    Ingest {
        reader,
        domain: domain.to_owned(),
        tokenizer,
        line: 0,
        buf: Vec::new(),
        stats: IngestStats::default(),
        done: false,
    }
}

impl<R> Ingest<'_, R> {
    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn parse(&mut self) -> Option<Result<Document>> {
        let line = self.line;
        let malformed = |message: String| Error::Record { line, message };
        let text = match std::str::from_utf8(&self.buf) {
            Ok(t) => t.trim(),
            Err(e) => return Some(Err(malformed(format!("invalid utf-8: {e}")))),
        };
        if text.is_empty() {
            return None;
        }
        self.stats.records += 1;
        let record: InputRecord = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => return Some(Err(malformed(e.to_string()))),
        };
        let tokens = match (record.tokens, record.text) {
            (Some(tokens), _) => tokens,
            (None, Some(text)) => self.tokenizer.encode(&text),
            (None, None) => return Some(Err(malformed("record has neither tokens nor text".into()))),
        };
        if tokens.is_empty() {
            self.stats.dropped_empty += 1;
            return None;
        }
        let id = record
            .id
            .unwrap_or_else(|| format!("{}-{}", self.domain, line));
        let mut doc = Document::new(id, self.domain.clone(), tokens).expect("non-empty tokens");
        doc.repo_key = record.repo_key;
        Some(Ok(doc))
    }
}

impl<R: BufRead> Iterator for Ingest<'_, R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line += 1;
                    match self.parse() {
                        None => continue,
                        Some(Ok(doc)) => {
                            self.stats.documents += 1;
                            self.stats.tokens += doc.len() as u64;
                            return Some(Ok(doc));
                        }
                        Some(Err(e)) => {
                            self.stats.malformed += 1;
                            return Some(Err(e));
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::RawIo(e)));
                }
            }
        }
        None
    }
}

/// Join the files of one repository into a single document, in input order,
/// with `separator` between consecutive files.
pub fn concat_repo(files: &[Document], separator: TokenId) -> Result<Document> {
    let first = files
        .first()
        .ok_or_else(|| Error::Invalid("cannot concatenate an empty file list".into()))?;
    let key = first
        .repo_key
        .as_deref()
        .ok_or_else(|| Error::Invalid(format!("file {} has no repo_key", first.id)))?;
    if let Some(other) = files.iter().find(|f| f.repo_key.as_deref() != Some(key)) {
        return Err(Error::Invalid(format!(
            "mixed repo_key: {} belongs to {:?}, expected {key}",
            other.id, other.repo_key
        )));
    }
    let total = files.iter().map(Document::len).sum::<usize>() + files.len() - 1;
    let mut tokens = Vec::with_capacity(total);
    for (i, f) in files.iter().enumerate() {
        if i > 0 {
            tokens.push(separator);
        }
        tokens.extend_from_slice(f.tokens());
    }
    Ok(Document::new(key, CODE_REPOS_DOMAIN, tokens)?.with_repo_key(key))
}

/// Concatenate every repository in `docs`. Repositories are emitted in order of
/// first appearance; documents without a `repo_key` pass through unchanged.
pub fn group_repos(docs: Vec<Document>, separator: TokenId) -> Result<Vec<Document>> {
    enum Slot {
        Plain(Document),
        Repo(Vec<Document>),
    }
    let mut slots: Vec<Slot> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        match doc.repo_key.clone() {
            None => slots.push(Slot::Plain(doc)),
            Some(key) => match index.get(&key) {
                Some(&i) => match &mut slots[i] {
                    Slot::Repo(files) => files.push(doc),
                    Slot::Plain(_) => unreachable!(),
                },
                None => {
                    index.insert(key, slots.len());
                    slots.push(Slot::Repo(vec![doc]));
                }
            },
        }
    }
    slots
        .into_iter()
        .map(|s| match s {
            Slot::Plain(d) => Ok(d),
            Slot::Repo(files) => concat_repo(&files, separator),
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCensus {
    pub documents: u64,
    pub total_tokens: u64,
    pub long_documents: u64,
    pub long_tokens: u64,
    /// Documents strictly longer than each threshold.
    pub exceeding: Vec<u64>,
}

impl DomainCensus {
    pub fn fractions(&self) -> Vec<f64> {
        self.exceeding
            .iter()
            .map(|&n| if self.documents == 0 { 0.0 } else { n as f64 / self.documents as f64 })
            .collect()
    }

    fn merge(&mut self, other: &DomainCensus) {
        self.documents += other.documents;
        self.total_tokens += other.total_tokens;
        self.long_documents += other.long_documents;
        self.long_tokens += other.long_tokens;
        if self.exceeding.is_empty() {
            self.exceeding = vec![0; other.exceeding.len()];
        }
        for (a, b) in self.exceeding.iter_mut().zip(&other.exceeding) {
            *a += b;
        }
    }
}

/// Per-domain length statistics. Partial censuses merge commutatively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthCensus {
    pub thresholds: Vec<usize>,
    pub long_threshold: usize,
    pub domains: BTreeMap<String, DomainCensus>,
}

impl LengthCensus {
    pub fn new(thresholds: Vec<usize>, long_threshold: usize) -> Result<Self> {
        if thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Invalid(format!("thresholds must be ascending: {thresholds:?}")));
        }
        Ok(Self {
            thresholds,
            long_threshold,
            domains: BTreeMap::new(),
        })
    }

    pub fn observe(&mut self, doc: &Document) {
        self.observe_length(&doc.domain, doc.len());
    }

    pub fn observe_length(&mut self, domain: &str, len: usize) {
        let n = self.thresholds.len();
        let entry = self.domains.entry(domain.to_owned()).or_insert_with(|| DomainCensus {
            exceeding: vec![0; n],
            ..Default::default()
        });
        entry.documents += 1;
        entry.total_tokens += len as u64;
        if len >= self.long_threshold {
            entry.long_documents += 1;
            entry.long_tokens += len as u64;
        }
        for (count, &t) in entry.exceeding.iter_mut().zip(&self.thresholds) {
            if len > t {
                *count += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &LengthCensus) -> Result<()> {
        if self.thresholds != other.thresholds || self.long_threshold != other.long_threshold {
            return Err(Error::Invalid("cannot merge censuses with different thresholds".into()));
        }
        for (domain, dc) in &other.domains {
            self.domains.entry(domain.clone()).or_default().merge(dc);
        }
        Ok(())
    }

    /// All domains pooled together.
    pub fn overall(&self) -> DomainCensus {
        let mut total = DomainCensus {
            exceeding: vec![0; self.thresholds.len()],
            ..Default::default()
        };
        for dc in self.domains.values() {
            total.merge(dc);
        }
        total
    }
}

pub fn census<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    thresholds: Vec<usize>,
    long_threshold: usize,
) -> Result<LengthCensus> {
    let mut c = LengthCensus::new(thresholds, long_threshold)?;
    for d in docs {
        c.observe(d);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespaceTokenizer;

    fn doc(id: &str, len: usize) -> Document {
        Document::new(id, "books", vec![1; len]).unwrap()
    }

    fn file(id: &str, repo: &str, len: usize) -> Document {
        doc(id, len).with_repo_key(repo)
    }

    #[test]
    fn ingest_token_record() {
        let tok = WhitespaceTokenizer::new();
        let input = br#"{"id":"d1","tokens":[5,6,7]}"#;
        let docs: Vec<_> = ingest(&input[..], "books", &tok).collect::<Result<_>>().unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].len(), 3);
        assert_eq!(docs[0].domain, "books");
        assert_eq!(docs[0].tokens(), &[5, 6, 7]);
    }

    #[test]
    fn ingest_text_record_uses_tokenizer() {
        let tok = WhitespaceTokenizer::new();
        let input = br#"{"text":"a b a"}"#;
        let docs: Vec<_> = ingest(&input[..], "web", &tok).collect::<Result<_>>().unwrap();
        assert_eq!(docs[0].len(), 3);
        assert_eq!(docs[0].id, "web-1");
    }

    #[test]
    fn ingest_drops_empty_and_counts() {
        let tok = WhitespaceTokenizer::new();
        let input = "{\"tokens\":[1]}\n{\"tokens\":[]}\n{\"tokens\":[2,3]}\n";
        let mut it = ingest(input.as_bytes(), "books", &tok);
        let docs: Vec<_> = it.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(it.stats().dropped_empty, 1);
        assert_eq!(it.stats().records, 3);
    }

    #[test]
    fn ingest_reports_malformed_line_and_continues() {
        let tok = WhitespaceTokenizer::new();
        let input = "{\"tokens\":[1]}\nnot json\n\n{\"id\":\"x\"}\n{\"tokens\":[4]}\n";
        let mut it = ingest(input.as_bytes(), "books", &tok);
        let items: Vec<_> = it.by_ref().collect();
        assert_eq!(items.len(), 4);
        assert!(matches!(items[1], Err(Error::Record { line: 2, .. })));
        assert!(matches!(items[2], Err(Error::Record { line: 4, .. })));
        assert_eq!(items[3].as_ref().unwrap().tokens(), &[4]);
        assert_eq!(it.stats().malformed, 2);
    }

    #[test]
    fn ingest_source_failure_is_fatal() {
        struct Broken;
        impl std::io::Read for Broken {
            fn read(&mut self, _: &mut [u8]) -> std::io::Result<usize> {
                Err(std::io::Error::other("disk on fire"))
            }
        }
        let tok = WhitespaceTokenizer::new();
        let items: Vec<_> = ingest(std::io::BufReader::new(Broken), "books", &tok).collect();
        assert_eq!(items.len(), 1);
        assert!(matches!(items[0], Err(Error::RawIo(_))));
    }

    #[test]
    fn concat_repo_lengths() {
        let files = [file("a", "r", 10), file("b", "r", 20), file("c", "r", 5)];
        let d = concat_repo(&files, 0).unwrap();
        assert_eq!(d.len(), 37);
        assert_eq!(d.domain, CODE_REPOS_DOMAIN);
        assert_eq!(d.tokens()[10], 0);
        assert_eq!(d.tokens()[31], 0);

        let single = concat_repo(&[file("a", "r", 64)], 0).unwrap();
        assert_eq!(single.len(), 64);
        assert!(!single.tokens().contains(&0));
    }

    #[test]
    fn concat_repo_hundred_files_is_long() {
        let files: Vec<_> = (0..100).map(|i| file(&i.to_string(), "big", 700)).collect();
        let d = concat_repo(&files, 0).unwrap();
        assert_eq!(d.len(), 100 * 700 + 99);
        assert!(d.len() >= LONG_THRESHOLD);
    }

    #[test]
    fn concat_repo_errors() {
        assert!(concat_repo(&[], 0).is_err());
        let mixed = [file("a", "r1", 3), file("b", "r2", 3)];
        assert!(matches!(concat_repo(&mixed, 0), Err(Error::Invalid(m)) if m.contains("mixed")));
    }

    #[test]
    fn group_repos_preserves_first_appearance_order() {
        let docs = vec![
            file("a1", "a", 2),
            doc("plain", 4),
            file("b1", "b", 3),
            file("a2", "a", 5),
        ];
        let out = group_repos(docs, 0).unwrap();
        let ids: Vec<_> = out.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "plain", "b"]);
        assert_eq!(out[0].len(), 2 + 1 + 5);
    }

    #[test]
    fn census_counts() {
        let docs = [doc("a", 70_000), doc("b", 10_000)];
        let c = census(&docs, vec![], LONG_THRESHOLD).unwrap();
        let b = &c.domains["books"];
        assert_eq!(b.long_tokens, 70_000);
        assert_eq!(b.total_tokens, 80_000);

        let docs = [doc("a", 5_000), doc("b", 9_000)];
        let c = census(&docs, vec![4_000, 8_000], LONG_THRESHOLD).unwrap();
        assert_eq!(c.domains["books"].fractions(), vec![1.0, 0.5]);
    }

    #[test]
    fn census_rejects_unsorted_thresholds() {
        assert!(LengthCensus::new(vec![8, 4], 10).is_err());
    }

    #[test]
    fn empty_census_is_zero() {
        let c = census(std::iter::empty(), vec![4096], LONG_THRESHOLD).unwrap();
        assert!(c.domains.is_empty());
        assert_eq!(c.overall().documents, 0);
        assert_eq!(c.overall().fractions(), vec![0.0]);
    }
}
