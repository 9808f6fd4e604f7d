//! Packing documents into fixed-length training sequences.
//!
//! Three regimes:
//! - short data: documents are concatenated into `L`-token chunks; the document
//!   that overflows a chunk is split and, with `carry`, its tail opens the next
//!   chunk ([`ShortPacker`]).
//! - long data: documents shorter than `L` are dropped, the rest truncated to
//!   exactly `L` ([`filter_long`]).
//! - SFT data: conversations are concatenated up to `L`; the overflowing
//!   conversation is truncated and its remainder discarded ([`SftPacker`]).
//!
//! Every [`PackedSequence`] carries its document boundaries, which is all a
//! variable-length attention kernel needs to keep attention inside documents.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::{Error, Result, TokenId};

/// Provenance of one document slice inside a packed sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub domain: String,
    pub origin: String,
    /// Offset of the first token of this slice within the source document.
    pub source_offset: usize,
    /// The slice continues a document that was split at an earlier chunk end.
    pub carried: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    tokens: Vec<TokenId>,
    boundaries: Vec<usize>,
    segments: Vec<Segment>,
}

impl PackedSequence {
    pub fn new(tokens: Vec<TokenId>, boundaries: Vec<usize>, segments: Vec<Segment>) -> Result<Self> {
        let invalid = |m: String| Err(Error::Invalid(format!("packed sequence: {m}")));
        if tokens.is_empty() {
            return invalid("no tokens".into());
        }
        if boundaries.first() != Some(&0) || boundaries.last() != Some(&tokens.len()) {
            return invalid(format!("boundaries must run from 0 to {}", tokens.len()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("boundaries must be strictly increasing".into());
        }
        if segments.len() + 1 != boundaries.len() {
            return invalid(format!(
                "{} segments for {} boundaries",
                segments.len(),
                boundaries.len()
            ));
        }
        Ok(Self {
            tokens,
            boundaries,
            segments,
        })
    }

    /// Wrap a whole document as a one-segment sequence.
    pub fn single(doc: Document) -> Self {
        let segment = Segment {
            domain: doc.domain.clone(),
            origin: doc.id.clone(),
            source_offset: 0,
            carried: false,
        };
        let tokens = doc.into_tokens();
        let len = tokens.len();
        Self {
            tokens,
            boundaries: vec![0, len],
            segments: vec![segment],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundaries.windows(2).map(|w| w[1] - w[0])
    }

    pub fn segment_tokens(&self, i: usize) -> &[TokenId] {
        &self.tokens[self.boundaries[i]..self.boundaries[i + 1]]
    }

    /// Domain of the first segment; long-data sequences have exactly one.
    pub fn domain(&self) -> &str {
        &self.segments[0].domain
    }

    pub fn origin_ids(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.origin.as_str())
    }
}

/// Cumulative segment offsets for variable-length attention.
pub fn cu_seqlens(seq: &PackedSequence) -> &[usize] {
    seq.boundaries()
}

/// Whether tokens `i` and `j` may attend to each other under document masking.
pub fn same_segment(cu_seqlens: &[usize], i: usize, j: usize) -> bool {
    let segment_of = |t: usize| cu_seqlens.partition_point(|&b| b <= t);
    segment_of(i) == segment_of(j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackConfig {
    pub length: usize,
    pub carry: bool,
    /// Appended to every document before packing when set.
    pub separator: Option<TokenId>,
}

impl PackConfig {
    pub fn new(length: usize, carry: bool) -> Self {
        Self {
            length,
            carry,
            separator: None,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackStats {
    pub input_documents: u64,
    pub input_tokens: u64,
    pub emitted_sequences: u64,
    pub emitted_tokens: u64,
    /// Tokens emitted as continuations of a document split at a chunk end.
    pub carried_tokens: u64,
    pub split_documents: u64,
    /// Tail tokens dropped because carry was off.
    pub discarded_tail_tokens: u64,
    /// Tokens left in the unfinished chunk at end of stream.
    pub final_partial_tokens: u64,
}

/// Greedy in-order packer for short documents.
pub struct ShortPacker {
    cfg: PackConfig,
    tokens: Vec<TokenId>,
    boundaries: Vec<usize>,
    segments: Vec<Segment>,
    stats: PackStats,
}

impl ShortPacker {
    pub fn new(cfg: PackConfig) -> Result<Self> {
        if cfg.length == 0 {
            return Err(Error::Invalid("pack length must be at least 1".into()));
        }
        Ok(Self {
            cfg,
            tokens: Vec::with_capacity(cfg.length),
            boundaries: vec![0],
            segments: Vec::new(),
            stats: PackStats::default(),
        })
    }

    pub fn stats(&self) -> PackStats {
        self.stats
    }

    /// Tokens buffered in the chunk currently being filled.
    pub fn pending(&self) -> usize {
        self.tokens.len()
    }

    pub fn pending_boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Add one document; returns the chunks it completed.
    pub fn push(&mut self, doc: &Document) -> Vec<PackedSequence> {
        let mut out = Vec::new();
        let mut buf;
        let data: &[TokenId] = match self.cfg.separator {
            Some(sep) => {
                buf = Vec::with_capacity(doc.len() + 1);
                buf.extend_from_slice(doc.tokens());
                buf.push(sep);
                &buf
            }
            None => doc.tokens(),
        };
        let n = data.len();
        let l = self.cfg.length;
        self.stats.input_documents += 1;
        self.stats.input_tokens += n as u64;

        let mut offset = 0;
        while offset < n {
            let take = (l - self.tokens.len()).min(n - offset);
            self.append(doc, &data[offset..offset + take], offset);
            offset += take;
            if self.tokens.len() == l {
                out.push(self.flush());
            }
            if offset < n && offset == take {
                self.stats.split_documents += 1;
            }
            if offset < n && !self.cfg.carry {
                while n - offset >= l {
                    self.append(doc, &data[offset..offset + l], offset);
                    out.push(self.flush());
                    offset += l;
                }
                self.stats.discarded_tail_tokens += (n - offset) as u64;
                break;
            }
        }
        out
    }

    fn append(&mut self, doc: &Document, slice: &[TokenId], offset: usize) {
        let carried = offset > 0;
        if carried {
            self.stats.carried_tokens += slice.len() as u64;
        }
        self.tokens.extend_from_slice(slice);
        self.boundaries.push(self.tokens.len());
        self.segments.push(Segment {
            domain: doc.domain.clone(),
            origin: doc.id.clone(),
            source_offset: offset,
            carried,
        });
    }

    fn flush(&mut self) -> PackedSequence {
        let seq = PackedSequence {
            tokens: std::mem::replace(&mut self.tokens, Vec::with_capacity(self.cfg.length)),
            boundaries: std::mem::replace(&mut self.boundaries, vec![0]),
            segments: std::mem::take(&mut self.segments),
        };
        self.stats.emitted_sequences += 1;
        self.stats.emitted_tokens += seq.len() as u64;
        seq
    }

    /// End the stream. The unfinished chunk is discarded and counted.
    pub fn finish(mut self) -> PackStats {
        self.stats.final_partial_tokens += self.tokens.len() as u64;
        self.stats
    }
}

pub fn pack_short<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    cfg: PackConfig,
) -> Result<(Vec<PackedSequence>, PackStats)> {
    let mut packer = ShortPacker::new(cfg)?;
    let mut out = Vec::new();
    for d in docs {
        out.extend(packer.push(d));
    }
    Ok((out, packer.finish()))
}

/// Keeps documents with at least `length` tokens, truncated to exactly `length`.
pub struct FilterLong<I> {
    inner: I,
    length: usize,
    kept: u64,
    filtered: u64,
    truncated_tokens: u64,
}

pub fn filter_long<I: Iterator<Item = Document>>(docs: I, length: usize) -> FilterLong<I> {
    assert!(length >= 1, "target length must be at least 1");
    FilterLong {
        inner: docs,
        length,
        kept: 0,
        filtered: 0,
        truncated_tokens: 0,
    }
}

impl<I> FilterLong<I> {
    pub fn kept(&self) -> u64 {
        self.kept
    }

    pub fn filtered(&self) -> u64 {
        self.filtered
    }

    pub fn truncated_tokens(&self) -> u64 {
        self.truncated_tokens
    }
}

impl<I: Iterator<Item = Document>> Iterator for FilterLong<I> {
    type Item = Document;

    fn next(&mut self) -> Option<Document> {
        for mut doc in self.inner.by_ref() {
            if doc.len() < self.length {
                self.filtered += 1;
                continue;
            }
            self.truncated_tokens += (doc.len() - self.length) as u64;
            doc.truncate(self.length);
            self.kept += 1;
            return Some(doc);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[serde(alias = "user", alias = "system", alias = "prompt")]
    Instruction,
    #[serde(alias = "assistant")]
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.turns.iter().map(|t| t.tokens.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_response(&self) -> bool {
        self.turns
            .iter()
            .any(|t| t.role == Role::Response && !t.tokens.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSpan {
    pub role: Role,
    pub start: usize,
    pub end: usize,
}

/// Instruction-tuning example; loss is taken only on response tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub tokens: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    pub turn_spans: Vec<TurnSpan>,
    /// Conversation boundaries, in the same form as [`cu_seqlens`].
    pub boundaries: Vec<usize>,
    pub origins: Vec<String>,
}

impl SftExample {
    fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            loss_mask: Vec::new(),
            turn_spans: Vec::new(),
            boundaries: vec![0],
            origins: Vec::new(),
        }
    }

    /// A single-conversation example built from `(role, tokens)` turns.
    pub fn from_turns(origin: &str, turns: &[(Role, &[TokenId])]) -> Self {
        let mut ex = Self::empty();
        for (role, tokens) in turns {
            ex.push_turn(*role, tokens);
        }
        ex.close_conversation(origin);
        ex
    }

    fn push_turn(&mut self, role: Role, tokens: &[TokenId]) {
        if tokens.is_empty() {
            return;
        }
        let start = self.tokens.len();
        self.tokens.extend_from_slice(tokens);
        self.loss_mask
            .extend(std::iter::repeat_n(role == Role::Response, tokens.len()));
        self.turn_spans.push(TurnSpan {
            role,
            start,
            end: self.tokens.len(),
        });
    }

    fn close_conversation(&mut self, origin: &str) {
        self.boundaries.push(self.tokens.len());
        self.origins.push(origin.to_owned());
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn loss_tokens(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftStats {
    pub conversations: u64,
    pub rejected: u64,
    pub emitted_examples: u64,
    pub emitted_tokens: u64,
    pub truncated_conversations: u64,
    pub discarded_tokens: u64,
    /// Batches or truncated heads dropped for having no response tokens.
    pub dropped_no_loss: u64,
}

pub struct SftPacker {
    length: usize,
    cur: SftExample,
    stats: SftStats,
}

impl SftPacker {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::Invalid("pack length must be at least 1".into()));
        }
        Ok(Self {
            length,
            cur: SftExample::empty(),
            stats: SftStats::default(),
        })
    }

    pub fn stats(&self) -> SftStats {
        self.stats
    }

    pub fn push(&mut self, conv: &Conversation) -> Result<Vec<SftExample>> {
        if !conv.has_response() {
            self.stats.rejected += 1;
            return Err(Error::Invalid(format!(
                "conversation {} has no response turn",
                conv.id
            )));
        }
        self.stats.conversations += 1;
        let mut out = Vec::new();
        let space = self.length - self.cur.len();
        let n = conv.len();
        if n <= space {
            self.append(conv, n);
        } else {
            self.stats.truncated_conversations += 1;
            self.stats.discarded_tokens += (n - space) as u64;
            let head_has_response = {
                let mut seen = 0;
                conv.turns.iter().any(|t| {
                    let start = seen;
                    seen += t.tokens.len();
                    t.role == Role::Response && !t.tokens.is_empty() && start < space
                })
            };
            if head_has_response {
                self.append(conv, space);
            } else {
                self.stats.dropped_no_loss += 1;
                self.stats.discarded_tokens += space as u64;
            }
            if let Some(ex) = self.flush() {
                out.push(ex);
            }
        }
        if self.cur.len() == self.length {
            out.extend(self.flush());
        }
        Ok(out)
    }

    fn append(&mut self, conv: &Conversation, limit: usize) {
        let mut left = limit;
        for t in &conv.turns {
            let take = t.tokens.len().min(left);
            self.cur.push_turn(t.role, &t.tokens[..take]);
            left -= take;
            if left == 0 {
                break;
            }
        }
        self.cur.close_conversation(&conv.id);
    }

    fn flush(&mut self) -> Option<SftExample> {
        let ex = std::mem::replace(&mut self.cur, SftExample::empty());
        if ex.is_empty() {
            return None;
        }
        if ex.loss_tokens() == 0 {
            self.stats.dropped_no_loss += 1;
            return None;
        }
        self.stats.emitted_examples += 1;
        self.stats.emitted_tokens += ex.len() as u64;
        Some(ex)
    }

    /// End the stream. A final batch below capacity is still emitted.
    pub fn finish(mut self) -> (Option<SftExample>, SftStats) {
        let last = self.flush();
        (last, self.stats)
    }
}

/// Pack conversations; rejected conversations are returned alongside.
pub fn pack_sft<'a>(
    convs: impl IntoIterator<Item = &'a Conversation>,
    length: usize,
) -> Result<(Vec<SftExample>, Vec<Error>, SftStats)> {
    let mut packer = SftPacker::new(length)?;
    let mut out = Vec::new();
    let mut rejected = Vec::new();
    for c in convs {
        match packer.push(c) {
            Ok(done) => out.extend(done),
            Err(e) => rejected.push(e),
        }
    }
    let (last, stats) = packer.finish();
    out.extend(last);
    Ok((out, rejected, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: usize = 1024;

    fn doc(id: &str, len: usize) -> Document {
        let tokens = (0..len as u32).map(|i| i % 50_000 + 1).collect();
        Document::new(id, "web", tokens).unwrap()
    }

    fn conv(id: &str, parts: &[(Role, usize)]) -> Conversation {
        Conversation {
            id: id.into(),
            turns: parts
                .iter()
                .map(|&(role, n)| Turn {
                    role,
                    tokens: vec![if role == Role::Response { 2 } else { 1 }; n],
                })
                .collect(),
        }
    }

    #[test]
    fn carry_rule_hand_simulated() {
        let docs = [doc("d1", 30 * K), doc("d2", 40 * K), doc("d3", 10 * K), doc("d4", 24 * K)];
        let mut packer = ShortPacker::new(PackConfig::new(64 * K, true)).unwrap();
        let mut out = Vec::new();
        for d in &docs {
            out.extend(packer.push(d));
        }
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].boundaries(), &[0, 30 * K, 64 * K]);
        assert_eq!(out[0].segments()[1].origin, "d2");
        assert_eq!(packer.pending_boundaries(), &[0, 6 * K, 16 * K, 40 * K]);
        let stats = packer.finish();
        assert_eq!(stats.final_partial_tokens, 40 * K as u64);
        assert_eq!(stats.carried_tokens, 6 * K as u64);
    }

    #[test]
    fn carried_tail_opens_next_chunk() {
        let docs = [doc("a", 30), doc("b", 40), doc("c", 30)];
        let (out, stats) = pack_short(&docs, PackConfig::new(64, true)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(stats.final_partial_tokens, 36);
        let docs = [doc("a", 30), doc("b", 40), doc("c", 60)];
        let (out, _) = pack_short(&docs, PackConfig::new(64, true)).unwrap();
        let second = &out[1];
        assert_eq!(second.boundaries(), &[0, 6, 64]);
        assert!(second.segments()[0].carried);
        assert_eq!(second.segments()[0].source_offset, 34);
        assert_eq!(second.segment_tokens(0), &docs[1].tokens()[34..]);
    }

    #[test]
    fn exact_fit() {
        let (out, stats) = pack_short(&[doc("a", 64 * K)], PackConfig::new(64 * K, true)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].boundaries(), &[0, 64 * K]);
        assert_eq!(stats.final_partial_tokens, 0);
    }

    #[test]
    fn discard_rule_hand_simulated() {
        let docs = [doc("d1", 30 * K), doc("d2", 40 * K)];
        let (out, stats) = pack_short(&docs, PackConfig::new(64 * K, false)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(stats.discarded_tail_tokens, 6 * K as u64);
        assert_eq!(stats.final_partial_tokens, 0);
    }

    #[test]
    fn overlong_document_without_carry_splits_into_full_pieces() {
        let (out, stats) = pack_short(&[doc("big", 200)], PackConfig::new(64, false)).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(stats.discarded_tail_tokens, 8);
        assert_eq!(out[2].segments()[0].source_offset, 128);
    }

    #[test]
    fn overlong_document_with_carry_wastes_nothing_but_the_tail_chunk() {
        let (out, stats) = pack_short(&[doc("big", 200), doc("x", 56)], PackConfig::new(64, true)).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[3].boundaries(), &[0, 8, 64]);
        assert_eq!(stats.emitted_tokens, 256);
        assert_eq!(stats.split_documents, 1);
    }

    #[test]
    fn separator_is_appended_per_document() {
        let cfg = PackConfig {
            separator: Some(0),
            ..PackConfig::new(8, true)
        };
        let (out, _) = pack_short(&[doc("a", 3), doc("b", 3)], cfg).unwrap();
        assert_eq!(out[0].tokens(), &[1, 2, 3, 0, 1, 2, 3, 0]);
        assert_eq!(out[0].boundaries(), &[0, 4, 8]);
    }

    #[test]
    fn zero_length_rejected() {
        assert!(ShortPacker::new(PackConfig::new(0, true)).is_err());
        assert!(SftPacker::new(0).is_err());
    }

    #[test]
    fn filter_long_thresholds_and_truncates() {
        let docs = vec![doc("a", 63 * K), doc("b", 64 * K), doc("c", 100 * K)];
        let mut it = filter_long(docs.into_iter(), 64 * K);
        let out: Vec<_> = it.by_ref().collect();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|d| d.len() == 64 * K));
        assert_eq!(it.filtered(), 1);
        assert_eq!(filter_long(std::iter::empty(), 64 * K).count(), 0);
        let big = filter_long(vec![doc("x", 512 * K)].into_iter(), 512 * K).collect::<Vec<_>>();
        assert_eq!(big[0].len(), 512 * K);
    }

    #[test]
    fn cu_seqlens_prefix_sums() {
        let docs = [doc("a", 3), doc("b", 2), doc("c", 4)];
        let (out, _) = pack_short(&docs, PackConfig::new(9, true)).unwrap();
        assert_eq!(cu_seqlens(&out[0]), &[0, 3, 5, 9]);
        let single = PackedSequence::single(doc("x", 17));
        assert_eq!(cu_seqlens(&single), &[0, 17]);
        let docs: Vec<_> = (0..64).map(|i| doc(&i.to_string(), K)).collect();
        let (out, _) = pack_short(&docs, PackConfig::new(64 * K, true)).unwrap();
        let cu = cu_seqlens(&out[0]);
        assert_eq!(cu.len(), 65);
        assert_eq!(*cu.last().unwrap(), 65_536);
    }

    #[test]
    fn same_segment_respects_boundaries() {
        let cu = [0, 3, 5, 9];
        assert!(same_segment(&cu, 0, 2));
        assert!(!same_segment(&cu, 2, 3));
        assert!(same_segment(&cu, 3, 4));
        assert!(same_segment(&cu, 8, 5));
    }

    #[test]
    fn packed_sequence_validation() {
        let seg = || Segment {
            domain: "d".into(),
            origin: "o".into(),
            source_offset: 0,
            carried: false,
        };
        assert!(PackedSequence::new(vec![1, 2], vec![0, 2], vec![seg()]).is_ok());
        assert!(PackedSequence::new(vec![1, 2], vec![0, 1], vec![seg()]).is_err());
        assert!(PackedSequence::new(vec![1, 2], vec![0, 0, 2], vec![seg(), seg()]).is_err());
        assert!(PackedSequence::new(vec![1, 2], vec![0, 1, 2], vec![seg()]).is_err());
    }

    #[test]
    fn sft_packs_below_capacity() {
        use Role::*;
        let convs = [
            conv("c1", &[(Instruction, 700), (Response, 500)]),
            conv("c2", &[(Instruction, 600), (Response, 600)]),
        ];
        let (out, rejected, _) = pack_sft(&convs, 4 * K).unwrap();
        assert!(rejected.is_empty());
        assert_eq!(out.len(), 1);
        let ex = &out[0];
        assert_eq!(ex.len(), 2400);
        assert_eq!(ex.boundaries, vec![0, 1200, 2400]);
        for span in &ex.turn_spans {
            let want = span.role == Response;
            assert!(ex.loss_mask[span.start..span.end].iter().all(|&m| m == want));
            assert!(ex.tokens[span.start..span.end].iter().all(|&t| (t == 2) == want));
        }
        assert_eq!(ex.loss_tokens(), 1100);
    }

    #[test]
    fn sft_overflow_truncates_and_discards() {
        use Role::*;
        let l = 4 * K;
        let convs = [conv("big", &[(Instruction, 100), (Response, l - 90)])];
        let (out, _, stats) = pack_sft(&convs, l).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), l);
        assert_eq!(stats.discarded_tokens, 10);
    }

    #[test]
    fn sft_rejects_instruction_only() {
        use Role::*;
        let convs = [conv("bad", &[(Instruction, 10), (Instruction, 5)]), conv("ok", &[(Instruction, 1), (Response, 1)])];
        let (out, rejected, stats) = pack_sft(&convs, 64).unwrap();
        assert_eq!(rejected.len(), 1);
        assert_eq!(out.len(), 1);
        assert_eq!(stats.rejected, 1);
    }

    #[test]
    fn sft_truncated_head_without_response_is_dropped() {
        use Role::*;
        let convs = [
            conv("a", &[(Instruction, 5), (Response, 5)]),
            conv("b", &[(Instruction, 20), (Response, 5)]),
        ];
        let (out, _, stats) = pack_sft(&convs, 16).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 10);
        assert_eq!(stats.dropped_no_loss, 1);
        assert_eq!(stats.discarded_tokens, 25);
    }
}
