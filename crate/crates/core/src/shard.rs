//! Binary shard formats. All integers are little-endian.
//!
//! Document shard (`.docs`):
//!
//! ```text
//! magic      [u8; 8]  "LMDOCS01"
//! count      u64      number of documents
//! repeated count times:
//!   id       u16 length + UTF-8 bytes
//!   domain   u16 length + UTF-8 bytes
//!   repo_key u16 length + UTF-8 bytes (length 0xFFFF = absent)
//!   n_tokens u32
//!   tokens   n_tokens x u32
//! ```
//!
//! Sequence shard (`.seqs`):
//!
//! ```text
//! magic        [u8; 8]  "LMSEQS01"
//! pack_length  u32      length of every sequence in the shard
//! reserved     u32      zero
//! count        u64      number of sequences
//! domain_table u64      byte offset of the domain table
//! repeated count times:
//!   n_segments u32
//!   tokens     pack_length x u32
//!   boundaries (n_segments + 1) x u32
//!   repeated n_segments times:
//!     domain_index  u16   index into the domain table
//!     flags         u8    bit 0: carried tail
//!     reserved      u8
//!     source_offset u32
//!     origin        u16 length + UTF-8 bytes
//! domain table:
//!   n_domains u32
//!   repeated: u16 length + UTF-8 bytes
//! ```
//!
//! Writers patch the header counts on [`DocWriter::finish`] /
//! [`SeqWriter::finish`], so they need a seekable sink.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::corpus::Document;
use crate::packer::{PackedSequence, Segment};
use crate::{Error, Result, TokenId};

pub const DOC_MAGIC: &[u8; 8] = b"LMDOCS01";
pub const SEQ_MAGIC: &[u8; 8] = b"LMSEQS01";
const NO_REPO_KEY: u16 = u16::MAX;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .ok()
        .filter(|&l| l != NO_REPO_KEY)
        .ok_or_else(|| Error::Shard(format!("string too long for shard: {} bytes", s.len())))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_tokens<W: Write>(w: &mut W, tokens: &[TokenId]) -> Result<()> {
    let mut buf = Vec::with_capacity(tokens.len() * 4);
    for t in tokens {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Input<R> {
    r: R,
}

impl<R: Read> Input<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r
            .read_exact(&mut b)
            .map_err(|e| Error::Shard(format!("truncated shard: {e}")))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.exact::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.exact()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.r
            .read_exact(&mut b)
            .map_err(|e| Error::Shard(format!("truncated shard: {e}")))?;
        Ok(b)
    }

    fn string_of_len(&mut self, len: u16) -> Result<String> {
        String::from_utf8(self.bytes(len as usize)?).map_err(|e| Error::Shard(format!("invalid utf-8: {e}")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()?;
        self.string_of_len(len)
    }

    fn tokens(&mut self, n: usize) -> Result<Vec<TokenId>> {
        let raw = self.bytes(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub struct DocWriter<W: Write + Seek> {
    w: W,
    count: u64,
}

impl DocWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(f))
    }
}

impl<W: Write + Seek> DocWriter<W> {
    pub fn new(mut w: W) -> Result<Self> {
        w.write_all(DOC_MAGIC)?;
        w.write_all(&0u64.to_le_bytes())?;
        Ok(Self { w, count: 0 })
    }

    pub fn write(&mut self, doc: &Document) -> Result<()> {
        write_str(&mut self.w, &doc.id)?;
        write_str(&mut self.w, &doc.domain)?;
        match &doc.repo_key {
            Some(k) => write_str(&mut self.w, k)?,
            None => self.w.write_all(&NO_REPO_KEY.to_le_bytes())?,
        }
        let n = u32::try_from(doc.len()).map_err(|_| Error::Shard("document too long".into()))?;
        self.w.write_all(&n.to_le_bytes())?;
        write_tokens(&mut self.w, doc.tokens())?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.w.seek(SeekFrom::Start(8))?;
        self.w.write_all(&self.count.to_le_bytes())?;
        self.w.seek(SeekFrom::End(0))?;
        self.w.flush()?;
        Ok(self.w)
    }
}

pub struct DocReader<R: Read> {
    input: Input<R>,
    remaining: u64,
}

impl DocReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(f))
    }
}

impl<R: Read> DocReader<R> {
    pub fn new(r: R) -> Result<Self> {
        let mut input = Input { r };
        if &input.exact::<8>()? != DOC_MAGIC {
            return Err(Error::Shard("not a document shard".into()));
        }
        let remaining = input.u64()?;
        Ok(Self { input, remaining })
    }

    pub fn len(&self) -> u64 {
        self.remaining
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }

    fn read_doc(&mut self) -> Result<Document> {
        let id = self.input.string()?;
        let domain = self.input.string()?;
        let key_len = self.input.u16()?;
        let repo_key = if key_len == NO_REPO_KEY {
            None
        } else {
            Some(self.input.string_of_len(key_len)?)
        };
        let n = self.input.u32()? as usize;
        let tokens = self.input.tokens(n)?;
        let mut doc = Document::new(id, domain, tokens)?;
        doc.repo_key = repo_key;
        Ok(doc)
    }
}

impl<R: Read> Iterator for DocReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let doc = self.read_doc();
        if doc.is_err() {
            self.remaining = 0;
        }
        Some(doc)
    }
}

pub fn read_docs(path: &Path) -> Result<Vec<Document>> {
    DocReader::open(path)?.collect()
}

pub fn write_docs<'a>(path: &Path, docs: impl IntoIterator<Item = &'a Document>) -> Result<u64> {
    let mut w = DocWriter::create(path)?;
    for d in docs {
        w.write(d)?;
    }
    let n = w.count;
    w.finish()?;
    Ok(n)
}

pub struct SeqWriter<W: Write + Seek> {
    w: W,
    pack_length: usize,
    count: u64,
    pos: u64,
    domains: Vec<String>,
    domain_index: HashMap<String, u16>,
}

impl SeqWriter<BufWriter<File>> {
    pub fn create(path: &Path, pack_length: usize) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(f), pack_length)
    }
}

impl<W: Write + Seek> SeqWriter<W> {
    pub fn new(mut w: W, pack_length: usize) -> Result<Self> {
        let l = u32::try_from(pack_length).map_err(|_| Error::Shard("pack length too large".into()))?;
        w.write_all(SEQ_MAGIC)?;
        w.write_all(&l.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&0u64.to_le_bytes())?;
        w.write_all(&0u64.to_le_bytes())?;
        Ok(Self {
            w,
            pack_length,
            count: 0,
            pos: 32,
            domains: Vec::new(),
            domain_index: HashMap::new(),
        })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn write(&mut self, seq: &PackedSequence) -> Result<()> {
        if seq.len() != self.pack_length {
            return Err(Error::Shard(format!(
                "sequence of {} tokens in a shard of length {}",
                seq.len(),
                self.pack_length
            )));
        }
        let mut buf = Vec::with_capacity(seq.len() * 4 + 64);
        buf.extend_from_slice(&(seq.segments().len() as u32).to_le_bytes());
        write_tokens(&mut buf, seq.tokens())?;
        for &b in seq.boundaries() {
            buf.extend_from_slice(&(b as u32).to_le_bytes());
        }
        for s in seq.segments() {
            let idx = match self.domain_index.get(&s.domain) {
                Some(&i) => i,
                None => {
                    let i = u16::try_from(self.domains.len())
                        .map_err(|_| Error::Shard("too many domains".into()))?;
                    self.domains.push(s.domain.clone());
                    self.domain_index.insert(s.domain.clone(), i);
                    i
                }
            };
            buf.extend_from_slice(&idx.to_le_bytes());
            buf.push(u8::from(s.carried));
            buf.push(0);
            let off = u32::try_from(s.source_offset).map_err(|_| Error::Shard("source offset too large".into()))?;
            buf.extend_from_slice(&off.to_le_bytes());
            write_str(&mut buf, &s.origin)?;
        }
        self.w.write_all(&buf)?;
        self.pos += buf.len() as u64;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        let table = self.pos;
        self.w.write_all(&(self.domains.len() as u32).to_le_bytes())?;
        for d in &self.domains {
            write_str(&mut self.w, d)?;
        }
        self.w.seek(SeekFrom::Start(16))?;
        self.w.write_all(&self.count.to_le_bytes())?;
        self.w.write_all(&table.to_le_bytes())?;
        self.w.seek(SeekFrom::End(0))?;
        self.w.flush()?;
        Ok(self.w)
    }
}

pub struct SeqShard {
    pub pack_length: usize,
    pub sequences: Vec<PackedSequence>,
}

/// Read a whole sequence shard into memory.
pub fn read_seqs_from<R: Read + Seek>(mut r: R) -> Result<SeqShard> {
    let mut input = Input { r: &mut r };
    if &input.exact::<8>()? != SEQ_MAGIC {
        return Err(Error::Shard("not a sequence shard".into()));
    }
    let pack_length = input.u32()? as usize;
    let _reserved = input.u32()?;
    let count = input.u64()?;
    let table = input.u64()?;

    r.seek(SeekFrom::Start(table))?;
    let mut input = Input { r: &mut r };
    let n_domains = input.u32()?;
    let domains = (0..n_domains).map(|_| input.string()).collect::<Result<Vec<_>>>()?;

    r.seek(SeekFrom::Start(32))?;
    let mut input = Input { r: &mut r };
    let mut sequences = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n_segments = input.u32()? as usize;
        let tokens = input.tokens(pack_length)?;
        let boundaries = (0..=n_segments)
            .map(|_| input.u32().map(|b| b as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut segments = Vec::with_capacity(n_segments);
        for _ in 0..n_segments {
            let idx = input.u16()? as usize;
            let flags = input.u8()?;
            let _ = input.u8()?;
            let source_offset = input.u32()? as usize;
            let origin = input.string()?;
            let domain = domains
                .get(idx)
                .ok_or_else(|| Error::Shard(format!("domain index {idx} out of range")))?
                .clone();
            segments.push(Segment {
                domain,
                origin,
                source_offset,
                carried: flags & 1 == 1,
            });
        }
        sequences.push(PackedSequence::new(tokens, boundaries, segments).map_err(|e| Error::Shard(e.to_string()))?);
    }
    Ok(SeqShard {
        pack_length,
        sequences,
    })
}

pub fn read_seqs(path: &Path) -> Result<SeqShard> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_seqs_from(BufReader::new(f))
}

pub fn write_seqs<'a>(
    path: &Path,
    pack_length: usize,
    seqs: impl IntoIterator<Item = &'a PackedSequence>,
) -> Result<u64> {
    let mut w = SeqWriter::create(path, pack_length)?;
    for s in seqs {
        w.write(s)?;
    }
    let n = w.count();
    w.finish()?;
    Ok(n)
}
