//! Token-count oracle used when records carry raw text.
//!
//! [`WhitespaceTokenizer`] splits on whitespace, then splits each word into
//! alphanumeric runs and single punctuation characters. Ids are assigned in
//! first-seen order starting at 1; id 0 is reserved for the separator. A
//! whitespace-delimited word of the form `<123>` encodes to the literal id 123,
//! and ids missing from the vocabulary decode to that form, so numeric
//! documents survive a decode/encode round trip.
//!
//! Because the vocabulary grows as text is encoded, the text a given id
//! decodes to depends on what was encoded before. Runs that must reproduce
//! each other (such as a synthetic-data replay) start from the same saved
//! vocabulary.

use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, TokenId};

pub const SEPARATOR_TOKEN: TokenId = 0;

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<TokenId>;

    fn decode(&self, tokens: &[TokenId]) -> String;

    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, TokenId>,
}

#[derive(Debug, Default)]
pub struct WhitespaceTokenizer {
    vocab: RwLock<Vocab>,
}

impl WhitespaceTokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab: Vocab = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("vocabulary {}: {e}", path.display())))?;
        vocab.ids = vocab
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId + 1))
            .collect();
        Ok(Self {
            vocab: RwLock::new(vocab),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let vocab = self.vocab.read().expect("vocab lock poisoned");
        let raw = serde_json::to_string(&*vocab).expect("vocab serializes");
        std::fs::write(path, raw).map_err(|e| Error::io(path, e))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.read().expect("vocab lock poisoned").words.len()
    }

    fn id_for(&self, piece: &str) -> TokenId {
        if let Some(&id) = self.vocab.read().expect("vocab lock poisoned").ids.get(piece) {
            return id;
        }
        let mut vocab = self.vocab.write().expect("vocab lock poisoned");
        if let Some(&id) = vocab.ids.get(piece) {
            return id;
        }
        vocab.words.push(piece.to_owned());
        let id = vocab.words.len() as TokenId;
        vocab.ids.insert(piece.to_owned(), id);
        id
    }
}

/// Split text into the pieces the whitespace tokenizer assigns ids to.
pub fn pieces(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().flat_map(split_word)
}

fn split_word(word: &str) -> Vec<&str> {
    if literal_id(word).is_some() {
        return vec![word];
    }
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in word.char_indices() {
        if c.is_alphanumeric() {
            run_start.get_or_insert(i);
        } else {
            if let Some(s) = run_start.take() {
                out.push(&word[s..i]);
            }
            out.push(&word[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = run_start {
        out.push(&word[s..]);
    }
    out
}

fn literal_id(word: &str) -> Option<TokenId> {
    let digits = word.strip_prefix('<')?.strip_suffix('>')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        pieces(text)
            .map(|p| literal_id(p).unwrap_or_else(|| self.id_for(p)))
            .collect()
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        let vocab = self.vocab.read().expect("vocab lock poisoned");
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match t.checked_sub(1).and_then(|i| vocab.words.get(i as usize)) {
                Some(w) => out.push_str(w),
                None => {
                    out.push('<');
                    out.push_str(&t.to_string());
                    out.push('>');
                }
            }
        }
        out
    }

    fn count(&self, text: &str) -> usize {
        pieces(text).count()
    }
}
