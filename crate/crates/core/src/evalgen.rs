//! Synthetic evaluation inputs: JSON key-value recall and class-balanced
//! in-context learning with numeric labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_id, stream_rng, StreamRng};
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

const HEX: &[u8] = b"0123456789abcdef";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StringFormat {
    /// Lowercase hex of the given length.
    Hex(usize),
    /// 36-character 8-4-4-4-12 hex layout.
    Uuid,
}

impl StringFormat {
    fn generate(&self, rng: &mut StreamRng) -> String {
        let mut hex = |n: usize| -> String { (0..n).map(|_| HEX[rng.random_range(0..16)] as char).collect() };
        match *self {
            StringFormat::Hex(n) => hex(n),
            StringFormat::Uuid => [8, 4, 4, 4, 12].map(&mut hex).join("-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvConfig {
    pub n_pairs: usize,
    pub seed: u64,
    pub key: StringFormat,
    pub value: StringFormat,
}

impl KvConfig {
    pub fn hex(n_pairs: usize, seed: u64) -> Self {
        Self {
            n_pairs,
            seed,
            key: StringFormat::Hex(32),
            value: StringFormat::Hex(32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvTask {
    pub pairs: Vec<(String, String)>,
    pub query_key: String,
    pub gold_value: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_length_target: Option<u64>,
}

impl KvTask {
    /// The haystack: one compact, single-line JSON object in pair order.
    pub fn context_json(&self) -> String {
        let mut out = String::with_capacity(self.pairs.len() * 80);
        out.push('{');
        for (i, (k, v)) in self.pairs.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&serde_json::to_string(k).expect("string serializes"));
            out.push(':');
            out.push_str(&serde_json::to_string(v).expect("string serializes"));
        }
        out.push('}');
        out
    }

    /// Task file line: metadata plus the haystack object.
    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("query_key".into(), self.query_key.clone().into());
        obj.insert("gold_value".into(), self.gold_value.clone().into());
        obj.insert("seed".into(), self.seed.into());
        obj.insert("n_pairs".into(), self.pairs.len().into());
        if let Some(t) = self.context_length_target {
            obj.insert("context_length_target".into(), t.into());
        }
        obj.insert("context".into(), serde_json::Value::String(self.context_json()));
        serde_json::to_string(&obj).expect("task serializes")
    }
}

pub fn gen_kv(cfg: &KvConfig) -> Result<KvTask> {
    if cfg.n_pairs == 0 {
        return Err(Error::Invalid("need at least one key-value pair".into()));
    }
    let mut rng = stream_rng(cfg.seed, stream_id("kv-pairs"));
    let mut seen = HashSet::with_capacity(cfg.n_pairs);
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    while pairs.len() < cfg.n_pairs {
        let key = cfg.key.generate(&mut rng);
        let value = cfg.value.generate(&mut rng);
        if seen.insert(key.clone()) {
            pairs.push((key, value));
        }
    }
    let q = stream_rng(cfg.seed, stream_id("kv-query")).random_range(0..pairs.len());
    let (query_key, gold_value) = pairs[q].clone();
    Ok(KvTask {
        pairs,
        query_key,
        gold_value,
        seed: cfg.seed,
        context_length_target: None,
    })
}

/// Largest task whose haystack fits in `target_tokens` under `tokenizer`.
pub fn fit_kv(target_tokens: u64, cfg: &KvConfig, tokenizer: &dyn Tokenizer) -> Result<KvTask> {
    let count = |n: usize| -> Result<(usize, KvTask)> {
        let task = gen_kv(&KvConfig { n_pairs: n, ..*cfg })?;
        Ok((tokenizer.count(&task.context_json()), task))
    };
    let (c1, mut best) = count(1)?;
    if c1 as u64 > target_tokens {
        return Err(Error::Invalid(format!(
            "a single pair takes {c1} tokens, more than the target {target_tokens}"
        )));
    }
    let (mut lo, mut hi) = (1usize, 2usize);
    loop {
        let (c, task) = count(hi)?;
        if c as u64 > target_tokens {
            break;
        }
        lo = hi;
        best = task;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let (c, task) = count(mid)?;
        if c as u64 <= target_tokens {
            lo = mid;
            best = task;
        } else {
            hi = mid;
        }
    }
    best.context_length_target = Some(target_tokens);
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeled {
    pub input: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub input: String,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclTask {
    /// `classes[i]` is shown to the model as label `i + 1`.
    pub classes: Vec<String>,
    pub demos: Vec<Demo>,
    pub query: String,
    pub gold: u32,
    pub k: usize,
    pub seed: u64,
}

#[derive(Serialize)]
struct IclHeader<'a> {
    kind: &'a str,
    k: usize,
    seed: u64,
    classes: &'a [String],
    query: &'a str,
    gold: u32,
}

impl IclTask {
    pub fn label_of(&self, class: &str) -> Option<u32> {
        self.classes.iter().position(|c| c == class).map(|i| i as u32 + 1)
    }

    /// Metadata header line followed by one line per demonstration.
    pub fn to_jsonl(&self) -> String {
        let header = IclHeader {
            kind: "icl",
            k: self.k,
            seed: self.seed,
            classes: &self.classes,
            query: &self.query,
            gold: self.gold,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for d in &self.demos {
            out.push_str(&serde_json::to_string(d).expect("demo serializes"));
            out.push('\n');
        }
        out
    }

    pub fn render_prompt(&self) -> String {
        let mut out = String::new();
        for d in &self.demos {
            out.push_str(&format!("{}\nlabel: {}\n\n", d.input, d.label));
        }
        out.push_str(&format!("{}\nlabel:", self.query));
        out
    }
}

/// Balanced demonstrations from `train`, query drawn from `queries`.
pub fn gen_icl_split(train: &[Labeled], queries: &[Labeled], k: usize, seed: u64) -> Result<IclTask> {
    if k == 0 {
        return Err(Error::Invalid("k must be positive".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<&Labeled>> = BTreeMap::new();
    for ex in train {
        by_class.entry(ex.label.as_str()).or_default().push(ex);
    }
    if by_class.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Invalid(format!(
            "class {class} has {} examples, fewer than k = {k}",
            members.len()
        )));
    }
    let mut classes: Vec<String> = by_class.keys().map(|c| c.to_string()).collect();
    classes.shuffle(&mut stream_rng(seed, stream_id("icl-labels")));
    let label_of = |c: &str| classes.iter().position(|x| x == c).expect("known class") as u32 + 1;

    let known: BTreeSet<&str> = by_class.keys().copied().collect();
    let eligible: Vec<&Labeled> = queries.iter().filter(|q| known.contains(q.label.as_str())).collect();
    let query = eligible
        .choose(&mut stream_rng(seed, stream_id("icl-query")))
        .ok_or_else(|| Error::Invalid("no query with a known class".into()))?;

    let mut rng = stream_rng(seed, stream_id("icl-demos"));
    let mut demos = Vec::with_capacity(k * by_class.len());
    for (class, members) in &by_class {
        for ex in members.choose_multiple(&mut rng, k) {
            demos.push(Demo {
                input: ex.input.clone(),
                label: label_of(class),
            });
        }
    }
    demos.shuffle(&mut rng);
    Ok(IclTask {
        gold: label_of(&query.label),
        query: query.input.clone(),
        classes,
        demos,
        k,
        seed,
    })
}

/// Hold one example out of `dataset` as the query; demos come from the rest.
pub fn gen_icl(dataset: &[Labeled], k: usize, seed: u64) -> Result<IclTask> {
    if dataset.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let q = stream_rng(seed, stream_id("icl-holdout")).random_range(0..dataset.len());
    let mut rest = dataset.to_vec();
    let query = rest.remove(q);
    gen_icl_split(&rest, std::slice::from_ref(&query), k, seed)
}
