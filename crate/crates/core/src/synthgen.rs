//! Synthetic long-context SFT examples: QA, RAG and summarization.
//!
//! Every call to the generation service goes through a [`SynthGenerator`],
//! which records `(kind, doc id, seed, prompt, response)` in a [`RequestLog`].
//! Replaying a log with [`ReplayClient`] reproduces every example byte for
//! byte without contacting the service.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::manifest::sha256_hex;
use crate::mixer::Exhaustion;
use crate::packer::{Role, SftExample};
use crate::rng::{stream_id, stream_rng};
use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

/// Default QA-generation prompt. `{snippet}` receives the sampled chunk.
pub const QA_GENERATION_PROMPT: &str = "Given the following snippet of a book, ask a relevant question and provide the answer. The question and the answer should follow the following rules:

(1) The question should be specific enough that it can only be answered with the snippet. The question should also be interesting and intellectual enough that a curious reader of the book would ask about it.
(2) The question and the answer should be comprehensible given just the whole book without highlighting the snippet. With that being said, the question should NOT refer to the snippet directly (e.g., do NOT say things like \"Question: given the conversation in the snippet, what ...\"). The answer also should not mention \"the snippet ...\" explicitly (assuming that the snippet is never provided), but it can copy the snippet content as a reference when answering the question.
(3) The answer should be concise but also should provide references to the book when needed. For example, \"Wellington Yueh betrayed the Atreides, as the book mentioned, '...'\".

*** Start of the snippet ***

{snippet}

*** End of the snippet ***

Before generating the question and the answer, first reason about what this snippet is about. In your generation, stick to the following format:

Reasoning: this snippet is about ...
Question: ...
Answer: ...";

pub const SNIPPET_START: &str = "*** Start of the snippet ***\n\n";
pub const SNIPPET_END: &str = "\n\n*** End of the snippet ***";

pub const QUESTION_PROMPTS: [&str; 6] = [
    "Given the document, please answer the question.",
    "Here is a piece of text; answer the following question based on it.",
    "Please answer the question using the provided content.",
    "Based on the given passage, respond to the question.",
    "Read the snippet and answer the question that follows.",
    "Using the provided text, answer the following question.",
];

pub const QA_LAYOUTS: [&str; 6] = [
    "{prompt}\n\n{documents}\n\nQuestion: {question}",
    "{prompt}\n\n==== document starts ====\n{documents}\n==== document ends ====\n\nQuestion: {question}",
    "{prompt}\n\n{documents}\n\n{question}",
    "{prompt} Question: {question}\n\n{documents}",
    "{prompt} {question}\n\n{documents}",
    "{prompt}\n\n{question}\n\n{documents}",
];

pub const SUMMARY_PROMPTS: [&str; 4] = [
    "Summarize the following book.",
    "Write a summary of the text below.",
    "Please provide a concise summary of the following document.",
    "Read the document and summarize it.",
];

pub const SUMMARY_LAYOUTS: [&str; 2] = [
    "{prompt}\n\n{documents}",
    "{documents}\n\n{prompt}",
];

const LEAF_SUMMARY_PROMPT: &str = "Summarize the following part of a book in a few paragraphs.\n\n";
const MERGE_SUMMARY_PROMPT: &str =
    "The following are consecutive summaries of parts of a book. Combine them into a single coherent summary.\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Prompt,
    Documents,
    Question,
}

/// A question prompt paired with a layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub prompt: String,
    pub layout: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, layout: impl Into<String>) -> Result<Self> {
        let t = Self {
            id: id.into(),
            prompt: prompt.into(),
            layout: layout.into(),
        };
        t.parse()?;
        Ok(t)
    }

    /// Sample one question prompt and one layout.
    pub fn sample(prompts: &[&str], layouts: &[&str], seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, stream_id("template"));
        let p = rng.random_range(0..prompts.len());
        let l = rng.random_range(0..layouts.len());
        Self::new(format!("p{p}-l{l}"), prompts[p], layouts[l])
    }

    fn parse(&self) -> Result<Vec<std::result::Result<&str, Slot>>> {
        let mut parts = Vec::new();
        let mut rest = self.layout.as_str();
        let mut counts = [0usize; 3];
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or_else(|| Error::Invalid(format!("template {}: unclosed placeholder", self.id)))?;
            if open > 0 {
                parts.push(Ok(&rest[..open]));
            }
            let slot = match &rest[open + 1..close] {
                "prompt" => Slot::Prompt,
                "documents" => Slot::Documents,
                "question" => Slot::Question,
                other => {
                    return Err(Error::Invalid(format!(
                        "template {}: unknown placeholder {{{other}}}",
                        self.id
                    )))
                }
            };
            counts[slot as usize] += 1;
            parts.push(Err(slot));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            parts.push(Ok(rest));
        }
        if counts[Slot::Documents as usize] != 1 {
            return Err(Error::Invalid(format!(
                "template {}: {{documents}} must appear exactly once",
                self.id
            )));
        }
        if counts.iter().any(|&c| c > 1) {
            return Err(Error::Invalid(format!(
                "template {}: placeholder repeated",
                self.id
            )));
        }
        Ok(parts)
    }

    pub fn render(&self, documents: &str, question: &str) -> Result<String> {
        let mut out = String::with_capacity(documents.len() + self.layout.len() + question.len() + self.prompt.len());
        for part in self.parse()? {
            match part {
                Ok(lit) => out.push_str(lit),
                Err(Slot::Prompt) => out.push_str(&self.prompt),
                Err(Slot::Documents) => out.push_str(documents),
                Err(Slot::Question) => out.push_str(question),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Qa,
    Rag,
    Summ,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qa" => Ok(SynthKind::Qa),
            "rag" => Ok(SynthKind::Rag),
            "summ" => Ok(SynthKind::Summ),
            other => Err(Error::Invalid(format!("unknown synthetic kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRequest {
    pub doc_id: String,
    pub seed: u64,
    pub chunk_offset: usize,
    pub chunk_len: usize,
    pub prompt: String,
}

/// Splice a seeded-random chunk of `doc` into `prompt_template` (which must
/// contain `{snippet}`).
pub fn make_qa_request(
    doc: &Document,
    chunk_len: usize,
    seed: u64,
    tokenizer: &dyn Tokenizer,
    prompt_template: &str,
) -> Result<QaRequest> {
    if chunk_len == 0 || doc.len() < chunk_len {
        return Err(Error::Invalid(format!(
            "document {} has {} tokens, cannot take a {chunk_len}-token chunk",
            doc.id,
            doc.len()
        )));
    }
    if !prompt_template.contains("{snippet}") {
        return Err(Error::Invalid("generation prompt lacks {snippet}".into()));
    }
    let offset = stream_rng(seed, stream_id("qa-chunk")).random_range(0..=doc.len() - chunk_len);
    let snippet = tokenizer.decode(&doc.tokens()[offset..offset + chunk_len]);
    Ok(QaRequest {
        doc_id: doc.id.clone(),
        seed,
        chunk_offset: offset,
        chunk_len,
        prompt: prompt_template.replacen("{snippet}", &snippet, 1),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum QaReject {
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("question refers to the snippet")]
    SnippetReference,
    #[error("empty question")]
    EmptyQuestion,
    #[error("empty answer")]
    EmptyAnswer,
}

pub fn parse_qa(response: &str) -> std::result::Result<QaPair, QaReject> {
    let lines: Vec<&str> = response.lines().collect();
    let q_line = lines
        .iter()
        .position(|l| l.trim_start().starts_with("Question:"))
        .ok_or(QaReject::MissingField("Question"))?;
    let a_line = lines[q_line..]
        .iter()
        .position(|l| l.trim_start().starts_with("Answer:"))
        .map(|i| i + q_line)
        .ok_or(QaReject::MissingField("Answer"))?;
    let strip = |line: &str, tag: &str| line.trim_start()[tag.len()..].to_owned();
    let mut question = strip(lines[q_line], "Question:");
    for l in &lines[q_line + 1..a_line] {
        question.push('\n');
        question.push_str(l);
    }
    let mut answer = strip(lines[a_line], "Answer:");
    for l in &lines[a_line + 1..] {
        answer.push('\n');
        answer.push_str(l);
    }
    let question = question.trim().to_owned();
    let answer = answer.trim().to_owned();
    if question.is_empty() {
        return Err(QaReject::EmptyQuestion);
    }
    if question.to_lowercase().contains("snippet") {
        return Err(QaReject::SnippetReference);
    }
    if answer.is_empty() {
        return Err(QaReject::EmptyAnswer);
    }
    Ok(QaPair { question, answer })
}

fn instruction_response(origin: &str, instruction: &str, response: &str, tokenizer: &dyn Tokenizer) -> Result<SftExample> {
    let ins = tokenizer.encode(instruction);
    let res = tokenizer.encode(response);
    if res.is_empty() {
        return Err(Error::Invalid("response has no tokens".into()));
    }
    Ok(SftExample::from_turns(
        origin,
        &[(Role::Instruction, &ins), (Role::Response, &res)],
    ))
}

/// Whole document as context, answer as the only trained span.
pub fn assemble_qa(
    doc: &Document,
    qa: &QaPair,
    template: &PromptTemplate,
    tokenizer: &dyn Tokenizer,
) -> Result<SftExample> {
    let rendered = template.render(&tokenizer.decode(doc.tokens()), &qa.question)?;
    instruction_response(&doc.id, &rendered, &qa.answer, tokenizer)
}

/// Pick `n_chunks` disjoint chunks: the QA source chunk plus distractors on
/// the chunk grid anchored at the source, in seeded order. Returns offsets.
pub fn rag_chunks(doc_len: usize, source_offset: usize, chunk_len: usize, n_chunks: usize, seed: u64) -> Result<Vec<usize>> {
    if n_chunks == 0 || chunk_len == 0 || source_offset + chunk_len > doc_len {
        return Err(Error::Invalid("invalid RAG chunk request".into()));
    }
    let left = source_offset / chunk_len;
    let right = (doc_len - source_offset - chunk_len) / chunk_len;
    if left + right < n_chunks - 1 {
        return Err(Error::Invalid(format!(
            "document of {doc_len} tokens cannot hold {n_chunks} disjoint {chunk_len}-token chunks around offset {source_offset}"
        )));
    }
    let candidates: Vec<usize> = (1..=left)
        .map(|k| source_offset - k * chunk_len)
        .chain((1..=right).map(|k| source_offset + k * chunk_len))
        .collect();
    let mut rng = stream_rng(seed, stream_id("rag-chunks"));
    let mut chosen: Vec<usize> = candidates.choose_multiple(&mut rng, n_chunks - 1).copied().collect();
    chosen.push(source_offset);
    chosen.shuffle(&mut rng);
    Ok(chosen)
}

/// Present shuffled chunks of the document as retrieved passages.
pub fn assemble_rag(
    doc: &Document,
    source: &QaSource,
    n_chunks: usize,
    seed: u64,
    template: &PromptTemplate,
    tokenizer: &dyn Tokenizer,
) -> Result<SftExample> {
    let offsets = rag_chunks(doc.len(), source.chunk_offset, source.chunk_len, n_chunks, seed)?;
    let text = |o: usize| tokenizer.decode(&doc.tokens()[o..o + source.chunk_len]);
    let documents = if n_chunks == 1 {
        text(offsets[0])
    } else {
        offsets
            .iter()
            .enumerate()
            .map(|(i, &o)| format!("Passage {}:\n{}", i + 1, text(o)))
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let rendered = template.render(&documents, &source.qa.question)?;
    instruction_response(&doc.id, &rendered, &source.qa.answer, tokenizer)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SummaryNode {
    /// Token range of the document.
    Leaf { start: usize, end: usize },
    /// Indices into the previous level.
    Merge { children: std::ops::Range<usize> },
}

/// Levels from leaves (index 0) to the single root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPlan {
    pub levels: Vec<Vec<SummaryNode>>,
}

impl SummaryPlan {
    pub fn request_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

pub fn recursive_summary_plan(doc_len: usize, window: usize, fan_in: usize) -> Result<SummaryPlan> {
    if window == 0 {
        return Err(Error::Invalid("summary window must be positive".into()));
    }
    if fan_in < 2 {
        return Err(Error::Invalid("fan-in must be at least 2".into()));
    }
    let leaves: Vec<_> = (0..doc_len.div_ceil(window).max(1))
        .map(|i| SummaryNode::Leaf {
            start: i * window,
            end: ((i + 1) * window).min(doc_len),
        })
        .collect();
    let mut levels = vec![leaves];
    while levels.last().expect("non-empty").len() > 1 {
        let n = levels.last().expect("non-empty").len();
        levels.push(
            (0..n.div_ceil(fan_in))
                .map(|i| SummaryNode::Merge {
                    children: i * fan_in..((i + 1) * fan_in).min(n),
                })
                .collect(),
        );
    }
    Ok(SummaryPlan { levels })
}

pub trait GenerationClient: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String>;
}

impl<C: GenerationClient + ?Sized> GenerationClient for &C {
    fn generate(&self, prompt: &str) -> Result<String> {
        (**self).generate(prompt)
    }
}

impl<C: GenerationClient + ?Sized> GenerationClient for Box<C> {
    fn generate(&self, prompt: &str) -> Result<String> {
        (**self).generate(prompt)
    }
}

/// Retries a failing client up to `max_attempts` times in total.
pub struct RetryingClient<C> {
    pub inner: C,
    pub max_attempts: usize,
}

impl<C: GenerationClient> GenerationClient for RetryingClient<C> {
    fn generate(&self, prompt: &str) -> Result<String> {
        let mut last = None;
        for _ in 0..self.max_attempts.max(1) {
            match self.inner.generate(prompt) {
                Ok(r) => return Ok(r),
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Generation(format!(
            "gave up after {} attempts: {}",
            self.max_attempts.max(1),
            last.expect("at least one attempt")
        )))
    }
}

#[cfg(feature = "http")]
pub use http::{HttpClient, HttpConfig};

#[cfg(feature = "http")]
mod http {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct HttpConfig {
        /// Chat-completions URL.
        pub endpoint: String,
        pub model: String,
        #[serde(default)]
        pub temperature: f64,
        /// Environment variable holding the bearer token.
        #[serde(default = "default_token_env")]
        pub token_env: String,
    }

    fn default_token_env() -> String {
        "LONGMIX_API_KEY".into()
    }

    /// Blocking chat-completions client.
    pub struct HttpClient {
        cfg: HttpConfig,
        token: Option<String>,
        agent: ureq::Agent,
    }

    impl HttpClient {
        pub fn new(cfg: HttpConfig) -> Self {
            let token = std::env::var(&cfg.token_env).ok();
            Self {
                cfg,
                token,
                agent: ureq::Agent::new_with_defaults(),
            }
        }
    }

    #[derive(Deserialize)]
    struct ChatResponse {
        choices: Vec<Choice>,
    }

    #[derive(Deserialize)]
    struct Choice {
        message: Message,
    }

    #[derive(Deserialize)]
    struct Message {
        content: String,
    }

    impl GenerationClient for HttpClient {
        fn generate(&self, prompt: &str) -> Result<String> {
            let body = serde_json::json!({
                "model": self.cfg.model,
                "temperature": self.cfg.temperature,
                "messages": [{"role": "user", "content": prompt}],
            });
            let mut req = self.agent.post(&self.cfg.endpoint);
            if let Some(t) = &self.token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            let mut resp = req
                .send_json(&body)
                .map_err(|e| Error::Generation(e.to_string()))?;
            let parsed: ChatResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| Error::Generation(format!("unreadable response: {e}")))?;
            parsed
                .choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| Error::Generation("response has no choices".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub kind: String,
    pub doc_id: String,
    pub seed: u64,
    pub prompt_sha256: String,
    pub prompt: String,
    pub response: String,
}

/// Append-only record of every generation call.
#[derive(Default)]
pub struct RequestLog {
    records: Vec<LogRecord>,
    sink: Option<Box<dyn Write + Send>>,
}

impl RequestLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Also append each record as a JSON line to `sink`.
    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        Self {
            records: Vec::new(),
            sink: Some(sink),
        }
    }

    pub fn read<R: BufRead>(r: R) -> Result<Vec<LogRecord>> {
        let mut out = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(out)
    }

    pub fn append(&mut self, rec: LogRecord) -> Result<()> {
        if let Some(sink) = &mut self.sink {
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            sink.write_all(line.as_bytes())?;
            sink.flush()?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Answers prompts from a request log.
#[derive(Debug, Default, Clone)]
pub struct ReplayClient {
    responses: HashMap<String, String>,
}

impl ReplayClient {
    pub fn new(records: &[LogRecord]) -> Self {
        let mut responses = HashMap::new();
        for r in records {
            responses.entry(r.prompt_sha256.clone()).or_insert_with(|| r.response.clone());
        }
        Self { responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    fn lookup(&self, prompt: &str) -> Option<&String> {
        self.responses.get(&sha256_hex(prompt.as_bytes()))
    }
}

impl GenerationClient for ReplayClient {
    fn generate(&self, prompt: &str) -> Result<String> {
        self.lookup(prompt)
            .cloned()
            .ok_or_else(|| Error::Generation("prompt not present in request log".into()))
    }
}

/// Serves logged prompts from the log and the rest from `live`; lets an
/// interrupted run resume without repeating requests.
pub struct CachedClient<C> {
    pub cache: ReplayClient,
    pub live: C,
}

impl<C: GenerationClient> GenerationClient for CachedClient<C> {
    fn generate(&self, prompt: &str) -> Result<String> {
        match self.cache.lookup(prompt) {
            Some(r) => Ok(r.clone()),
            None => self.live.generate(prompt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub chunk_len: usize,
    pub rag_chunks: usize,
    pub summary_window: usize,
    pub fan_in: usize,
    /// Per-domain override of the QA generation prompt.
    #[serde(default)]
    pub qa_prompts: HashMap<String, String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            chunk_len: 2048,
            rag_chunks: 8,
            summary_window: 16_384,
            fan_in: 5,
            qa_prompts: HashMap::new(),
        }
    }
}

impl SynthConfig {
    pub fn qa_prompt(&self, domain: &str) -> &str {
        self.qa_prompts.get(domain).map(String::as_str).unwrap_or(QA_GENERATION_PROMPT)
    }
}

/// A generated QA pair and the chunk it was generated from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSource {
    pub chunk_offset: usize,
    pub chunk_len: usize,
    pub qa: QaPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthExample {
    pub kind: SynthKind,
    pub doc_id: String,
    pub seed: u64,
    pub template: String,
    pub example: SftExample,
}

pub struct SynthGenerator<'a> {
    client: &'a dyn GenerationClient,
    tokenizer: &'a dyn Tokenizer,
    log: Mutex<RequestLog>,
    pub cfg: SynthConfig,
}

impl<'a> SynthGenerator<'a> {
    pub fn new(client: &'a dyn GenerationClient, tokenizer: &'a dyn Tokenizer, log: RequestLog, cfg: SynthConfig) -> Self {
        Self {
            client,
            tokenizer,
            log: Mutex::new(log),
            cfg,
        }
    }

    pub fn into_log(self) -> RequestLog {
        self.log.into_inner().expect("log lock poisoned")
    }

    fn call(&self, kind: &str, doc_id: &str, seed: u64, prompt: String) -> Result<String> {
        let response = self.client.generate(&prompt)?;
        self.log.lock().expect("log lock poisoned").append(LogRecord {
            kind: kind.to_owned(),
            doc_id: doc_id.to_owned(),
            seed,
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            prompt,
            response: response.clone(),
        })?;
        Ok(response)
    }

    pub fn qa_source(&self, doc: &Document, seed: u64) -> Result<QaSource> {
        let req = make_qa_request(doc, self.cfg.chunk_len, seed, self.tokenizer, self.cfg.qa_prompt(&doc.domain))?;
        let response = self.call("qa", &doc.id, seed, req.prompt)?;
        let qa = parse_qa(&response).map_err(|r| Error::Generation(format!("rejected QA for {}: {r}", doc.id)))?;
        Ok(QaSource {
            chunk_offset: req.chunk_offset,
            chunk_len: req.chunk_len,
            qa,
        })
    }

    pub fn qa_example(&self, doc: &Document, seed: u64) -> Result<SynthExample> {
        let source = self.qa_source(doc, seed)?;
        let template = PromptTemplate::sample(&QUESTION_PROMPTS, &QA_LAYOUTS, seed)?;
        let example = assemble_qa(doc, &source.qa, &template, self.tokenizer)?;
        Ok(self.wrap(SynthKind::Qa, doc, seed, template.id, example))
    }

    pub fn rag_example(&self, doc: &Document, seed: u64) -> Result<SynthExample> {
        let source = self.qa_source(doc, seed)?;
        let template = PromptTemplate::sample(&QUESTION_PROMPTS, &QA_LAYOUTS, seed)?;
        let example = assemble_rag(doc, &source, self.cfg.rag_chunks, seed, &template, self.tokenizer)?;
        Ok(self.wrap(SynthKind::Rag, doc, seed, template.id, example))
    }

    /// Run the recursive summarization plan and return the root summary.
    pub fn summarize(&self, doc: &Document, seed: u64) -> Result<String> {
        let plan = recursive_summary_plan(doc.len(), self.cfg.summary_window, self.cfg.fan_in)?;
        let mut below: Vec<String> = Vec::new();
        for level in &plan.levels {
            let mut here = Vec::with_capacity(level.len());
            for node in level {
                let prompt = match node {
                    SummaryNode::Leaf { start, end } => {
                        format!("{LEAF_SUMMARY_PROMPT}{}", self.tokenizer.decode(&doc.tokens()[*start..*end]))
                    }
                    SummaryNode::Merge { children } => {
                        format!("{MERGE_SUMMARY_PROMPT}{}", below[children.clone()].join("\n\n"))
                    }
                };
                here.push(self.call("summ", &doc.id, seed, prompt)?.trim().to_owned());
            }
            below = here;
        }
        let summary = below.pop().expect("plan has a root");
        if summary.is_empty() {
            return Err(Error::Generation(format!("empty summary for {}", doc.id)));
        }
        Ok(summary)
    }

    pub fn summ_example(&self, doc: &Document, seed: u64) -> Result<SynthExample> {
        let summary = self.summarize(doc, seed)?;
        let template = PromptTemplate::sample(&SUMMARY_PROMPTS, &SUMMARY_LAYOUTS, seed)?;
        let rendered = template.render(&self.tokenizer.decode(doc.tokens()), "")?;
        let example = instruction_response(&doc.id, &rendered, &summary, self.tokenizer)?;
        Ok(self.wrap(SynthKind::Summ, doc, seed, template.id, example))
    }

    pub fn example(&self, kind: SynthKind, doc: &Document, seed: u64) -> Result<SynthExample> {
        match kind {
            SynthKind::Qa => self.qa_example(doc, seed),
            SynthKind::Rag => self.rag_example(doc, seed),
            SynthKind::Summ => self.summ_example(doc, seed),
        }
    }

    fn wrap(&self, kind: SynthKind, doc: &Document, seed: u64, template: String, example: SftExample) -> SynthExample {
        SynthExample {
            kind,
            doc_id: doc.id.clone(),
            seed,
            template,
            example,
        }
    }
}

/// Issue the QA-generation requests for `jobs` with at most `max_in_flight`
/// concurrent calls, returning responses in job order. Responses are keyed
/// by prompt, so feeding them to a [`ReplayClient`] makes later assembly
/// independent of scheduling.
pub fn prefetch<C: GenerationClient + ?Sized>(client: &C, prompts: &[String], max_in_flight: usize) -> Vec<Result<String>> {
    let mut out = Vec::with_capacity(prompts.len());
    for batch in prompts.chunks(max_in_flight.max(1)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = batch.iter().map(|p| s.spawn(move || client.generate(p))).collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("generation thread panicked")));
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMixSpec {
    pub qa: f64,
    pub rag: f64,
    pub summ: f64,
    /// Token share of synthetic examples versus short conversations.
    pub synthetic_ratio: f64,
}

impl Default for SynthMixSpec {
    fn default() -> Self {
        Self {
            qa: 0.4,
            rag: 0.3,
            summ: 0.3,
            synthetic_ratio: 1.0,
        }
    }
}

impl SynthMixSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.qa, self.rag, self.summ, self.synthetic_ratio];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("synthetic mix fractions must lie in [0, 1]".into()));
        }
        let sum = self.qa + self.rag + self.summ;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("qa + rag + summ = {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SftSource {
    Synthetic(SynthKind),
    Short,
}

#[derive(Debug, Default)]
pub struct SynthPools {
    pub qa: Vec<SftExample>,
    pub rag: Vec<SftExample>,
    pub summ: Vec<SftExample>,
    pub short: Vec<SftExample>,
}

impl SynthPools {
    fn get(&self, src: SftSource) -> &[SftExample] {
        match src {
            SftSource::Synthetic(SynthKind::Qa) => &self.qa,
            SftSource::Synthetic(SynthKind::Rag) => &self.rag,
            SftSource::Synthetic(SynthKind::Summ) => &self.summ,
            SftSource::Short => &self.short,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthMixStats {
    pub examples: u64,
    pub tokens: u64,
    pub source_tokens: std::collections::BTreeMap<String, u64>,
}

impl SynthMixStats {
    pub fn fraction(&self, key: &str) -> f64 {
        if self.tokens == 0 {
            return 0.0;
        }
        self.source_tokens.get(key).copied().unwrap_or(0) as f64 / self.tokens as f64
    }
}

fn source_key(src: SftSource) -> &'static str {
    match src {
        SftSource::Synthetic(SynthKind::Qa) => "qa",
        SftSource::Synthetic(SynthKind::Rag) => "rag",
        SftSource::Synthetic(SynthKind::Summ) => "summ",
        SftSource::Short => "short",
    }
}

/// Mix SFT examples by token share. At each step the source furthest below
/// its target share (emitted tokens / target fraction smallest) is drawn
/// next; each pool is walked in a seeded order that reshuffles per epoch.
pub fn mix_synth<'p>(
    spec: &SynthMixSpec,
    pools: &'p SynthPools,
    budget: u64,
    seed: u64,
    policy: Exhaustion,
) -> Result<(Vec<(SftSource, &'p SftExample)>, SynthMixStats)> {
    spec.validate()?;
    let targets = [
        (SftSource::Synthetic(SynthKind::Qa), spec.synthetic_ratio * spec.qa),
        (SftSource::Synthetic(SynthKind::Rag), spec.synthetic_ratio * spec.rag),
        (SftSource::Synthetic(SynthKind::Summ), spec.synthetic_ratio * spec.summ),
        (SftSource::Short, 1.0 - spec.synthetic_ratio),
    ];
    let active: Vec<(SftSource, f64)> = targets.into_iter().filter(|&(_, f)| f > 0.0).collect();
    for &(src, _) in &active {
        if pools.get(src).is_empty() {
            return Err(Error::PoolNotFound(format!("{} examples", source_key(src))));
        }
    }
    struct Walk {
        order: Vec<usize>,
        next: usize,
        epoch: u64,
    }
    let order_for = |src: SftSource, n: usize, epoch: u64| {
        let mut o: Vec<usize> = (0..n).collect();
        crate::rng::shuffle(&mut o, seed, stream_id(source_key(src)) ^ epoch);
        o
    };
    let mut walks: Vec<Walk> = active
        .iter()
        .map(|&(src, _)| Walk {
            order: order_for(src, pools.get(src).len(), 0),
            next: 0,
            epoch: 0,
        })
        .collect();
    let mut emitted = vec![0u64; active.len()];
    let mut out = Vec::new();
    let mut stats = SynthMixStats::default();
    while stats.tokens < budget && !active.is_empty() {
        let pick = (0..active.len())
            .min_by(|&a, &b| {
                let ra = emitted[a] as f64 / active[a].1;
                let rb = emitted[b] as f64 / active[b].1;
                ra.total_cmp(&rb)
            })
            .expect("active sources");
        let (src, _) = active[pick];
        let walk = &mut walks[pick];
        if walk.next == walk.order.len() {
            if policy == Exhaustion::Fail {
                return Err(Error::PoolExhausted(source_key(src).into()));
            }
            walk.epoch += 1;
            walk.order = order_for(src, walk.order.len(), walk.epoch);
            walk.next = 0;
        }
        let ex = &pools.get(src)[walk.order[walk.next]];
        walk.next += 1;
        let n = ex.len() as u64;
        emitted[pick] += n;
        stats.examples += 1;
        stats.tokens += n;
        *stats.source_tokens.entry(source_key(src).into()).or_default() += n;
        out.push((src, ex));
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespaceTokenizer;

    struct Canned;

    impl GenerationClient for Canned {
        fn generate(&self, prompt: &str) -> Result<String> {
            if prompt.starts_with("Summarize") || prompt.starts_with("The following are") {
                Ok(format!("A summary of {} words.", prompt.split_whitespace().count()))
            } else {
                Ok("Reasoning: this snippet is about a voyage.\nQuestion: Who steers the ship?\nAnswer: The captain, as the book mentioned.".into())
            }
        }
    }

    fn numeric_doc(id: &str, len: usize) -> Document {
        Document::new(id, "books", (0..len as u32).map(|i| 1000 + i).collect()).unwrap()
    }

    #[test]
    fn qa_request_splices_exact_chunk() {
        let tok = WhitespaceTokenizer::new();
        let doc = numeric_doc("book", 70_000);
        let req = make_qa_request(&doc, 2048, 11, &tok, QA_GENERATION_PROMPT).unwrap();
        let start = req.prompt.find(SNIPPET_START).unwrap() + SNIPPET_START.len();
        let end = req.prompt.find(SNIPPET_END).unwrap();
        let ids = tok.encode(&req.prompt[start..end]);
        assert_eq!(ids, doc.tokens()[req.chunk_offset..req.chunk_offset + 2048]);
        assert_eq!(make_qa_request(&doc, 2048, 11, &tok, QA_GENERATION_PROMPT).unwrap(), req);
        let other = make_qa_request(&doc, 2048, 12, &tok, QA_GENERATION_PROMPT).unwrap();
        assert_ne!(other.chunk_offset, req.chunk_offset);
    }

    #[test]
    fn qa_request_needs_long_enough_doc() {
        let tok = WhitespaceTokenizer::new();
        assert!(make_qa_request(&numeric_doc("x", 10), 11, 0, &tok, QA_GENERATION_PROMPT).is_err());
        assert!(make_qa_request(&numeric_doc("x", 10), 10, 0, &tok, "no slot").is_err());
    }

    #[test]
    fn parse_qa_cases() {
        let ok = parse_qa("Reasoning: this snippet is about x.\nQuestion: What is y?\nAnswer: It is z.\nMore detail.").unwrap();
        assert_eq!(ok.question, "What is y?");
        assert_eq!(ok.answer, "It is z.\nMore detail.");
        assert_eq!(parse_qa("Question: What?"), Err(QaReject::MissingField("Answer")));
        assert_eq!(parse_qa("Answer: yes"), Err(QaReject::MissingField("Question")));
        assert_eq!(
            parse_qa("Question: given the snippet, what happens?\nAnswer: x"),
            Err(QaReject::SnippetReference)
        );
        assert_eq!(parse_qa("Question: What?\nAnswer:   "), Err(QaReject::EmptyAnswer));
    }

    #[test]
    fn templates_validate() {
        for l in QA_LAYOUTS {
            PromptTemplate::new("t", "p", l).unwrap();
        }
        assert!(PromptTemplate::new("t", "p", "{prompt} {question}").is_err());
        assert!(PromptTemplate::new("t", "p", "{documents}{documents}").is_err());
        assert!(PromptTemplate::new("t", "p", "{documents} {answer}").is_err());
        assert!(PromptTemplate::new("t", "p", "{documents} {prompt").is_err());
    }

    #[test]
    fn render_does_not_expand_placeholders_inside_documents() {
        let t = PromptTemplate::new("t", "P", QA_LAYOUTS[0]).unwrap();
        assert_eq!(t.render("doc {question}", "Q").unwrap(), "P\n\ndoc {question}\n\nQuestion: Q");
    }

    #[test]
    fn qa_mask_covers_answer_only() {
        let tok = WhitespaceTokenizer::new();
        let doc = numeric_doc("b", 100);
        let qa = QaPair {
            question: "Why?".into(),
            answer: "Because of the storm.".into(),
        };
        for layout in [QA_LAYOUTS[0], QA_LAYOUTS[5]] {
            let t = PromptTemplate::new("t", QUESTION_PROMPTS[0], layout).unwrap();
            let ex = assemble_qa(&doc, &qa, &t, &tok).unwrap();
            let answer = tok.encode(&qa.answer);
            assert_eq!(ex.loss_tokens(), answer.len());
            let n = ex.len();
            assert_eq!(&ex.tokens[n - answer.len()..], &answer[..]);
            assert!(ex.loss_mask[n - answer.len()..].iter().all(|&m| m));
        }
    }

    #[test]
    fn rag_chunks_include_source_once() {
        let offsets = rag_chunks(100_000, 40_000, 2048, 8, 3).unwrap();
        assert_eq!(offsets.len(), 8);
        assert_eq!(offsets.iter().filter(|&&o| o == 40_000).count(), 1);
        let mut sorted = offsets.clone();
        sorted.sort();
        assert!(sorted.windows(2).all(|w| w[1] - w[0] >= 2048));
        assert_eq!(rag_chunks(100_000, 40_000, 2048, 1, 3).unwrap(), vec![40_000]);
        assert_ne!(rag_chunks(100_000, 40_000, 2048, 8, 4).unwrap(), offsets);
        assert!(rag_chunks(10_000, 4_000, 2048, 8, 0).is_err());
    }

    #[test]
    fn rag_with_one_chunk_matches_qa_layout_on_the_chunk() {
        let tok = WhitespaceTokenizer::new();
        let doc = numeric_doc("b", 10_000);
        let src = QaSource {
            chunk_offset: 100,
            chunk_len: 50,
            qa: QaPair {
                question: "Q?".into(),
                answer: "A.".into(),
            },
        };
        let t = PromptTemplate::new("t", "P", QA_LAYOUTS[0]).unwrap();
        let rag = assemble_rag(&doc, &src, 1, 0, &t, &tok).unwrap();
        let chunk_doc = Document::new("b", "books", doc.tokens()[100..150].to_vec()).unwrap();
        let qa = assemble_qa(&chunk_doc, &src.qa, &t, &tok).unwrap();
        assert_eq!(rag, qa);
    }

    #[test]
    fn summary_tree_arithmetic() {
        let plan = recursive_summary_plan(10 * 100, 100, 5).unwrap();
        assert_eq!(plan.levels.iter().map(Vec::len).collect::<Vec<_>>(), vec![10, 2, 1]);
        assert_eq!(plan.request_count(), 13);
        assert_eq!(recursive_summary_plan(80, 100, 5).unwrap().request_count(), 1);
        assert!(recursive_summary_plan(1000, 100, 1).is_err());
        let leaves = &plan.levels[0];
        assert_eq!(leaves[9], SummaryNode::Leaf { start: 900, end: 1000 });
    }

    #[test]
    fn generator_replays_from_log() {
        let tok = WhitespaceTokenizer::new();
        let cfg = SynthConfig {
            chunk_len: 64,
            rag_chunks: 4,
            summary_window: 100,
            fan_in: 3,
            ..Default::default()
        };
        let doc = numeric_doc("book", 1000);
        let gen = SynthGenerator::new(&Canned, &tok, RequestLog::in_memory(), cfg.clone());
        let live: Vec<_> = [SynthKind::Qa, SynthKind::Rag, SynthKind::Summ]
            .iter()
            .map(|&k| gen.example(k, &doc, 5).unwrap())
            .collect();
        let log = gen.into_log();
        assert_eq!(log.records().len(), 1 + 1 + (10 + 4 + 2 + 1));
        let replay = ReplayClient::new(log.records());
        let gen2 = SynthGenerator::new(&replay, &tok, RequestLog::in_memory(), cfg);
        let again: Vec<_> = [SynthKind::Qa, SynthKind::Rag, SynthKind::Summ]
            .iter()
            .map(|&k| gen2.example(k, &doc, 5).unwrap())
            .collect();
        assert_eq!(serde_json::to_string(&live).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn retry_is_bounded() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Flaky(AtomicUsize);
        impl GenerationClient for Flaky {
            fn generate(&self, _: &str) -> Result<String> {
                if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(Error::Generation("503".into()))
                } else {
                    Ok("ok".into())
                }
            }
        }
        let c = RetryingClient { inner: Flaky(AtomicUsize::new(0)), max_attempts: 3 };
        assert_eq!(c.generate("p").unwrap(), "ok");
        let c = RetryingClient { inner: Flaky(AtomicUsize::new(0)), max_attempts: 2 };
        assert!(c.generate("p").is_err());
    }

    #[test]
    fn prefetch_preserves_order() {
        struct Echo;
        impl GenerationClient for Echo {
            fn generate(&self, p: &str) -> Result<String> {
                Ok(p.to_uppercase())
            }
        }
        let prompts: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let out: Vec<_> = prefetch(&Echo, &prompts, 3).into_iter().map(Result::unwrap).collect();
        assert_eq!(out[7], "P7");
    }

    fn sft(len: usize) -> SftExample {
        let ins = vec![1; len / 2];
        let res = vec![2; len - len / 2];
        SftExample::from_turns("x", &[(Role::Instruction, &ins), (Role::Response, &res)])
    }

    #[test]
    fn synth_ratio_boundaries() {
        let pools = SynthPools {
            qa: vec![sft(100)],
            rag: vec![sft(120)],
            summ: vec![sft(90)],
            short: vec![sft(30), sft(50)],
        };
        let spec = SynthMixSpec { synthetic_ratio: 0.0, ..Default::default() };
        let (out, _) = mix_synth(&spec, &pools, 10_000, 0, Exhaustion::Wrap).unwrap();
        assert!(out.iter().all(|(s, _)| *s == SftSource::Short));
        let spec = SynthMixSpec::default();
        let (out, stats) = mix_synth(&spec, &pools, 10_000, 0, Exhaustion::Wrap).unwrap();
        assert!(out.iter().all(|(s, _)| *s != SftSource::Short));
        assert!((stats.fraction("qa") - 0.4).abs() < 0.02);
        assert!(SynthMixSpec { qa: 0.5, ..Default::default() }.validate().is_err());
    }
}
