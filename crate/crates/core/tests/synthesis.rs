use std::io::BufReader;
use std::sync::{Arc, Mutex};

use longmix::corpus::Document;
use longmix::mixer::Exhaustion;
use longmix::synthgen::{
    mix_synth, GenerationClient, RequestLog, ReplayClient, SynthConfig, SynthGenerator, SynthKind, SynthMixSpec,
    SynthPools,
};
use longmix::tokenizer::{Tokenizer, WhitespaceTokenizer};
use longmix::Result;

struct Stub;

impl GenerationClient for Stub {
    fn generate(&self, prompt: &str) -> Result<String> {
        if prompt.contains("*** Start of the snippet ***") {
            let n = prompt.len() % 97;
            Ok(format!(
                "Reasoning: this snippet is about a journey.\nQuestion: Where does chapter {n} end?\nAnswer: At the harbor, number {n}."
            ))
        } else {
            Ok(format!("The story so far, in {} characters.", prompt.len()))
        }
    }
}

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl std::io::Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn corpus() -> Vec<Document> {
    (0..12u32)
        .map(|i| Document::new(format!("book{i}"), "books", (0..800 + 40 * i).map(|t| 100 + t * (i + 1)).collect()).unwrap())
        .collect()
}

fn cfg() -> SynthConfig {
    SynthConfig {
        chunk_len: 48,
        rag_chunks: 5,
        summary_window: 120,
        fan_in: 4,
        ..Default::default()
    }
}

fn generate(client: &dyn GenerationClient, tok: &WhitespaceTokenizer, log: RequestLog) -> (String, RequestLog) {
    let gen = SynthGenerator::new(client, tok, log, cfg());
    let mut out = String::new();
    for (i, doc) in corpus().iter().enumerate() {
        for kind in [SynthKind::Qa, SynthKind::Rag, SynthKind::Summ] {
            let ex = gen.example(kind, doc, i as u64).unwrap();
            out.push_str(&serde_json::to_string(&ex).unwrap());
            out.push('\n');
        }
    }
    (out, gen.into_log())
}

#[test]
fn replay_from_persisted_log_is_byte_identical() {
    let tok = WhitespaceTokenizer::new();
    let sink = Shared::default();
    let (live, _) = generate(&Stub, &tok, RequestLog::with_sink(Box::new(sink.clone())));
    let bytes = sink.0.lock().unwrap().clone();
    let records = RequestLog::read(BufReader::new(bytes.as_slice())).unwrap();
    let replay = ReplayClient::new(&records);
    let (again, log2) = generate(&replay, &WhitespaceTokenizer::new(), RequestLog::in_memory());
    assert_eq!(live, again);
    assert_eq!(log2.to_jsonl().as_bytes(), bytes.as_slice());
}

#[test]
fn masks_cover_exactly_the_generated_text() {
    let tok = WhitespaceTokenizer::new();
    let (live, log) = generate(&Stub, &tok, RequestLog::in_memory());
    let summaries: Vec<&str> = log
        .records()
        .iter()
        .filter(|r| r.kind == "summ")
        .map(|r| r.response.as_str())
        .collect();
    for line in live.lines() {
        let ex: longmix::synthgen::SynthExample = serde_json::from_str(line).unwrap();
        let masked: Vec<u32> = ex
            .example
            .tokens
            .iter()
            .zip(&ex.example.loss_mask)
            .filter(|(_, &m)| m)
            .map(|(&t, _)| t)
            .collect();
        let text = tok.decode(&masked);
        match ex.kind {
            SynthKind::Summ => assert!(summaries.iter().any(|s| tok.encode(s) == masked), "{text}"),
            _ => assert!(text.starts_with("At the harbor"), "{text}"),
        }
        let masked_end = ex.example.loss_mask.iter().rposition(|&m| !m).unwrap() + 1;
        assert!(ex.example.loss_mask[masked_end..].iter().all(|&m| m));
    }
}

#[test]
fn mix_hits_token_shares() {
    let tok = WhitespaceTokenizer::new();
    let gen = SynthGenerator::new(&Stub, &tok, RequestLog::in_memory(), cfg());
    let mut pools = SynthPools::default();
    for (i, doc) in corpus().iter().enumerate() {
        pools.qa.push(gen.qa_example(doc, i as u64).unwrap().example);
        pools.rag.push(gen.rag_example(doc, i as u64).unwrap().example);
        pools.summ.push(gen.summ_example(doc, i as u64).unwrap().example);
    }
    let spec = SynthMixSpec::default();
    let (picked, stats) = mix_synth(&spec, &pools, 1_000_000, 5, Exhaustion::Wrap).unwrap();
    assert!(stats.tokens >= 1_000_000);
    assert_eq!(picked.len() as u64, stats.examples);
    for (k, w) in [("qa", 0.4), ("rag", 0.3), ("summ", 0.3)] {
        assert!((stats.fraction(k) - w).abs() < 0.03, "{k}: {}", stats.fraction(k));
    }
    let (again, _) = mix_synth(&spec, &pools, 1_000_000, 5, Exhaustion::Wrap).unwrap();
    assert!(picked.iter().zip(&again).all(|(a, b)| std::ptr::eq(a.1, b.1)));
    assert!(mix_synth(&spec, &pools, 1_000_000, 5, Exhaustion::Fail).is_err());
}
