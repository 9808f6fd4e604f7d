#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

pub fn longmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longmix"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn longmix_ok(args: &[&str]) -> String {
    let out = longmix(args);
    assert!(
        out.status.success(),
        "longmix {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Canned response in the QA-generation output format.
pub fn canned_qa(prompt: &str) -> String {
    let n = prompt.len() % 1000;
    format!(
        "Reasoning: this snippet is about a storm at sea.\nQuestion: What did the crew of ship {n} do first?\nAnswer: They lowered the sails of ship {n}, as the book mentioned."
    )
}

pub fn canned_summary(prompt: &str) -> String {
    format!("A voyage ends after {} words of turmoil.", prompt.split_whitespace().count())
}

pub fn canned(prompt: &str) -> String {
    if prompt.contains("*** Start of the snippet ***") {
        canned_qa(prompt)
    } else {
        canned_summary(prompt)
    }
}

/// Minimal chat-completions endpoint on localhost. Returns the URL.
pub fn spawn_stub_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut writer = stream;
                loop {
                    let mut len = 0usize;
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    loop {
                        line.clear();
                        reader.read_line(&mut line).unwrap();
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = l.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let prompt = req["messages"][0]["content"].as_str().unwrap();
                    let resp = serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": canned(prompt)}}]
                    })
                    .to_string();
                    write!(
                        writer,
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{resp}",
                        resp.len()
                    )
                    .unwrap();
                }
            });
        }
    });
    format!("http://{addr}/v1/chat/completions")
}
