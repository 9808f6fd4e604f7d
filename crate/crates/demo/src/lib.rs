//! WebAssembly bindings behind `www/index.html`. Every entry point returns a
//! JSON string; the `*_json` functions are the same operations callable from
//! native code.

use longmix::corpus::Document;
use longmix::packer::{pack_short, PackConfig};
use longmix::scheduler::{CostModel, StepPlan};
use longmix::trainmath::{suggested_base, RopeConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_list(raw: &str) -> Result<Vec<usize>, String> {
    raw.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("not a length: {s}")))
        .collect()
}

#[derive(Serialize)]
struct PackedView {
    boundaries: Vec<usize>,
    origins: Vec<String>,
    carried: Vec<bool>,
}

#[derive(Serialize)]
struct PackView {
    length: usize,
    sequences: Vec<PackedView>,
    pending: usize,
    emitted_tokens: u64,
    carried_tokens: u64,
    discarded_tokens: u64,
}

/// Pack documents of the given lengths (comma separated) into sequences.
pub fn pack_json(lengths: &str, length: usize, carry: bool) -> Result<String, String> {
    let lengths = parse_list(lengths)?;
    if lengths.len() > 10_000 || lengths.iter().sum::<usize>() > 50_000_000 {
        return Err("input too large for the demo".into());
    }
    let docs = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| Document::new(format!("doc{}", i + 1), "demo", vec![1; n]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let (seqs, stats) = pack_short(&docs, PackConfig::new(length, carry)).map_err(|e| e.to_string())?;
    let view = PackView {
        length,
        sequences: seqs
            .iter()
            .map(|s| PackedView {
                boundaries: s.boundaries().to_vec(),
                origins: s.segments().iter().map(|g| g.origin.clone()).collect(),
                carried: s.segments().iter().map(|g| g.carried).collect(),
            })
            .collect(),
        pending: stats.final_partial_tokens as usize,
        emitted_tokens: stats.emitted_tokens,
        carried_tokens: stats.carried_tokens,
        discarded_tokens: stats.discarded_tail_tokens,
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Serialize)]
struct PlanView {
    grid: Vec<Vec<usize>>,
    makespan: f64,
}

#[derive(Serialize)]
struct ScheduleView {
    costs: Vec<f64>,
    unsorted: PlanView,
    sorted: PlanView,
    speedup: f64,
}

/// Minibatches are separated by `;`, each a comma-separated list of segment
/// lengths, e.g. `4096; 64,64,3968; 2048,2048; 1024,3072`.
pub fn schedule_json(minibatches: &str, devices: usize, accum: usize) -> Result<String, String> {
    let model = CostModel::default();
    let costs: Vec<f64> = minibatches
        .split(';')
        .filter(|m| !m.trim().is_empty())
        .map(|m| parse_list(m).map(|segs| model.segments_cost(segs)))
        .collect::<Result<_, _>>()?;
    let view = |p: StepPlan| PlanView {
        makespan: p.makespan(),
        grid: p.grid,
    };
    let unsorted = view(StepPlan::manifest_order(costs.clone(), devices, accum).map_err(|e| e.to_string())?);
    let sorted = view(StepPlan::sorted(costs.clone(), devices, accum).map_err(|e| e.to_string())?);
    let speedup = if sorted.makespan > 0.0 {
        unsorted.makespan / sorted.makespan - 1.0
    } else {
        0.0
    };
    Ok(serde_json::to_string(&ScheduleView {
        costs,
        unsorted,
        sorted,
        speedup,
    })
    .expect("view serializes"))
}

#[derive(Serialize)]
struct RopePoint {
    context: u64,
    base: f64,
}

/// Suggested base at each doubling of the context from `orig_len` up to
/// `max_len`.
pub fn rope_json(orig_base: f64, orig_len: u64, head_dim: u32, max_len: u64) -> Result<String, String> {
    if orig_len == 0 || max_len < orig_len {
        return Err("need 0 < original length <= maximum length".into());
    }
    let mut points = Vec::new();
    let mut ctx = orig_len;
    while ctx <= max_len {
        let base = suggested_base(&RopeConfig {
            original_base: orig_base,
            original_context: orig_len,
            target_context: ctx,
            head_dim,
        })
        .map_err(|e| e.to_string())?;
        points.push(RopePoint { context: ctx, base });
        ctx = ctx.saturating_mul(2);
    }
    Ok(serde_json::to_string(&points).expect("points serialize"))
}

#[wasm_bindgen]
pub fn pack(lengths: &str, length: usize, carry: bool) -> Result<String, JsValue> {
    pack_json(lengths, length, carry).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn schedule(minibatches: &str, devices: usize, accum: usize) -> Result<String, JsValue> {
    schedule_json(minibatches, devices, accum).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rope(orig_base: f64, orig_len: u64, head_dim: u32, max_len: u64) -> Result<String, JsValue> {
    rope_json(orig_base, orig_len, head_dim, max_len).map_err(|e| JsValue::from_str(&e))
}
