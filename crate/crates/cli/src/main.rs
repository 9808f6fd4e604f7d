use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use longmix::corpus::{group_repos, ingest, Document, LengthCensus, LONG_THRESHOLD};
use longmix::evalgen::{fit_kv, gen_icl, gen_icl_split, gen_kv, KvConfig, Labeled};
use longmix::manifest::{manifest_path, sha256_hex, RunManifest};
use longmix::mixer::{sample_stream, validate_spec, Exhaustion, MixConfig, Pools};
use longmix::packer::{filter_long, pack_sft, Conversation, PackConfig, PackedSequence, ShortPacker};
use longmix::rng::{shuffle, stream_id};
use longmix::scheduler::{throughput_report, CostModel, StepPlan, ThroughputReport};
use longmix::shard::{DocReader, DocWriter, SeqWriter};
use longmix::synthgen::{
    GenerationClient, RequestLog, ReplayClient, RetryingClient, SynthConfig, SynthGenerator, SynthKind,
};
use longmix::tokenizer::{WhitespaceTokenizer, SEPARATOR_TOKEN};
use longmix::trainmath::{chained_base, format_sig3, mean_of_means, recipe_base, suggested_base, token_avg};
use longmix::trainmath::{LossShard, RopeConfig, Stage};
use longmix::{presets, shard, Error};

mod config;

#[derive(Parser)]
#[command(name = "longmix", version, about = "Long-context training data pipeline")]
struct Cli {
    /// TOML file with one table of flag defaults per subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read JSON-lines records into a binary document shard.
    Ingest(IngestArgs),
    /// Per-domain length distribution of document shards.
    Census(CensusArgs),
    /// Pack documents into fixed-length sequences.
    Pack(PackArgs),
    /// Sample a training stream from packed pools.
    Mix(MixArgs),
    /// Model step makespan with and without minibatch reordering.
    Plan(PlanArgs),
    /// Dynamic-NTK RoPE base for a context extension.
    Rope(RopeArgs),
    /// Aggregate per-shard loss sums read from stdin.
    Lossagg,
    /// Generate synthetic long-context SFT examples.
    Synthgen(SynthArgs),
    /// Generate evaluation task files.
    #[command(subcommand)]
    Evalgen(EvalCommand),
    /// Re-hash the outputs listed in run manifests.
    Verify {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    domain: String,
    /// JSON-lines file, or `-` for stdin.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary for text records; created if missing and updated afterwards.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Concatenate files sharing a repo_key into one document.
    #[arg(long)]
    group_repos: bool,
}

#[derive(Args)]
struct CensusArgs {
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "4096,8192,16384,32768")]
    thresholds: Vec<usize>,
    #[arg(long, default_value_t = LONG_THRESHOLD)]
    long_threshold: usize,
    /// Also write the census as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PackMode {
    Short,
    Long,
    Sft,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long, value_enum)]
    mode: PackMode,
    #[arg(long)]
    length: usize,
    /// Continue split documents in the next sequence (short mode).
    #[arg(long)]
    carry: bool,
    /// Token appended after every document (short mode).
    #[arg(long)]
    separator: Option<u32>,
    /// Seed for the document order shuffle.
    #[arg(long)]
    seed: u64,
    /// Document shards, or conversation JSON-lines files in sft mode.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExhaustionArg {
    Wrap,
    Fail,
}

#[derive(Args)]
struct MixArgs {
    /// Mixture TOML file, or a preset name (ablation, stage1, stage2).
    #[arg(long)]
    spec: String,
    /// Directory holding `<pool>.<length>.seqs` shards.
    #[arg(long, default_value = ".")]
    pools: PathBuf,
    /// Defaults to the curriculum's token budget.
    #[arg(long)]
    budget_tokens: Option<u64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "wrap")]
    exhaustion: ExhaustionArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    devices: usize,
    #[arg(long)]
    accum: usize,
    /// Emit the cost-sorted assignment instead of manifest order.
    #[arg(long)]
    reorder: bool,
    /// JSON report; the per-step CSV is written next to it.
    #[arg(long)]
    report: PathBuf,
    /// Sequence shard in the planned order.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-token linear term of the cost model.
    #[arg(long, default_value_t = 0.0)]
    linear: f64,
    #[arg(long)]
    budget_tokens: Option<u64>,
}

#[derive(Args)]
struct RopeArgs {
    #[arg(long)]
    orig_base: f64,
    #[arg(long)]
    orig_len: u64,
    #[arg(long)]
    target_len: u64,
    #[arg(long, default_value_t = 128)]
    head_dim: u32,
    /// Multiplier applied on top of the suggestion.
    #[arg(long, default_value_t = 1.0)]
    factor: f64,
    /// Further context lengths to extend to, stage by stage.
    #[arg(long, value_delimiter = ',')]
    chain: Vec<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: SynthKind,
    /// TOML with optional `[client]` and `[synth]` tables.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Chat-completions URL; overrides `client.endpoint`.
    #[arg(long, conflicts_with = "replay")]
    endpoint: Option<String>,
    /// Answer every request from an earlier request log.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Document shard.
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary used to decode documents to text.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    limit: Option<usize>,
    /// JSON-lines examples. The request log goes to `<out>.requests.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum EvalCommand {
    /// JSON key-value retrieval task.
    Kv {
        #[arg(long, required_unless_present = "target_tokens")]
        pairs: Option<usize>,
        /// Pick the largest pair count whose haystack fits this many tokens.
        #[arg(long)]
        target_tokens: Option<u64>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Class-balanced in-context learning prompt.
    Icl {
        /// JSON lines of {"input", "label"}.
        #[arg(long)]
        dataset: PathBuf,
        /// Separate query pool; by default one dataset example is held out.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args = match config::expand_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(&args);
    let recorded: Vec<String> = args.into_iter().skip(1).collect();
    match run(cli.command, recorded) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, args: Vec<String>) -> Result<()> {
    let started = Instant::now();
    let name = match &command {
        Command::Ingest(_) => "ingest",
        Command::Census(_) => "census",
        Command::Pack(_) => "pack",
        Command::Mix(_) => "mix",
        Command::Plan(_) => "plan",
        Command::Rope(_) => "rope",
        Command::Lossagg => "lossagg",
        Command::Synthgen(_) => "synthgen",
        Command::Evalgen(_) => "evalgen",
        Command::Verify { .. } => "verify",
    };
    let mut m = RunManifest::new(name, args);
    let out = match command {
        Command::Ingest(a) => cmd_ingest(a, &mut m)?,
        Command::Census(a) => cmd_census(a, &mut m)?,
        Command::Pack(a) => cmd_pack(a, &mut m)?,
        Command::Mix(a) => cmd_mix(a, &mut m)?,
        Command::Plan(a) => cmd_plan(a, &mut m)?,
        Command::Rope(a) => return cmd_rope(a),
        Command::Lossagg => return cmd_lossagg(),
        Command::Synthgen(a) => cmd_synthgen(a, &mut m)?,
        Command::Evalgen(c) => cmd_evalgen(c, &mut m)?,
        Command::Verify { manifests } => return cmd_verify(&manifests),
    };
    if let Some(out) = out {
        m.wall_time_secs = started.elapsed().as_secs_f64();
        let path = manifest_path(&out);
        m.write(&path)?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn load_tokenizer(vocab: Option<&Path>) -> Result<WhitespaceTokenizer> {
    Ok(match vocab {
        Some(p) if p.exists() => WhitespaceTokenizer::load(p)?,
        _ => WhitespaceTokenizer::new(),
    })
}

fn read_all_docs(inputs: &[PathBuf], m: &mut RunManifest) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for p in inputs {
        m.add_input(p)?;
        for d in DocReader::open(p)? {
            docs.push(d?);
        }
    }
    Ok(docs)
}

fn cmd_ingest(a: IngestArgs, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let tokenizer = load_tokenizer(a.vocab.as_deref())?;
    if a.input != Path::new("-") {
        m.add_input(&a.input)?;
    }
    let mut stream = ingest(open_input(&a.input)?, &a.domain, &tokenizer);
    let mut docs = Vec::new();
    for item in stream.by_ref() {
        match item {
            Ok(d) => docs.push(d),
            Err(Error::Record { line, message }) => warn!("skipping line {line}: {message}"),
            Err(e) => return Err(e).context("reading records"),
        }
    }
    let stats = stream.stats();
    if a.group_repos {
        let files = docs.len();
        docs = group_repos(docs, SEPARATOR_TOKEN)?;
        m.count("repo_files", files as u64);
    }
    let mut w = DocWriter::create(&a.out)?;
    let mut per_domain: BTreeMap<String, u64> = BTreeMap::new();
    for d in &docs {
        w.write(d)?;
        *per_domain.entry(d.domain.clone()).or_default() += 1;
    }
    w.finish()?;
    if let Some(v) = &a.vocab {
        tokenizer.save(v)?;
    }
    m.count("records", stats.records);
    m.count("documents", docs.len() as u64);
    m.count("dropped_empty", stats.dropped_empty);
    m.count("malformed", stats.malformed);
    m.count("tokens", stats.tokens);
    m.add_output(&a.out)?;
    m.shard_domains.insert(a.out.display().to_string(), per_domain);
    info!(
        "{} records -> {} documents ({} malformed, {} empty)",
        stats.records,
        docs.len(),
        stats.malformed,
        stats.dropped_empty
    );
    Ok(Some(a.out))
}

fn cmd_census(a: CensusArgs, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut census = LengthCensus::new(a.thresholds.clone(), a.long_threshold)?;
    for p in &a.inputs {
        m.add_input(p)?;
        for d in DocReader::open(p)? {
            census.observe(&d?);
        }
    }
    let mut table = format!("{:<16} {:>10} {:>14}", "domain", "docs", "tokens");
    for t in &a.thresholds {
        table.push_str(&format!(" {:>9}", format!(">{t}")));
    }
    table.push_str(&format!(" {:>11} {:>14}\n", "long_docs", "long_tokens"));
    let overall = census.overall();
    for (name, dc) in census.domains.iter().chain([(&"(all)".to_string(), &overall)]) {
        table.push_str(&format!("{name:<16} {:>10} {:>14}", dc.documents, dc.total_tokens));
        for f in dc.fractions() {
            table.push_str(&format!(" {:>8.3}%", f * 100.0));
        }
        table.push_str(&format!(" {:>11} {:>14}\n", dc.long_documents, dc.long_tokens));
    }
    print!("{table}");
    let Some(out) = a.out else {
        return Ok(None);
    };
    std::fs::write(&out, serde_json::to_string_pretty(&census)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    m.count("documents", overall.documents);
    m.count("tokens", overall.total_tokens);
    m.add_output(&out)?;
    Ok(Some(out))
}

fn cmd_pack(a: PackArgs, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    if a.length == 0 {
        bail!("--length must be positive");
    }
    m.seed = Some(a.seed);
    m.notes.insert("order".into(), "documents shuffled with the run seed before packing".into());
    let mut per_domain: BTreeMap<String, u64> = BTreeMap::new();
    match a.mode {
        PackMode::Short => {
            let mut docs = read_all_docs(&a.inputs, m)?;
            shuffle(&mut docs, a.seed, stream_id("pack-order"));
            let mut packer = ShortPacker::new(PackConfig {
                length: a.length,
                carry: a.carry,
                separator: a.separator,
            })?;
            let mut w = SeqWriter::create(&a.out, a.length)?;
            for d in &docs {
                for seq in packer.push(d) {
                    *per_domain.entry(seq.domain().to_owned()).or_default() += 1;
                    w.write(&seq)?;
                }
            }
            w.finish()?;
            let s = packer.finish();
            m.count("input_documents", s.input_documents);
            m.count("input_tokens", s.input_tokens);
            m.count("sequences", s.emitted_sequences);
            m.count("tokens_packed", s.emitted_tokens);
            m.count("tokens_carried", s.carried_tokens);
            m.count("split_documents", s.split_documents);
            m.count("tokens_discarded", s.discarded_tail_tokens + s.final_partial_tokens);
            m.count("final_partial_tokens", s.final_partial_tokens);
            info!("{} documents -> {} sequences", s.input_documents, s.emitted_sequences);
        }
        PackMode::Long => {
            let mut docs = read_all_docs(&a.inputs, m)?;
            shuffle(&mut docs, a.seed, stream_id("pack-order"));
            let input_tokens: u64 = docs.iter().map(|d| d.len() as u64).sum();
            let n_docs = docs.len() as u64;
            let mut kept = filter_long(docs.into_iter(), a.length);
            let mut w = SeqWriter::create(&a.out, a.length)?;
            for d in kept.by_ref() {
                let seq = PackedSequence::single(d);
                *per_domain.entry(seq.domain().to_owned()).or_default() += 1;
                w.write(&seq)?;
            }
            let n = w.count();
            w.finish()?;
            m.count("input_documents", n_docs);
            m.count("input_tokens", input_tokens);
            m.count("sequences", n);
            m.count("tokens_packed", n * a.length as u64);
            m.count("filtered", kept.filtered());
            m.count("tokens_discarded", input_tokens - n * a.length as u64);
            m.count("tokens_truncated", kept.truncated_tokens());
            info!("{} documents -> {n} sequences ({} filtered)", n_docs, kept.filtered());
        }
        PackMode::Sft => {
            let mut convs = Vec::new();
            for p in &a.inputs {
                m.add_input(p)?;
                for (i, line) in open_input(p)?.lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let c: Conversation = serde_json::from_str(&line)
                        .with_context(|| format!("{}:{}: bad conversation", p.display(), i + 1))?;
                    convs.push(c);
                }
            }
            shuffle(&mut convs, a.seed, stream_id("pack-order"));
            let (examples, rejected, s) = pack_sft(&convs, a.length)?;
            for e in &rejected {
                warn!("rejected: {e}");
            }
            let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
            for ex in &examples {
                serde_json::to_writer(&mut w, ex)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            per_domain.insert("sft".into(), examples.len() as u64);
            m.count("conversations", s.conversations);
            m.count("rejected", s.rejected);
            m.count("sequences", s.emitted_examples);
            m.count("tokens_packed", s.emitted_tokens);
            m.count("truncated_conversations", s.truncated_conversations);
            m.count("tokens_discarded", s.discarded_tokens);
            m.count("dropped_no_loss", s.dropped_no_loss);
            info!("{} conversations -> {} examples", s.conversations, s.emitted_examples);
        }
    }
    m.add_output(&a.out)?;
    m.shard_domains.insert(a.out.display().to_string(), per_domain);
    Ok(Some(a.out))
}

fn load_mix_config(spec: &str) -> Result<MixConfig> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(cfg) = presets::by_name(spec) {
            return Ok(cfg);
        }
    }
    Ok(MixConfig::load(path)?)
}

fn cmd_mix(a: MixArgs, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut cfg = load_mix_config(&a.spec)?;
    cfg.mixture.seed = a.seed;
    m.seed = Some(a.seed);
    let resolved = cfg.to_toml();
    m.config_hash = sha256_hex(resolved.as_bytes());
    let pools = Pools::load_dir(&a.pools, &cfg)?;
    let report = validate_spec(&cfg.mixture, Some(&cfg.curriculum), Some(&pools.sizes()));
    if !report.is_valid() {
        for v in &report.violations {
            eprintln!("  {v}");
        }
        bail!("invalid mixture: {}", report.violations.join("; "));
    }
    for key in pools.sizes().keys() {
        m.add_input(&a.pools.join(key.file_name()))?;
    }
    let budget = a.budget_tokens.unwrap_or(cfg.curriculum.token_budget);
    let policy = match a.exhaustion {
        ExhaustionArg::Wrap => Exhaustion::Wrap,
        ExhaustionArg::Fail => Exhaustion::Fail,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let config_out = a.out.join("config.toml");
    std::fs::write(&config_out, &resolved)?;

    let draws_path = a.out.join("draws.jsonl");
    let mut draws = BufWriter::new(File::create(&draws_path)?);
    let mut writers: BTreeMap<usize, (PathBuf, SeqWriter<BufWriter<File>>)> = BTreeMap::new();
    let mut per_shard: BTreeMap<usize, BTreeMap<String, u64>> = BTreeMap::new();
    let mut domain_tokens: BTreeMap<String, u64> = BTreeMap::new();
    let mut wraps = 0u64;
    for item in sample_stream(&cfg.mixture, &cfg.curriculum, &pools, budget, policy)? {
        let (draw, seq) = item?;
        serde_json::to_writer(&mut draws, &draw)?;
        draws.write_all(b"\n")?;
        let len = draw.key.length;
        let writer = match writers.entry(len) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                let p = a.out.join(format!("mixed.{len}.seqs"));
                e.insert((p.clone(), SeqWriter::create(&p, len)?))
            }
        };
        writer.1.write(seq)?;
        *per_shard.entry(len).or_default().entry(draw.domain.clone()).or_default() += 1;
        *domain_tokens.entry(draw.domain).or_default() += draw.tokens;
        wraps = wraps.max(draw.epoch);
    }
    draws.flush()?;
    drop(draws);
    m.add_output(&config_out)?;
    m.add_output(&draws_path)?;
    let mut total = 0;
    for (len, (path, w)) in writers {
        let n = w.count();
        w.finish()?;
        m.add_output(&path)?;
        m.count("sequences", n);
        total += n * len as u64;
        m.shard_domains
            .insert(path.display().to_string(), per_shard.remove(&len).unwrap_or_default());
    }
    m.count("tokens", total);
    m.count("max_epoch", wraps);
    for (d, t) in &domain_tokens {
        m.count(&format!("tokens.{d}"), *t);
        info!("{d:<16} {:>6.2}%", 100.0 * *t as f64 / total.max(1) as f64);
    }
    Ok(Some(a.out))
}

#[derive(serde::Serialize)]
struct PlanReport<'a> {
    reorder: bool,
    linear: f64,
    #[serde(flatten)]
    report: &'a ThroughputReport,
    /// Per step, `grid[micro][device]` as global sequence indices.
    assignments: Vec<Vec<Vec<usize>>>,
}

fn cmd_plan(a: PlanArgs, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut seqs = Vec::new();
    let mut pack_length = None;
    for p in &a.inputs {
        m.add_input(p)?;
        let s = shard::read_seqs(p)?;
        if pack_length.is_some_and(|l| l != s.pack_length) && a.out.is_some() {
            bail!("inputs have different pack lengths; cannot write one output shard");
        }
        pack_length = Some(s.pack_length);
        seqs.extend(s.sequences);
    }
    let model = CostModel::with_linear(a.linear);
    let report = throughput_report(&seqs, a.devices, a.accum, &model, a.budget_tokens)?;
    let per_step = a.devices * a.accum;
    let mut assignments = Vec::with_capacity(report.steps.len());
    for (step, chunk) in seqs.chunks_exact(per_step).enumerate() {
        let costs = chunk.iter().map(|s| model.cost(s)).collect();
        let plan = if a.reorder {
            StepPlan::sorted(costs, a.devices, a.accum)?
        } else {
            StepPlan::manifest_order(costs, a.devices, a.accum)?
        };
        let base = step * per_step;
        assignments.push(plan.grid.iter().map(|r| r.iter().map(|i| base + i).collect()).collect());
    }
    let json = PlanReport {
        reorder: a.reorder,
        linear: a.linear,
        report: &report,
        assignments,
    };
    std::fs::write(&a.report, serde_json::to_string_pretty(&json)? + "\n")
        .with_context(|| format!("writing {}", a.report.display()))?;
    let csv = a.report.with_extension("csv");
    std::fs::write(&csv, report.to_csv())?;
    m.add_output(&a.report)?;
    m.add_output(&csv)?;
    if let Some(out) = &a.out {
        let order: Vec<&PackedSequence> = json.assignments.iter().flatten().flatten().map(|&i| &seqs[i]).collect();
        shard::write_seqs(out, pack_length.unwrap_or(0), order)?;
        m.add_output(out)?;
    }
    m.count("steps", report.steps.len() as u64);
    m.count("dropped_sequences", report.dropped_sequences as u64);
    m.count("tokens", report.tokens);
    println!(
        "{} steps, makespan unsorted {:.4e} sorted {:.4e}, speedup {:.2}%",
        report.steps.len(),
        report.total_unsorted,
        report.total_sorted,
        100.0 * report.speedup
    );
    Ok(Some(a.report))
}

fn cmd_rope(a: RopeArgs) -> Result<()> {
    let cfg = RopeConfig {
        original_base: a.orig_base,
        original_context: a.orig_len,
        target_context: a.target_len,
        head_dim: a.head_dim,
    };
    let base = suggested_base(&cfg)? * a.factor;
    println!("scale: {}", cfg.scale());
    println!("suggested base: {} ({base})", format_sig3(base));
    if !a.chain.is_empty() {
        let mut lengths = vec![a.target_len];
        lengths.extend(&a.chain);
        let chained = chained_base(base, &lengths, a.head_dim)?;
        println!("chained to {}: {} ({chained})", lengths.last().expect("non-empty"), format_sig3(chained));
    }
    println!(
        "recipe bases: 64K {}, 512K {}",
        format_sig3(recipe_base(Stage::One)),
        format_sig3(recipe_base(Stage::Two))
    );
    Ok(())
}

fn cmd_lossagg() -> Result<()> {
    let mut shards = Vec::new();
    let mut input = String::new();
    io::stdin().read_to_string(&mut input)?;
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: LossShard = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        shards.push(LossShard::new(s.loss_sum, s.token_count).with_context(|| format!("line {}", i + 1))?);
    }
    let out = serde_json::json!({
        "shards": shards.len(),
        "tokens": shards.iter().map(|s| s.token_count).sum::<u64>(),
        "token_avg": token_avg(&shards)?,
        "mean_of_means": mean_of_means(&shards)?,
    });
    println!("{out}");
    Ok(())
}

#[derive(serde::Deserialize, Default)]
struct SynthFile {
    client: Option<ClientSection>,
    #[serde(default)]
    synth: Option<SynthConfig>,
    #[serde(default = "default_attempts")]
    max_attempts: usize,
}

fn default_attempts() -> usize {
    3
}

#[derive(serde::Deserialize, Default)]
struct ClientSection {
    endpoint: Option<String>,
    #[serde(default)]
    model: String,
    #[serde(default)]
    temperature: f64,
    token_env: Option<String>,
}

fn cmd_synthgen(a: SynthArgs, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    let file: SynthFile = match &a.spec {
        Some(p) => {
            m.add_input(p)?;
            let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&raw).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthFile {
            max_attempts: default_attempts(),
            ..Default::default()
        },
    };
    m.seed = Some(a.seed);
    let client: Box<dyn GenerationClient> = match (&a.replay, &a.endpoint) {
        (Some(log), _) => {
            m.add_input(log)?;
            let records = RequestLog::read(open_input(log)?)?;
            Box::new(ReplayClient::new(&records))
        }
        (None, endpoint) => {
            let section = file.client.unwrap_or_default();
            let Some(endpoint) = endpoint.clone().or(section.endpoint) else {
                bail!("no generation endpoint: pass --endpoint, --replay, or set client.endpoint");
            };
            let cfg = longmix::synthgen::HttpConfig {
                endpoint,
                model: section.model,
                temperature: section.temperature,
                token_env: section.token_env.unwrap_or_else(|| "LONGMIX_API_KEY".into()),
            };
            Box::new(RetryingClient {
                inner: longmix::synthgen::HttpClient::new(cfg),
                max_attempts: file.max_attempts,
            })
        }
    };
    let tokenizer = load_tokenizer(a.vocab.as_deref())?;
    m.add_input(&a.input)?;
    let log_path = PathBuf::from(format!("{}.requests.jsonl", a.out.display()));
    let log = RequestLog::with_sink(Box::new(BufWriter::new(File::create(&log_path)?)));
    let gen = SynthGenerator::new(client.as_ref(), &tokenizer, log, file.synth.unwrap_or_default());
    let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    let (mut made, mut rejected, mut tokens, mut loss_tokens) = (0u64, 0u64, 0u64, 0u64);
    for (i, doc) in DocReader::open(&a.input)?.enumerate() {
        if a.limit.is_some_and(|l| i >= l) {
            break;
        }
        let doc = doc?;
        let seed = a.seed ^ stream_id(&doc.id);
        match gen.example(a.kind, &doc, seed) {
            Ok(ex) => {
                serde_json::to_writer(&mut out, &ex)?;
                out.write_all(b"\n")?;
                made += 1;
                tokens += ex.example.len() as u64;
                loss_tokens += ex.example.loss_tokens() as u64;
            }
            Err(e @ (Error::Generation(_) | Error::Invalid(_))) => {
                warn!("{}: {e}", doc.id);
                rejected += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.flush()?;
    drop(gen);
    if made == 0 && rejected > 0 {
        bail!("every document was rejected");
    }
    m.count("examples", made);
    m.count("rejected", rejected);
    m.count("tokens", tokens);
    m.count("loss_tokens", loss_tokens);
    m.add_output(&a.out)?;
    m.add_output(&log_path)?;
    info!("{made} examples, {rejected} rejected");
    Ok(Some(a.out))
}

fn write_or_print(out: Option<&Path>, text: &str, m: &mut RunManifest) -> Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            m.add_output(p)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_labeled(path: &Path) -> Result<Vec<Labeled>> {
    let mut out = Vec::new();
    for (i, line) in open_input(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn cmd_evalgen(c: EvalCommand, m: &mut RunManifest) -> Result<Option<PathBuf>> {
    match c {
        EvalCommand::Kv {
            pairs,
            target_tokens,
            seed,
            out,
        } => {
            m.seed = Some(seed);
            let task = match target_tokens {
                Some(t) => {
                    let tok = WhitespaceTokenizer::new();
                    fit_kv(t, &KvConfig::hex(pairs.unwrap_or(1), seed), &tok)?
                }
                None => gen_kv(&KvConfig::hex(pairs.expect("required by clap"), seed))?,
            };
            m.count("pairs", task.pairs.len() as u64);
            write_or_print(out.as_deref(), &(task.to_json_line() + "\n"), m)?;
            Ok(out)
        }
        EvalCommand::Icl {
            dataset,
            queries,
            k,
            seed,
            out,
        } => {
            m.seed = Some(seed);
            m.add_input(&dataset)?;
            let train = read_labeled(&dataset)?;
            let task = match &queries {
                Some(q) => {
                    m.add_input(q)?;
                    gen_icl_split(&train, &read_labeled(q)?, k, seed)?
                }
                None => gen_icl(&train, k, seed)?,
            };
            m.count("classes", task.classes.len() as u64);
            m.count("demos", task.demos.len() as u64);
            write_or_print(out.as_deref(), &task.to_jsonl(), m)?;
            Ok(out)
        }
    }
}

fn cmd_verify(manifests: &[PathBuf]) -> Result<()> {
    let mut bad = 0;
    for p in manifests {
        let m = RunManifest::read(p)?;
        let dir = p.parent().unwrap_or(Path::new("."));
        let mismatches = m.verify(dir);
        for x in &mismatches {
            println!(
                "MISMATCH {} expected {} got {}",
                x.path,
                x.expected,
                x.actual.as_deref().unwrap_or("(missing)")
            );
        }
        if mismatches.is_empty() {
            println!("ok {} ({} outputs)", p.display(), m.outputs.len());
        }
        bad += mismatches.len();
    }
    if bad > 0 {
        bail!("{bad} output digests do not match");
    }
    Ok(())
}
