//! Stage-wise domain mixing.
//!
//! A [`MixtureSpec`] assigns each domain a weight inside its group (long or
//! short); `long_ratio` splits tokens between the groups. A
//! [`StageCurriculum`] further splits each long domain across pack-length
//! classes. Sampling picks one whole packed sequence per draw. Each
//! (domain, length) leaf is drawn with probability proportional to
//! `target_token_fraction / length`, so expected token shares match the
//! targets even when leaves have different sequence lengths; with a single
//! length class this is exactly "group by `long_ratio`, then domain by weight".

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::packer::PackedSequence;
use crate::rng::{stream_id, stream_rng, StreamRng};
use crate::{Error, Result};

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainWeight {
    pub name: String,
    pub group: Group,
    pub weight: f64,
    /// Pool name; defaults to the domain name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
}

impl DomainWeight {
    pub fn pool(&self) -> &str {
        self.pool.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub stage: String,
    #[serde(default)]
    pub seed: u64,
    pub long_ratio: f64,
    #[serde(rename = "domain")]
    pub domains: Vec<DomainWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSplit {
    pub domain: String,
    pub length: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCurriculum {
    pub token_budget: u64,
    pub batch_tokens: u64,
    /// Pack length for domains without an explicit split.
    pub default_length: usize,
    #[serde(default, rename = "split")]
    pub splits: Vec<LengthSplit>,
}

impl StageCurriculum {
    /// Length classes and token fractions for one domain.
    pub fn classes(&self, domain: &str) -> Vec<(usize, f64)> {
        let own: Vec<_> = self
            .splits
            .iter()
            .filter(|s| s.domain == domain)
            .map(|s| (s.length, s.fraction))
            .collect();
        if own.is_empty() {
            vec![(self.default_length, 1.0)]
        } else {
            own
        }
    }
}

/// A mixture plus its curriculum, as stored in one config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub mixture: MixtureSpec,
    pub curriculum: StageCurriculum,
}

impl MixConfig {
    pub fn from_toml(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mix config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoolKey {
    pub pool: String,
    pub length: usize,
}

impl PoolKey {
    pub fn new(pool: impl Into<String>, length: usize) -> Self {
        Self {
            pool: pool.into(),
            length,
        }
    }

    /// File name of this pool inside a pool directory.
    pub fn file_name(&self) -> String {
        format!("{}.{}.seqs", self.pool, self.length)
    }
}

impl std::fmt::Display for PoolKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.pool, self.length)
    }
}

/// Every pool a spec + curriculum refers to.
pub fn required_pools(spec: &MixtureSpec, curriculum: &StageCurriculum) -> BTreeSet<PoolKey> {
    spec.domains
        .iter()
        .flat_map(|d| {
            let classes = match d.group {
                Group::Long => curriculum.classes(&d.name),
                Group::Short => vec![(curriculum.default_length, 1.0)],
            };
            classes
                .into_iter()
                .filter(|&(_, f)| f > 0.0)
                .map(|(len, _)| PoolKey::new(d.pool(), len))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn short_float(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Check every mixture invariant. `pools`, when given, maps each available
/// pool to its sequence count.
pub fn validate_spec(
    spec: &MixtureSpec,
    curriculum: Option<&StageCurriculum>,
    pools: Option<&BTreeMap<PoolKey, usize>>,
) -> ValidationReport {
    let mut v = Vec::new();
    if !(0.0..=1.0).contains(&spec.long_ratio) {
        v.push(format!("long_ratio {} outside [0, 1]", spec.long_ratio));
    }
    let mut seen = HashSet::new();
    for d in &spec.domains {
        if !seen.insert(d.name.as_str()) {
            v.push(format!("domain {} declared twice", d.name));
        }
        if !(0.0..=1.0).contains(&d.weight) {
            v.push(format!("domain {} weight {} outside [0, 1]", d.name, d.weight));
        }
    }
    for (group, label, share) in [
        (Group::Long, "long", spec.long_ratio),
        (Group::Short, "short", 1.0 - spec.long_ratio),
    ] {
        let members: Vec<_> = spec.domains.iter().filter(|d| d.group == group).collect();
        if members.is_empty() {
            if share > 0.0 {
                v.push(format!("{label} group is empty but receives {} of tokens", short_float(share)));
            }
            continue;
        }
        let sum: f64 = members.iter().map(|d| d.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            v.push(format!("{label} group sums to {}", short_float(sum)));
        }
    }
    if let Some(c) = curriculum {
        if c.token_budget == 0 {
            v.push("token budget must be positive".into());
        }
        if c.batch_tokens == 0 {
            v.push("batch size must be positive".into());
        }
        if c.default_length == 0 {
            v.push("default length must be positive".into());
        }
        let split_domains: BTreeSet<_> = c.splits.iter().map(|s| s.domain.as_str()).collect();
        for domain in split_domains {
            match spec.domains.iter().find(|d| d.name == domain) {
                None => v.push(format!("curriculum splits unknown domain {domain}")),
                Some(d) if d.group == Group::Short => {
                    v.push(format!("curriculum splits short domain {domain}"))
                }
                Some(_) => {}
            }
            let classes = c.classes(domain);
            let sum: f64 = classes.iter().map(|&(_, f)| f).sum();
            if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
                v.push(format!("{domain} length split sums to {}", short_float(sum)));
            }
            if classes.iter().any(|&(l, f)| l == 0 || !(0.0..=1.0).contains(&f)) {
                v.push(format!("{domain} has an invalid length class"));
            }
        }
        if let Some(pools) = pools {
            for key in required_pools(spec, c) {
                match pools.get(&key) {
                    None => v.push(format!("pool not found: {key}")),
                    Some(0) => v.push(format!("pool is empty: {key}")),
                    Some(_) => {}
                }
            }
        }
    }
    ValidationReport { violations: v }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exhaustion {
    /// Start a new epoch with a fresh shuffle.
    #[default]
    Wrap,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub domain: String,
    pub key: PoolKey,
    /// Index of the sequence within its pool.
    pub index: usize,
    pub epoch: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone)]
struct Leaf {
    domain: String,
    key: PoolKey,
}

#[derive(Debug)]
struct Cursor {
    order: Vec<usize>,
    next: usize,
    epoch: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixStats {
    pub sequences: u64,
    pub tokens: u64,
    pub domain_tokens: BTreeMap<String, u64>,
    pub leaf_tokens: BTreeMap<String, u64>,
    /// Number of times any pool wrapped into a new epoch.
    pub wraps: u64,
}

impl MixStats {
    pub fn fraction(&self, domain: &str) -> f64 {
        if self.tokens == 0 {
            return 0.0;
        }
        self.domain_tokens.get(domain).copied().unwrap_or(0) as f64 / self.tokens as f64
    }
}

/// Draws pool positions until the token budget is met.
pub struct Sampler {
    leaves: Vec<Leaf>,
    dist: Option<WeightedIndex<f64>>,
    cursors: BTreeMap<PoolKey, Cursor>,
    rng: StreamRng,
    seed: u64,
    budget: u64,
    policy: Exhaustion,
    stats: MixStats,
    failed: bool,
}

impl Sampler {
    pub fn new(
        spec: &MixtureSpec,
        curriculum: &StageCurriculum,
        pool_sizes: &BTreeMap<PoolKey, usize>,
        budget: u64,
        policy: Exhaustion,
    ) -> Result<Self> {
        let report = validate_spec(spec, Some(curriculum), Some(pool_sizes));
        if !report.is_valid() {
            let joined = report.violations.join("; ");
            return Err(match report.violations.iter().find(|m| m.starts_with("pool not found: ")) {
                Some(m) => Error::PoolNotFound(m["pool not found: ".len()..].to_owned()),
                None => Error::Config(joined),
            });
        }
        let mut leaves = Vec::new();
        let mut weights = Vec::new();
        for d in &spec.domains {
            let share = match d.group {
                Group::Long => spec.long_ratio,
                Group::Short => 1.0 - spec.long_ratio,
            };
            let classes = match d.group {
                Group::Long => curriculum.classes(&d.name),
                Group::Short => vec![(curriculum.default_length, 1.0)],
            };
            for (length, fraction) in classes {
                let target = share * d.weight * fraction;
                if target <= 0.0 {
                    continue;
                }
                leaves.push(Leaf {
                    domain: d.name.clone(),
                    key: PoolKey::new(d.pool(), length),
                });
                weights.push(target / length as f64);
            }
        }
        let dist = if weights.is_empty() {
            None
        } else {
            Some(WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?)
        };
        let cursors = leaves
            .iter()
            .map(|l| {
                let n = pool_sizes[&l.key];
                (l.key.clone(), Cursor {
                    order: epoch_order(n, spec.seed, &l.key, 0),
                    next: 0,
                    epoch: 0,
                })
            })
            .collect();
        Ok(Self {
            leaves,
            dist,
            cursors,
            rng: stream_rng(spec.seed, stream_id("mixture-draws")),
            seed: spec.seed,
            budget,
            policy,
            stats: MixStats::default(),
            failed: false,
        })
    }

    pub fn stats(&self) -> &MixStats {
        &self.stats
    }

    pub fn into_stats(self) -> MixStats {
        self.stats
    }
}

fn epoch_order(n: usize, seed: u64, key: &PoolKey, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let stream = stream_id(&key.to_string()) ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    crate::rng::shuffle(&mut order, seed, stream);
    order
}

impl Iterator for Sampler {
    type Item = Result<Draw>;

    fn next(&mut self) -> Option<Result<Draw>> {
        if self.failed || self.stats.tokens >= self.budget {
            return None;
        }
        let leaf = &self.leaves[self.dist.as_ref()?.sample(&mut self.rng)];
        let cursor = self.cursors.get_mut(&leaf.key).expect("cursor per leaf");
        if cursor.next == cursor.order.len() {
            if self.policy == Exhaustion::Fail {
                self.failed = true;
                return Some(Err(Error::PoolExhausted(leaf.key.to_string())));
            }
            cursor.epoch += 1;
            cursor.order = epoch_order(cursor.order.len(), self.seed, &leaf.key, cursor.epoch);
            cursor.next = 0;
            self.stats.wraps += 1;
        }
        let index = cursor.order[cursor.next];
        cursor.next += 1;
        let tokens = leaf.key.length as u64;
        self.stats.sequences += 1;
        self.stats.tokens += tokens;
        *self.stats.domain_tokens.entry(leaf.domain.clone()).or_default() += tokens;
        *self.stats.leaf_tokens.entry(leaf.key.to_string()).or_default() += tokens;
        Some(Ok(Draw {
            domain: leaf.domain.clone(),
            key: leaf.key.clone(),
            index,
            epoch: cursor.epoch,
            tokens,
        }))
    }
}

/// Packed sequences grouped by pool and length class.
#[derive(Debug, Default, Clone)]
pub struct Pools {
    pools: BTreeMap<PoolKey, Vec<PackedSequence>>,
}

impl Pools {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: PoolKey, seqs: Vec<PackedSequence>) -> Result<()> {
        if let Some(bad) = seqs.iter().find(|s| s.len() != key.length) {
            return Err(Error::Invalid(format!(
                "pool {key} holds a sequence of {} tokens",
                bad.len()
            )));
        }
        self.pools.insert(key, seqs);
        Ok(())
    }

    pub fn get(&self, key: &PoolKey) -> Option<&[PackedSequence]> {
        self.pools.get(key).map(Vec::as_slice)
    }

    pub fn sizes(&self) -> BTreeMap<PoolKey, usize> {
        self.pools.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    /// Load every pool the config needs from `dir`, skipping missing files
    /// (validation reports them).
    pub fn load_dir(dir: &Path, cfg: &MixConfig) -> Result<Self> {
        let mut pools = Self::new();
        for key in required_pools(&cfg.mixture, &cfg.curriculum) {
            let path = dir.join(key.file_name());
            if !path.exists() {
                continue;
            }
            let shard = crate::shard::read_seqs(&path)?;
            if shard.pack_length != key.length {
                return Err(Error::Shard(format!(
                    "{} has pack length {}, expected {}",
                    path.display(),
                    shard.pack_length,
                    key.length
                )));
            }
            pools.insert(key, shard.sequences)?;
        }
        Ok(pools)
    }
}

/// Sample `budget` tokens of sequences. The output is a pure function of
/// (spec, curriculum, pools, seed).
pub fn sample_stream<'p>(
    spec: &MixtureSpec,
    curriculum: &StageCurriculum,
    pools: &'p Pools,
    budget: u64,
    policy: Exhaustion,
) -> Result<impl Iterator<Item = Result<(Draw, &'p PackedSequence)>> + 'p> {
    let sampler = Sampler::new(spec, curriculum, &pools.sizes(), budget, policy)?;
    Ok(sampler.map(move |d| {
        d.map(|draw| {
            let seq = &pools.get(&draw.key).expect("validated pool")[draw.index];
            (draw, seq)
        })
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub removed_sequences: usize,
    pub overlapping_origins: usize,
}

/// Drop sequences from the 64K-class pool whose source documents also appear
/// in the 512K-class pool.
pub fn dedup_pools(
    pool_64k: Vec<PackedSequence>,
    pool_512k: &[PackedSequence],
) -> (Vec<PackedSequence>, DedupReport) {
    let long_origins: HashSet<&str> = pool_512k.iter().flat_map(|s| s.origin_ids()).collect();
    let mut overlapping = HashSet::new();
    let before = pool_64k.len();
    let kept: Vec<_> = pool_64k
        .into_iter()
        .filter(|s| {
            let hits: Vec<_> = s.origin_ids().filter(|o| long_origins.contains(o)).map(str::to_owned).collect();
            let keep = hits.is_empty();
            overlapping.extend(hits);
            keep
        })
        .collect();
    let report = DedupReport {
        removed_sequences: before - kept.len(),
        overlapping_origins: overlapping.len(),
    };
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::presets;

    fn dw(name: &str, group: Group, weight: f64) -> DomainWeight {
        DomainWeight {
            name: name.into(),
            group,
            weight,
            pool: None,
        }
    }

    fn seq(origin: &str, len: usize) -> PackedSequence {
        PackedSequence::single(Document::new(origin, "books", vec![1; len]).unwrap())
    }

    fn simple_spec(long_ratio: f64) -> (MixtureSpec, StageCurriculum) {
        let spec = MixtureSpec {
            stage: "test".into(),
            seed: 3,
            long_ratio,
            domains: vec![
                dw("books", Group::Long, 0.5),
                dw("code", Group::Long, 0.5),
                dw("short", Group::Short, 1.0),
            ],
        };
        let cur = StageCurriculum {
            token_budget: 1,
            batch_tokens: 1,
            default_length: 64,
            splits: vec![],
        };
        (spec, cur)
    }

    fn sizes(keys: &[(&str, usize)], n: usize) -> BTreeMap<PoolKey, usize> {
        keys.iter().map(|&(p, l)| (PoolKey::new(p, l), n)).collect()
    }

    #[test]
    fn shortmix_presets_validate() {
        for cfg in [presets::ablation(), presets::stage1(), presets::stage2()] {
            let r = validate_spec(&cfg.mixture, Some(&cfg.curriculum), None);
            assert!(r.is_valid(), "{}: {:?}", cfg.mixture.stage, r.violations);
        }
    }

    #[test]
    fn bad_short_sum_reported() {
        let (mut spec, _) = simple_spec(0.6);
        spec.domains[2].weight = 0.5;
        spec.domains.push(dw("other", Group::Short, 0.4));
        let r = validate_spec(&spec, None, None);
        assert_eq!(r.violations, vec!["short group sums to 0.9".to_string()]);
    }

    #[test]
    fn missing_pool_reported() {
        let (spec, cur) = simple_spec(0.6);
        let r = validate_spec(&spec, Some(&cur), Some(&sizes(&[("books", 64), ("code", 64)], 3)));
        assert_eq!(r.violations, vec!["pool not found: short@64".to_string()]);
        let err = Sampler::new(&spec, &cur, &sizes(&[("books", 64)], 3), 100, Exhaustion::Wrap).err().unwrap();
        assert!(err.to_string().starts_with("pool not found"));
    }

    #[test]
    fn long_ratio_one_has_no_short_tokens() {
        let (mut spec, cur) = simple_spec(1.0);
        spec.domains.pop();
        let s = Sampler::new(&spec, &cur, &sizes(&[("books", 64), ("code", 64)], 5), 64 * 500, Exhaustion::Wrap).unwrap();
        let mut s = s;
        for d in s.by_ref() {
            d.unwrap();
        }
        assert_eq!(s.stats().fraction("short"), 0.0);
        assert_eq!(s.stats().tokens, 64 * 500);
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let (spec, cur) = simple_spec(0.6);
        let pools = sizes(&[("books", 64), ("code", 64), ("short", 64)], 7);
        let run = |spec: &MixtureSpec| {
            Sampler::new(spec, &cur, &pools, 64 * 200, Exhaustion::Wrap)
                .unwrap()
                .collect::<Result<Vec<_>>>()
                .unwrap()
        };
        assert_eq!(run(&spec), run(&spec));
        let mut other = spec.clone();
        other.seed = 4;
        assert_ne!(run(&spec), run(&other));
    }

    #[test]
    fn fail_policy_errors_on_exhaustion() {
        let (spec, cur) = simple_spec(0.6);
        let pools = sizes(&[("books", 64), ("code", 64), ("short", 64)], 1);
        let items: Vec<_> = Sampler::new(&spec, &cur, &pools, 64 * 100, Exhaustion::Fail).unwrap().collect();
        assert!(matches!(items.last(), Some(Err(Error::PoolExhausted(_)))));
        assert!(items.len() <= 4);
    }

    #[test]
    fn wrap_reshuffles_each_epoch() {
        let (mut spec, cur) = simple_spec(1.0);
        spec.domains = vec![dw("books", Group::Long, 1.0)];
        let pools = sizes(&[("books", 64)], 20);
        let draws: Vec<_> = Sampler::new(&spec, &cur, &pools, 64 * 60, Exhaustion::Wrap)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        for epoch in draws.chunks(20) {
            let mut idx: Vec<_> = epoch.iter().map(|d| d.index).collect();
            idx.sort();
            assert_eq!(idx, (0..20).collect::<Vec<_>>());
        }
        assert_ne!(draws[..20].iter().map(|d| d.index).collect::<Vec<_>>(), draws[20..40].iter().map(|d| d.index).collect::<Vec<_>>());
        assert_eq!(draws[45].epoch, 2);
    }

    #[test]
    fn sample_stream_resolves_sequences() {
        let (spec, cur) = simple_spec(0.6);
        let mut pools = Pools::new();
        for name in ["books", "code", "short"] {
            let seqs = (0..3).map(|i| seq(&format!("{name}-{i}"), 64)).collect();
            pools.insert(PoolKey::new(name, 64), seqs).unwrap();
        }
        let out: Vec<_> = sample_stream(&spec, &cur, &pools, 64 * 10, Exhaustion::Wrap)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(out.len(), 10);
        for (draw, s) in out {
            assert!(s.segments()[0].origin.starts_with(draw.key.pool.as_str()));
        }
        assert!(pools.insert(PoolKey::new("x", 8), vec![seq("a", 9)]).is_err());
    }

    #[test]
    fn dedup_cases() {
        let p64: Vec<_> = (0..6).map(|i| seq(&format!("d{i}"), 4)).collect();
        let p512 = vec![seq("d1", 4), seq("d3", 4), seq("d5", 4), seq("z", 4)];
        let (kept, report) = dedup_pools(p64.clone(), &p512);
        assert_eq!(report.removed_sequences, 3);
        assert_eq!(report.overlapping_origins, 3);
        assert_eq!(kept.len(), 3);

        let (kept, report) = dedup_pools(p64.clone(), &[seq("q", 4)]);
        assert_eq!(kept, p64);
        assert_eq!(report, DedupReport::default());

        let (kept, _) = dedup_pools(p64.clone(), &[]);
        assert_eq!(kept, p64);
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = presets::stage2();
        assert_eq!(MixConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
