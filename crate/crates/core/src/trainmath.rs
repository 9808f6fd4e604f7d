//! RoPE frequency-base scaling and token-averaged loss aggregation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub original_base: f64,
    pub original_context: u64,
    pub target_context: u64,
    pub head_dim: u32,
}

impl RopeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.original_base > 0.0 && self.original_base.is_finite()) {
            return Err(Error::Invalid(format!("base must be positive, got {}", self.original_base)));
        }
        if self.original_context == 0 {
            return Err(Error::Invalid("original context must be positive".into()));
        }
        if self.target_context < self.original_context {
            return Err(Error::Invalid(format!(
                "target context {} is shorter than original context {}",
                self.target_context, self.original_context
            )));
        }
        if self.head_dim < 4 || !self.head_dim.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "head dimension must be even and at least 4, got {}",
                self.head_dim
            )));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.target_context as f64 / self.original_context as f64
    }
}

/// Dynamic-NTK base: `base * t^(d / (d - 2))` with `t = target / original`.
pub fn suggested_base(cfg: &RopeConfig) -> Result<f64> {
    cfg.validate()?;
    let d = f64::from(cfg.head_dim);
    Ok(cfg.original_base * cfg.scale().powf(d / (d - 2.0)))
}

/// Apply [`suggested_base`] stage by stage, each stage starting from the
/// previous stage's base and length.
pub fn chained_base(original_base: f64, lengths: &[u64], head_dim: u32) -> Result<f64> {
    let mut base = original_base;
    for w in lengths.windows(2) {
        base = suggested_base(&RopeConfig {
            original_base: base,
            original_context: w[0],
            target_context: w[1],
            head_dim,
        })?;
    }
    Ok(base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// 64K training.
    One,
    /// 512K training.
    Two,
}

/// Bases used by the released recipe, chosen above the NTK suggestion.
pub fn recipe_base(stage: Stage) -> f64 {
    match stage {
        Stage::One => 8.0e6,
        Stage::Two => 1.28e8,
    }
}

/// Format to three significant figures, e.g. `4.13e6`.
pub fn format_sig3(x: f64) -> String {
    format!("{x:.2e}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossShard {
    pub loss_sum: f64,
    pub token_count: u64,
}

impl LossShard {
    pub fn new(loss_sum: f64, token_count: u64) -> Result<Self> {
        if token_count == 0 && loss_sum != 0.0 {
            return Err(Error::Invalid("a shard without tokens must have zero loss".into()));
        }
        Ok(Self {
            loss_sum,
            token_count,
        })
    }

    pub fn merge(self, other: LossShard) -> LossShard {
        LossShard {
            loss_sum: self.loss_sum + other.loss_sum,
            token_count: self.token_count + other.token_count,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.token_count > 0).then(|| self.loss_sum / self.token_count as f64)
    }
}

/// Average over every valid token across all shards.
pub fn token_avg(shards: &[LossShard]) -> Result<f64> {
    shards
        .iter()
        .copied()
        .fold(LossShard::default(), LossShard::merge)
        .mean()
        .ok_or(Error::NoValidTokens)
}

/// Mean of per-shard means, skipping empty shards. This is what averaging
/// per-sequence losses across devices computes.
pub fn mean_of_means(shards: &[LossShard]) -> Result<f64> {
    let means: Vec<f64> = shards.iter().filter_map(LossShard::mean).collect();
    if means.is_empty() {
        return Err(Error::NoValidTokens);
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}
