//! Optimizer-step planning under a variable-length attention cost model.
//!
//! One optimizer step runs `accum_steps` micro-steps; in each, `devices`
//! minibatches run concurrently and the slowest one sets the pace. The modeled
//! wall time of a step is therefore the sum over micro-steps of the maximum
//! minibatch cost. Sorting a step's minibatches by cost and grouping them in
//! rank order places similar costs in the same micro-step.

use serde::{Deserialize, Serialize};

use crate::packer::PackedSequence;
use crate::{Error, Result};

/// Attention work of a packed sequence: sum of squared segment lengths, plus
/// an optional per-token term for non-attention work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub linear: f64,
}

impl CostModel {
    pub fn with_linear(linear: f64) -> Self {
        Self { linear }
    }

    pub fn segments_cost(&self, lengths: impl IntoIterator<Item = usize>) -> f64 {
        let (quad, total) = lengths.into_iter().fold((0.0, 0usize), |(q, t), l| {
            let l64 = l as f64;
            (q + l64 * l64, t + l)
        });
        quad + self.linear * total as f64
    }

    pub fn cost(&self, seq: &PackedSequence) -> f64 {
        self.segments_cost(seq.segment_lengths())
    }

    /// Cost of the same tokens under full (unsegmented) attention.
    pub fn full_attention_cost(&self, len: usize) -> f64 {
        self.segments_cost([len])
    }
}

pub fn cost(seq: &PackedSequence, model: &CostModel) -> f64 {
    model.cost(seq)
}

/// Assignment of one optimizer step's minibatches to (micro-step, device).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub devices: usize,
    pub accum_steps: usize,
    /// `grid[micro][device]` indexes into `costs`.
    pub grid: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
}

impl StepPlan {
    fn check(costs: &[f64], devices: usize, accum_steps: usize) -> Result<()> {
        if devices == 0 || accum_steps == 0 {
            return Err(Error::Invalid("devices and accumulation steps must be positive".into()));
        }
        if costs.len() != devices * accum_steps {
            return Err(Error::Invalid(format!(
                "{} minibatches for {devices} devices x {accum_steps} accumulation steps",
                costs.len()
            )));
        }
        Ok(())
    }

    fn from_order(order: Vec<usize>, costs: Vec<f64>, devices: usize, accum_steps: usize) -> Self {
        let grid = order.chunks(devices).map(<[usize]>::to_vec).collect();
        Self {
            devices,
            accum_steps,
            grid,
            costs,
        }
    }

    /// Micro-step `k` takes minibatches `[kD, (k+1)D)` as listed.
    pub fn manifest_order(costs: Vec<f64>, devices: usize, accum_steps: usize) -> Result<Self> {
        Self::check(&costs, devices, accum_steps)?;
        let order = (0..costs.len()).collect();
        Ok(Self::from_order(order, costs, devices, accum_steps))
    }

    /// Sort ascending by cost (ties keep listing order), then group by rank.
    pub fn sorted(costs: Vec<f64>, devices: usize, accum_steps: usize) -> Result<Self> {
        Self::check(&costs, devices, accum_steps)?;
        let mut order: Vec<usize> = (0..costs.len()).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        Ok(Self::from_order(order, costs, devices, accum_steps))
    }

    pub fn makespan(&self) -> f64 {
        self.grid
            .iter()
            .map(|micro| micro.iter().map(|&i| self.costs[i]).fold(0.0, f64::max))
            .sum()
    }

    /// Minibatch indices in grid order.
    pub fn assignment(&self) -> impl Iterator<Item = usize> + '_ {
        self.grid.iter().flatten().copied()
    }
}

pub fn reorder(
    minibatches: &[PackedSequence],
    devices: usize,
    accum_steps: usize,
    model: &CostModel,
) -> Result<StepPlan> {
    StepPlan::sorted(minibatches.iter().map(|s| model.cost(s)).collect(), devices, accum_steps)
}

pub fn makespan(plan: &StepPlan) -> f64 {
    plan.makespan()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub unsorted: f64,
    pub sorted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub devices: usize,
    pub accum_steps: usize,
    pub steps: Vec<StepRow>,
    /// Trailing sequences that do not fill a whole step.
    pub dropped_sequences: usize,
    pub total_unsorted: f64,
    pub total_sorted: f64,
    /// `total_unsorted / total_sorted - 1`.
    pub speedup: f64,
    pub tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_progress: Option<f64>,
}

impl ThroughputReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,unsorted_makespan,sorted_makespan\n");
        for r in &self.steps {
            out.push_str(&format!("{},{},{}\n", r.step, r.unsorted, r.sorted));
        }
        out
    }
}

/// Compare manifest-order and sorted plans over consecutive steps of `D * A`
/// sequences.
pub fn throughput_report(
    seqs: &[PackedSequence],
    devices: usize,
    accum_steps: usize,
    model: &CostModel,
    budget_tokens: Option<u64>,
) -> Result<ThroughputReport> {
    if devices == 0 || accum_steps == 0 {
        return Err(Error::Invalid("devices and accumulation steps must be positive".into()));
    }
    let per_step = devices * accum_steps;
    let mut steps = Vec::new();
    let mut tokens = 0u64;
    for (step, chunk) in seqs.chunks_exact(per_step).enumerate() {
        let costs: Vec<f64> = chunk.iter().map(|s| model.cost(s)).collect();
        tokens += chunk.iter().map(|s| s.len() as u64).sum::<u64>();
        let unsorted = StepPlan::manifest_order(costs.clone(), devices, accum_steps)?.makespan();
        let sorted = StepPlan::sorted(costs, devices, accum_steps)?.makespan();
        steps.push(StepRow { step, unsorted, sorted });
    }
    let total_unsorted: f64 = steps.iter().map(|r| r.unsorted).sum();
    let total_sorted: f64 = steps.iter().map(|r| r.sorted).sum();
    let speedup = if total_sorted > 0.0 {
        total_unsorted / total_sorted - 1.0
    } else {
        0.0
    };
    Ok(ThroughputReport {
        devices,
        accum_steps,
        dropped_sequences: seqs.len() % per_step,
        steps,
        total_unsorted,
        total_sorted,
        speedup,
        tokens,
        budget_tokens,
        budget_progress: budget_tokens.map(|b| tokens as f64 / b as f64),
    })
}
