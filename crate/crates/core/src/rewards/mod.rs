//! Reward components for two-stage rollouts and group-relative advantages.
//! Everything here is pure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::AnswerDistribution;
use crate::inference::{PredictionResult, ValidationReport};
use crate::metrics::jsd;
use crate::values::{matching_positions, LmhSignature, DIMENSIONS};

mod episodes;

pub use episodes::{
    build_episode, collect_rollouts, export_training_batch, read_training_batch, reweight_batch,
    rollout_groups, sample_episodes, write_training_batch, BatchHeader, BatchRecord, Episode,
    EpisodeMeta, EpisodeSet, EpisodeSkip, OptimizerSettings, RolloutGroup, ScoredRollout,
    BATCH_FORMAT_VERSION,
};

pub const DEFAULT_GROUP_SIZE: usize = 16;
/// Reward standard deviations below this are treated as zero.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lmh: f64,
    pub dist: f64,
    pub schema_a: f64,
    pub schema_b: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lmh: 0.25,
            dist: 0.45,
            schema_a: 0.15,
            schema_b: 0.15,
        }
    }
}

impl RewardWeights {
    pub fn new(lmh: f64, dist: f64, schema_a: f64, schema_b: f64) -> Result<Self> {
        let w = RewardWeights {
            lmh,
            dist,
            schema_a,
            schema_b,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lmh, self.dist, self.schema_a, self.schema_b];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain(format!(
                "reward weights must be finite and >= 0, got {all:?}"
            )));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Domain(
                "at least one reward weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_lmh: f64,
    pub r_dist: f64,
    pub r_sch_a: f64,
    pub r_sch_b: f64,
    pub total: f64,
    /// Why a component was forced to zero, if any was.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

/// Mean per-dimension exact match over the options that have a gold
/// signature. Options without one (zero support) are left out entirely.
pub fn r_lmh(
    pred: &BTreeMap<String, LmhSignature>,
    gold: &BTreeMap<String, LmhSignature>,
) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Domain("no gold signatures to score against".into()));
    }
    let mut matched = 0usize;
    for (option, g) in gold {
        let p = pred
            .get(option)
            .ok_or_else(|| Error::Domain(format!("no predicted signature for option {option}")))?;
        matched += matching_positions(p, g);
    }
    Ok(matched as f64 / (gold.len() * DIMENSIONS) as f64)
}

/// `1 - JSD`, or 0 when there is no valid prediction.
pub fn r_dist(pred: Option<&AnswerDistribution>, gold: &AnswerDistribution) -> Result<f64> {
    match pred {
        Some(p) => Ok(1.0 - jsd(p, gold)?),
        None => Ok(0.0),
    }
}

pub fn r_schema(report: Option<&ValidationReport>) -> f64 {
    if report.is_some_and(|r| r.valid) {
        1.0
    } else {
        0.0
    }
}

pub fn combine(w: &RewardWeights, r_lmh: f64, r_dist: f64, r_sch_a: f64, r_sch_b: f64) -> f64 {
    w.lmh * r_lmh + w.dist * r_dist + w.schema_a * r_sch_a + w.schema_b * r_sch_b
}

/// Scores one two-stage rollout against gold data.
pub fn score_rollout(
    rollout: &PredictionResult,
    gold_distribution: &AnswerDistribution,
    gold_signatures: &BTreeMap<String, LmhSignature>,
    weights: &RewardWeights,
) -> Result<RewardBreakdown> {
    let mut reasons = Vec::new();
    let r_sch_a = r_schema(rollout.stage_a.as_ref().map(|s| &s.report));
    let r_sch_b = r_schema(Some(&rollout.stage_b.report));
    let r_lmh = match &rollout.option_signatures {
        Some(pred) => r_lmh(pred, gold_signatures).unwrap_or_else(|e| {
            reasons.push(format!("r_lmh: {e}"));
            0.0
        }),
        None => {
            reasons.push("r_lmh: stage A produced no valid signatures".into());
            0.0
        }
    };
    let pred = rollout.normalized_distribution.as_ref();
    if pred.is_none() {
        reasons.push("r_dist: stage B produced no valid distribution".into());
    }
    let r_dist = r_dist(pred, gold_distribution)?;
    Ok(RewardBreakdown {
        r_lmh,
        r_dist,
        r_sch_a,
        r_sch_b,
        total: combine(weights, r_lmh, r_dist, r_sch_a, r_sch_b),
        reasons,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// `(r - mean) / std` with the population standard deviation; all zero
/// when the rewards do not vary.
pub fn group_advantages(rewards: &[f64]) -> Result<GroupAdvantages> {
    if rewards.len() < 2 {
        return Err(Error::Domain(format!(
            "group size must be at least 2, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("rewards must be finite".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let advantages = if std < STD_FLOOR {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        advantages,
    })
}
