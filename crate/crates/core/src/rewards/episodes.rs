//! Training episodes built from the bank, rollout collection, and the batch
//! file handed to an external trainer.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{group_advantages, score_rollout, RewardBreakdown, RewardWeights};
use crate::error::{Error, Result};
use crate::evidence::{AnswerDistribution, GroupKey, SurveyItem};
use crate::inference::{predict_with_evidence, InferenceConfig, PredictionResult, Question};
use crate::llm::LlmClient;
use crate::retrieval::{RetrievalQuery, RetrievedEvidence, Retriever};
use crate::values::{LmhSignature, Thresholds};

pub const BATCH_FORMAT_VERSION: u32 = 1;

/// A bank item posed as an unseen question to one group, with the bank's
/// own answers as supervision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub target_item: SurveyItem,
    pub group: GroupKey,
    pub group_profile: LmhSignature,
    pub support: u64,
    /// Retrieved with the target item excluded.
    pub evidence: RetrievedEvidence,
    pub gold_distribution: AnswerDistribution,
    pub gold_signatures: BTreeMap<String, LmhSignature>,
}

impl Episode {
    pub fn meta(&self) -> EpisodeMeta {
        EpisodeMeta {
            episode_id: self.episode_id.clone(),
            group: self.group.clone(),
            target_item_id: self.target_item.item_id.clone(),
            support: self.support,
            evidence_item_ids: self.evidence.item_ids().map(str::to_string).collect(),
            gold_distribution: self.gold_distribution.clone(),
            gold_signatures: self.gold_signatures.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub episode_id: String,
    pub group: GroupKey,
    pub target_item_id: String,
    pub support: u64,
    pub evidence_item_ids: Vec<String>,
    pub gold_distribution: AnswerDistribution,
    pub gold_signatures: BTreeMap<String, LmhSignature>,
}

pub fn build_episode(
    retriever: &Retriever<'_>,
    group: &GroupKey,
    item_id: &str,
    k: usize,
    n_min: u64,
) -> Result<Episode> {
    let bank = retriever.bank();
    let group_evidence = bank
        .group(group)
        .ok_or_else(|| Error::UnknownGroup(group.to_string()))?;
    let target = group_evidence.items.get(item_id).ok_or_else(|| {
        Error::Domain(format!("item {item_id} has no evidence for group {group}"))
    })?;
    if target.support < n_min {
        return Err(Error::Domain(format!(
            "item {item_id} has support {} in group {group}, below {n_min}",
            target.support
        )));
    }
    let query = RetrievalQuery {
        question_text: target.item.question_text.clone(),
        instruction: target.item.instruction.clone(),
        group: group.clone(),
        k,
        n_min,
        exclude_item_ids: BTreeSet::from([item_id.to_string()]),
    };
    let evidence = retriever.retrieve(&query)?;
    Ok(Episode {
        episode_id: format!("{group}/{item_id}"),
        target_item: target.item.clone(),
        group: group.clone(),
        group_profile: group_evidence.profile,
        support: target.support,
        evidence,
        gold_distribution: target.distribution.clone(),
        gold_signatures: target.gold_signatures(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSkip {
    pub group: GroupKey,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSet {
    pub episodes: Vec<Episode>,
    pub skipped: Vec<EpisodeSkip>,
}

/// Draws up to `count` distinct (group, item) episodes from the items with
/// support of at least `n_min`. The draw is a seeded shuffle of the
/// eligible pairs in (group list order, item id) order.
pub fn sample_episodes(
    retriever: &Retriever<'_>,
    groups: &[GroupKey],
    count: usize,
    k: usize,
    n_min: u64,
    seed: u64,
) -> Result<EpisodeSet> {
    let bank = retriever.bank();
    let mut skipped = Vec::new();
    let mut eligible = Vec::new();
    for g in groups {
        let ge = bank
            .group(g)
            .ok_or_else(|| Error::UnknownGroup(g.to_string()))?;
        let before = eligible.len();
        eligible.extend(
            ge.items
                .values()
                .filter(|e| e.support >= n_min)
                .map(|e| (g, e.item.item_id.as_str())),
        );
        let starved = ge.items.len() - (eligible.len() - before);
        if starved > 0 {
            skipped.push(EpisodeSkip {
                group: g.clone(),
                reason: format!(
                    "{starved} of {} items have support below {n_min}",
                    ge.items.len()
                ),
            });
        }
    }
    if eligible.len() < count {
        log::warn!(
            "only {} eligible episodes for {count} requested",
            eligible.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    eligible.truncate(count);
    let episodes = eligible
        .into_iter()
        .map(|(g, id)| build_episode(retriever, g, id, k, n_min))
        .collect::<Result<_>>()?;
    Ok(EpisodeSet { episodes, skipped })
}

/// `group_size` independent rollouts of the full two-stage pipeline on the
/// episode's evidence. Rollout `i` decodes with seed `seed + i`, and no
/// stage is retried: each rollout is one policy sample, so schema failures
/// must reach the schema rewards.
pub fn collect_rollouts(
    episode: &Episode,
    llm: &dyn LlmClient,
    config: &InferenceConfig,
    group_size: usize,
    seed: u64,
) -> Result<Vec<PredictionResult>> {
    let question = Question::from(&episode.target_item);
    (0..group_size)
        .map(|i| {
            let mut cfg = config.clone();
            cfg.retries = 0;
            cfg.decoding.seed = Some(seed.wrapping_add(i as u64));
            predict_with_evidence(
                &question,
                &episode.group,
                Some(&episode.group_profile),
                &episode.evidence,
                llm,
                &cfg,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRollout {
    pub rollout_index: usize,
    pub rollout: PredictionResult,
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub episode: EpisodeMeta,
    pub rollouts: Vec<ScoredRollout>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn score(
        episode: &Episode,
        rollouts: Vec<PredictionResult>,
        weights: &RewardWeights,
    ) -> Result<Self> {
        let scored: Vec<ScoredRollout> = rollouts
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let breakdown = score_rollout(
                    &r,
                    &episode.gold_distribution,
                    &episode.gold_signatures,
                    weights,
                )?;
                Ok(ScoredRollout {
                    rollout_index: i,
                    rollout: r,
                    breakdown,
                })
            })
            .collect::<Result<_>>()?;
        let totals: Vec<f64> = scored.iter().map(|s| s.breakdown.total).collect();
        let advantages = group_advantages(&totals)?.advantages;
        Ok(RolloutGroup {
            episode: episode.meta(),
            rollouts: scored,
            advantages,
        })
    }
}

/// Collects and scores `group_size` rollouts for every episode, running up
/// to `max_in_flight` episodes at once. Episode `i` uses decoding seeds
/// starting at `base_seed + i * group_size`.
pub fn rollout_groups(
    episodes: &[Episode],
    llm: &dyn LlmClient,
    config: &InferenceConfig,
    group_size: usize,
    base_seed: u64,
    weights: &RewardWeights,
    max_in_flight: usize,
) -> Result<Vec<RolloutGroup>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    pool.install(|| {
        episodes
            .par_iter()
            .enumerate()
            .map(|(i, ep)| {
                let seed = base_seed.wrapping_add((i * group_size) as u64);
                let rollouts = collect_rollouts(ep, llm, config, group_size, seed)?;
                RolloutGroup::score(ep, rollouts, weights)
            })
            .collect()
    })
}

/// Optimizer settings recorded for the external trainer; nothing here
/// reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            learning_rate: 1e-6,
            batch_size: 32,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub format_version: u32,
    pub weights: RewardWeights,
    pub group_size: usize,
    pub thresholds: Thresholds,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
    pub groups: usize,
    pub records: usize,
}

impl BatchHeader {
    pub fn new(
        weights: RewardWeights,
        group_size: usize,
        thresholds: Thresholds,
        seed: u64,
    ) -> Self {
        BatchHeader {
            format_version: BATCH_FORMAT_VERSION,
            weights,
            group_size,
            thresholds,
            optimizer: OptimizerSettings::default(),
            seed,
            groups: 0,
            records: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub episode: EpisodeMeta,
    pub rollout_index: usize,
    #[serde(default)]
    pub stage_a_prompt: Option<String>,
    #[serde(default)]
    pub stage_a_completion: Option<String>,
    pub stage_b_prompt: String,
    pub stage_b_completion: String,
    pub breakdown: RewardBreakdown,
    pub advantage: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum BatchLine {
    Header(BatchHeader),
    Rollout(BatchRecord),
}

/// Writes a header line followed by one line per rollout. Every group must
/// hold exactly `header.group_size` rollouts. Returns the header as written.
pub fn export_training_batch(
    path: &Path,
    header: &BatchHeader,
    groups: &[RolloutGroup],
) -> Result<BatchHeader> {
    for g in groups {
        if g.rollouts.len() != header.group_size || g.advantages.len() != header.group_size {
            return Err(Error::Domain(format!(
                "episode {} has {} rollouts, expected a complete group of {}",
                g.episode.episode_id,
                g.rollouts.len(),
                header.group_size
            )));
        }
    }
    let header = BatchHeader {
        groups: groups.len(),
        records: groups.len() * header.group_size,
        ..header.clone()
    };
    let mut records = Vec::with_capacity(header.records);
    for g in groups {
        for (s, advantage) in g.rollouts.iter().zip(&g.advantages) {
            let a = s.rollout.stage_a.as_ref();
            records.push(BatchRecord {
                episode: g.episode.clone(),
                rollout_index: s.rollout_index,
                stage_a_prompt: a.map(|a| a.prompt.clone()),
                stage_a_completion: a.map(|a| a.raw().to_string()),
                stage_b_prompt: s.rollout.stage_b.prompt.clone(),
                stage_b_completion: s.rollout.stage_b.raw().to_string(),
                breakdown: s.breakdown.clone(),
                advantage: *advantage,
            });
        }
    }
    write_training_batch(path, &header, &records)?;
    Ok(header)
}

pub fn read_training_batch(path: &Path) -> Result<(BatchHeader, Vec<BatchRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let parsed: BatchLine = serde_json::from_str(line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        match parsed {
            BatchLine::Header(h) if header.is_none() && i == 0 => header = Some(h),
            BatchLine::Header(_) => {
                return Err(Error::Input(format!(
                    "{}:{}: unexpected header",
                    path.display(),
                    i + 1
                )));
            }
            BatchLine::Rollout(r) => records.push(r),
        }
    }
    let header =
        header.ok_or_else(|| Error::Input(format!("{}: missing header", path.display())))?;
    if header.records != records.len() {
        return Err(Error::Input(format!(
            "{}: header announces {} records, found {}",
            path.display(),
            header.records,
            records.len()
        )));
    }
    Ok((header, records))
}

/// Recomputes totals and advantages of an exported batch under new
/// weights. Reward components are kept as recorded.
pub fn reweight_batch(
    header: &BatchHeader,
    records: &[BatchRecord],
    weights: &RewardWeights,
) -> Result<(BatchHeader, Vec<BatchRecord>)> {
    weights.validate()?;
    let g = header.group_size;
    if g == 0 || !records.len().is_multiple_of(g) {
        return Err(Error::Input(format!(
            "{} records do not form groups of {g}",
            records.len()
        )));
    }
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(g) {
        let id = &chunk[0].episode.episode_id;
        if chunk.iter().any(|r| &r.episode.episode_id != id) {
            return Err(Error::Input(format!(
                "episode {id} does not hold {g} consecutive records"
            )));
        }
        let mut group: Vec<BatchRecord> = chunk.to_vec();
        for r in &mut group {
            let b = &mut r.breakdown;
            b.total = super::combine(weights, b.r_lmh, b.r_dist, b.r_sch_a, b.r_sch_b);
        }
        let totals: Vec<f64> = group.iter().map(|r| r.breakdown.total).collect();
        for (r, a) in group.iter_mut().zip(group_advantages(&totals)?.advantages) {
            r.advantage = a;
        }
        out.extend(group);
    }
    let header = BatchHeader {
        weights: *weights,
        ..header.clone()
    };
    Ok((header, out))
}

/// Writes an already-assembled batch (for example from `reweight_batch`).
pub fn write_training_batch(
    path: &Path,
    header: &BatchHeader,
    records: &[BatchRecord],
) -> Result<()> {
    if header.records != records.len() {
        return Err(Error::Domain(format!(
            "header announces {} records, got {}",
            header.records,
            records.len()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut put = |line: &BatchLine| -> Result<()> {
        let text = serde_json::to_string(line).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(w, "{text}").map_err(|e| Error::io(path, e))
    };
    put(&BatchLine::Header(header.clone()))?;
    for r in records {
        put(&BatchLine::Rollout(r.clone()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
