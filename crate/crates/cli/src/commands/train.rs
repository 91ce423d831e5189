use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use evida_core::evidence::GroupKey;
use evida_core::retrieval::Retriever;
use evida_core::rewards::{
    export_training_batch, read_training_batch, reweight_batch, rollout_groups, sample_episodes,
    write_training_batch, BatchHeader,
};
use evida_core::Error;

use super::open_bank;
use crate::backends::{self, MockChoice};
use crate::config::PipelineConfig;

#[derive(Args)]
pub struct EpisodesArgs {
    /// Comma-separated countries to draw from; all groups when omitted.
    #[arg(long)]
    groups: Option<String>,
    /// Number of episodes.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Batch JSONL to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn episodes(cfg: &PipelineConfig, mock: &MockChoice, args: &EpisodesArgs) -> Result<()> {
    if args.count == 0 {
        return Err(Error::Input("--count must be positive".into()).into());
    }
    let bank = open_bank(cfg)?;
    let groups: Vec<GroupKey> = match &args.groups {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(|c| bank.find_country(c).cloned())
            .collect::<Result<_, _>>()?,
        None => bank.groups.keys().cloned().collect(),
    };
    let encoder = backends::encoder(cfg, mock)?;
    let retriever = Retriever::new(&bank, encoder.as_ref(), cfg.max_in_flight)?;
    let set = sample_episodes(
        &retriever,
        &groups,
        args.count,
        cfg.k,
        cfg.n_min,
        cfg.episode_seed,
    )?;
    for s in &set.skipped {
        eprintln!("skipped {}: {}", s.group, s.reason);
    }
    if set.episodes.is_empty() {
        return Err(Error::Domain(format!("no item has support of at least {}", cfg.n_min)).into());
    }
    if set.episodes.len() < args.count {
        eprintln!(
            "only {} of {} episodes available",
            set.episodes.len(),
            args.count
        );
    }

    let (llm, sequential) = backends::llm(cfg, mock)?;
    let in_flight = if sequential { 1 } else { cfg.max_in_flight };
    let groups = rollout_groups(
        &set.episodes,
        llm.as_ref(),
        &cfg.inference(),
        cfg.group_size,
        cfg.decoding.seed.unwrap_or(0),
        &cfg.weights,
        in_flight,
    )?;
    let header = BatchHeader::new(
        cfg.weights,
        cfg.group_size,
        cfg.thresholds,
        cfg.episode_seed,
    );
    let header = export_training_batch(&args.out, &header, &groups)?;

    println!("episode\tmean_reward\tmin\tmax\tvalid_a\tvalid_b");
    for g in &groups {
        let totals: Vec<f64> = g.rollouts.iter().map(|r| r.breakdown.total).collect();
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let valid_a = g
            .rollouts
            .iter()
            .filter(|r| r.breakdown.r_sch_a == 1.0)
            .count();
        let valid_b = g
            .rollouts
            .iter()
            .filter(|r| r.breakdown.r_sch_b == 1.0)
            .count();
        println!(
            "{}\t{mean:.4}\t{min:.4}\t{max:.4}\t{valid_a}\t{valid_b}",
            g.episode.episode_id
        );
    }
    println!(
        "wrote {} episodes x {} rollouts to {}",
        header.groups,
        header.group_size,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Exported batch JSONL.
    #[arg(long)]
    batch: PathBuf,
    /// Write the batch re-weighted with the configured reward weights.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn score(cfg: &PipelineConfig, args: &ScoreArgs) -> Result<()> {
    let (header, records) = read_training_batch(&args.batch)?;
    let (header, records) = match &args.out {
        Some(_) => reweight_batch(&header, &records, &cfg.weights)?,
        None => (header, records),
    };
    let n = records.len().max(1) as f64;
    let mean = |f: &dyn Fn(&evida_core::rewards::BatchRecord) -> f64| {
        records.iter().map(f).sum::<f64>() / n
    };
    println!("episodes\t{}", header.groups);
    println!("rollouts\t{}", header.records);
    println!("group_size\t{}", header.group_size);
    println!(
        "weights\t{} {} {} {}",
        header.weights.lmh, header.weights.dist, header.weights.schema_a, header.weights.schema_b
    );
    println!("mean_r_lmh\t{:.4}", mean(&|r| r.breakdown.r_lmh));
    println!("mean_r_dist\t{:.4}", mean(&|r| r.breakdown.r_dist));
    println!("mean_r_sch_a\t{:.4}", mean(&|r| r.breakdown.r_sch_a));
    println!("mean_r_sch_b\t{:.4}", mean(&|r| r.breakdown.r_sch_b));
    println!("mean_total\t{:.4}", mean(&|r| r.breakdown.total));
    if let Some(out) = &args.out {
        write_training_batch(out, &header, &records)?;
        println!("re-weighted batch written to {}", out.display());
    }
    Ok(())
}
