use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use evida_core::eval::BenchmarkCase;
use evida_core::evidence::store::read_manifest;
use evida_core::evidence::{
    build_bank as aggregate, ingest_path, save_bank, IngestOptions, ItemCatalog, MicrodataFormat,
};
use evida_core::inference::Question;
use evida_core::synth::SynthConfig;
use evida_core::{Error, Thresholds};

use super::{open_bank, to_json, write_lines};
use crate::config::PipelineConfig;

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated country names.
    #[arg(long, default_value = "Germany,Vietnam,Brazil")]
    countries: String,
    /// Respondents per country.
    #[arg(long, default_value_t = 200)]
    respondents: usize,
    #[arg(long, default_value_t = 24)]
    items: usize,
    #[arg(long, default_value_t = 0.1)]
    missing_rate: f64,
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if !(0.0..1.0).contains(&args.missing_rate) {
        return Err(Error::Input(format!(
            "missing rate {} must lie in [0, 1)",
            args.missing_rate
        ))
        .into());
    }
    let countries: Vec<String> = args
        .countries
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect();
    if countries.is_empty() || args.items == 0 || args.respondents == 0 {
        return Err(
            Error::Input("synth needs at least one country, item and respondent".into()).into(),
        );
    }
    let data = SynthConfig {
        countries,
        respondents_per_group: args.respondents,
        items: args.items,
        missing_rate: args.missing_rate,
        seed: args.data_seed,
    }
    .generate();
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut microdata = Vec::new();
    data.write_microdata(&mut microdata, b'\t')?;
    std::fs::write(args.out.join("microdata.tsv"), microdata)?;
    let mut items = Vec::new();
    data.write_items(&mut items)?;
    std::fs::write(args.out.join("items.jsonl"), items)?;

    let catalog = ItemCatalog::new(data.items.clone())?;
    let bank = aggregate(&data.records, &catalog, Thresholds::default())?;
    let mut cases = Vec::new();
    for (group, ge) in &bank.groups {
        for (id, ev) in &ge.items {
            cases.push(to_json(&BenchmarkCase {
                case_id: format!("{}-{id}", group.country),
                question: ev.item.question_text.clone(),
                instruction: ev.item.instruction.clone(),
                options: ev.item.options.clone(),
                country: group.country.clone(),
                gold: ev.distribution.clone(),
                item_id: Some(id.clone()),
            })?);
        }
    }
    write_lines(Some(&args.out.join("benchmark.jsonl")), &cases)?;
    let questions: Vec<String> = data
        .items
        .iter()
        .take(3)
        .map(|i| to_json(&Question::from(i)))
        .collect::<Result<_>>()?;
    write_lines(Some(&args.out.join("questions.jsonl")), &questions)?;

    println!(
        "wrote {} respondents, {} items, {} benchmark cases to {}",
        data.records.len(),
        data.items.len(),
        cases.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct BuildBankArgs {
    /// Respondent microdata (.tsv, .csv or .jsonl).
    #[arg(long)]
    microdata: PathBuf,
    /// Item catalog, one JSON item per line.
    #[arg(long)]
    items: PathBuf,
    /// Output directory; defaults to the configured bank.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn build_bank(cfg: &PipelineConfig, args: &BuildBankArgs) -> Result<()> {
    let catalog = ItemCatalog::load_jsonl(&args.items)?;
    let opts = IngestOptions {
        format: MicrodataFormat::from_path(&args.microdata),
        ..Default::default()
    };
    let report = ingest_path(&args.microdata, &catalog, &opts)?;
    for r in report.rejections.iter().take(20) {
        log::warn!("line {}: {}", r.line, r.reason);
    }
    if report.records.is_empty() {
        return Err(Error::Input(format!(
            "{}: no valid respondent rows",
            args.microdata.display()
        ))
        .into());
    }
    let bank = aggregate(&report.records, &catalog, cfg.thresholds)?;
    let out = args.out.as_ref().unwrap_or(&cfg.bank);
    let manifest = save_bank(&bank, out)?;

    println!("bank written to {}", out.display());
    println!(
        "rows accepted: {}, rejected: {}",
        report.records.len(),
        report.rejections.len()
    );
    println!("group\trespondents\titems\tmin_support\tmax_support\titems_at_n_min");
    for g in &manifest.groups {
        let ge = &bank.groups[&g.key];
        let supports: Vec<u64> = ge.items.values().map(|e| e.support).collect();
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            g.key,
            g.respondents,
            g.entries,
            supports.iter().min().unwrap_or(&0),
            supports.iter().max().unwrap_or(&0),
            supports.iter().filter(|s| **s >= cfg.n_min).count()
        );
    }
    Ok(())
}

pub fn inspect_bank(cfg: &PipelineConfig) -> Result<()> {
    let manifest = read_manifest(&cfg.bank)?;
    let bank = open_bank(cfg)?;
    println!("bank: {}", cfg.bank.display());
    println!(
        "schema {} written by {} {}; thresholds {} / {}",
        manifest.schema_version,
        manifest.tool,
        manifest.tool_version,
        bank.thresholds.tau1(),
        bank.thresholds.tau2()
    );
    println!(
        "items: {}, groups: {}, entries: {}",
        manifest.item_count,
        bank.groups.len(),
        bank.entry_count()
    );
    println!("group\trespondents\tentries\tat_n_min\tprofile");
    for (key, ge) in &bank.groups {
        let usable = ge.items.values().filter(|e| e.support >= cfg.n_min).count();
        let profile: Vec<&str> = ge.profile.labels().iter().map(|l| l.as_str()).collect();
        println!(
            "{key}\t{}\t{}\t{usable}\t{}",
            ge.respondents,
            ge.items.len(),
            profile.join(",")
        );
    }
    Ok(())
}
