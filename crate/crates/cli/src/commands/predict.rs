use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use evida_core::inference::{predict_many, PredictionJob, Question};
use evida_core::retrieval::{RetrievalQuery, Retriever};
use evida_core::{Error, SurveyOption};

use super::{open_bank, to_json, write_lines};
use crate::backends::{self, MockChoice};
use crate::config::PipelineConfig;

fn split_list(raw: &str) -> BTreeSet<String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    question: String,
    #[arg(long)]
    instruction: Option<String>,
    #[arg(long)]
    country: String,
    /// Comma-separated item ids never to return.
    #[arg(long, default_value = "")]
    exclude: String,
}

pub fn retrieve(cfg: &PipelineConfig, mock: &MockChoice, args: &RetrieveArgs) -> Result<()> {
    let bank = open_bank(cfg)?;
    let encoder = backends::encoder(cfg, mock)?;
    let retriever = Retriever::new(&bank, encoder.as_ref(), cfg.max_in_flight)?;
    let group = bank.find_country(&args.country)?.clone();
    let query = RetrievalQuery {
        instruction: args.instruction.clone(),
        k: cfg.k,
        n_min: cfg.n_min,
        exclude_item_ids: split_list(&args.exclude),
        ..RetrievalQuery::new(args.question.clone(), group)
    };
    let found = retriever.retrieve(&query)?;
    let out = serde_json::json!({
        "group": query.group,
        "k": query.k,
        "n_min": query.n_min,
        "entries": found.entries,
    });
    write_lines(None, &[serde_json::to_string_pretty(&out)?])
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    country: String,
    /// JSONL file of questions ({"id", "text", "instruction"?, "options"}).
    #[arg(long, conflicts_with = "question")]
    questions: Option<PathBuf>,
    /// A single question text; give its options with --option.
    #[arg(long)]
    question: Option<String>,
    #[arg(long, requires = "question")]
    instruction: Option<String>,
    /// Answer option as ID=TEXT, in order; repeat for each option.
    #[arg(long = "option", value_name = "ID=TEXT", requires = "question")]
    options: Vec<String>,
    /// Id of the single question (used for exclusion and output).
    #[arg(long, default_value = "q1", requires = "question")]
    id: String,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_questions(args: &PredictArgs) -> Result<Vec<Question>> {
    if let Some(path) = &args.questions {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut out = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let q: Question = serde_json::from_str(line)
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
            q.validate()?;
            out.push(q);
        }
        if out.is_empty() {
            return Err(Error::Input(format!("{}: no questions", path.display())).into());
        }
        return Ok(out);
    }
    let text = args
        .question
        .clone()
        .ok_or_else(|| Error::Input("give --questions FILE or --question TEXT".into()))?;
    let options = args
        .options
        .iter()
        .map(|raw| {
            raw.split_once('=')
                .map(|(id, t)| SurveyOption::new(id.trim(), t.trim()))
                .ok_or_else(|| Error::Input(format!("option {raw:?} is not ID=TEXT")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let q = Question {
        id: args.id.clone(),
        text,
        instruction: args.instruction.clone(),
        options,
    };
    q.validate()?;
    Ok(vec![q])
}

pub fn predict(cfg: &PipelineConfig, mock: &MockChoice, args: &PredictArgs) -> Result<()> {
    let questions = read_questions(args)?;
    let bank = open_bank(cfg)?;
    let group = bank.find_country(&args.country)?.clone();
    let encoder = backends::encoder(cfg, mock)?;
    let retriever = Retriever::new(&bank, encoder.as_ref(), cfg.max_in_flight)?;
    let (llm, sequential) = backends::llm(cfg, mock)?;
    let jobs: Vec<PredictionJob> = questions
        .into_iter()
        .map(|q| PredictionJob {
            exclude: [q.id.clone()].into(),
            question: q,
            group: group.clone(),
        })
        .collect();
    let in_flight = if sequential { 1 } else { cfg.max_in_flight };
    let results = predict_many(&jobs, &retriever, llm.as_ref(), &cfg.inference(), in_flight)?;
    let mut lines = Vec::with_capacity(results.len());
    let mut failed = 0usize;
    for (job, r) in jobs.iter().zip(results) {
        let r = r.with_context(|| format!("question {}", job.question.id))?;
        if !r.stage_b_valid() {
            failed += 1;
            log::warn!("question {}: no valid distribution", job.question.id);
        }
        lines.push(to_json(&r)?);
    }
    write_lines(args.out.as_deref(), &lines)?;
    if args.out.is_some() {
        eprintln!(
            "{} predictions, {} without a valid distribution",
            lines.len(),
            failed
        );
    }
    Ok(())
}
