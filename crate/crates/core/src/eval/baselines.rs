//! Comparison predictors: verbalized distribution, first-token
//! log-probabilities, opinion sampling, and uniform.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchmarkCase;
use crate::error::{Error, Result};
use crate::evidence::AnswerDistribution;
use crate::inference::{
    parse_stage_b, prompts, run_stage, stage_b_distribution, validate_stage_b, InferenceConfig,
    StageBOutput,
};
use crate::llm::{DecodingParams, LlmClient};
use crate::metrics::normalize_distribution;

/// One-shot distribution prompt with no evidence, checked like Stage B.
pub fn baseline_verbalized(
    llm: &dyn LlmClient,
    case: &BenchmarkCase,
    config: &InferenceConfig,
) -> Result<Option<AnswerDistribution>> {
    let q = case.to_question();
    let prompt = prompts::render_verbalized_prompt(&q, &case.country);
    let record = run_stage(llm, prompt, config, parse_stage_b, |out: &StageBOutput| {
        validate_stage_b(out, &q.options, config.tolerance)
    })?;
    if !record.valid() {
        return Ok(None);
    }
    record
        .output
        .as_ref()
        .and_then(|out| stage_b_distribution(out, &q.options))
        .map(|d| normalize_distribution(&d))
        .transpose()
}

fn letter_index(token: &str, n_options: usize) -> Option<usize> {
    let t = token.trim();
    let mut chars = t.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_uppercase() {
        return None;
    }
    let i = (c as u8 - b'A') as usize;
    (i < n_options).then_some(i)
}

/// Softmax over the option-letter tokens A, B, ... found among the first
/// token candidates. Letters that do not appear get zero mass; `None` when
/// no letter appears at all.
pub fn logprob_distribution(
    logprobs: &BTreeMap<String, f64>,
    n_options: usize,
) -> Option<Vec<f64>> {
    let mut per_letter: Vec<Vec<f64>> = vec![Vec::new(); n_options];
    for (token, lp) in logprobs {
        if let Some(i) = letter_index(token, n_options) {
            if lp.is_finite() {
                per_letter[i].push(*lp);
            }
        }
    }
    let max = per_letter
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    // tokens differing only in whitespace add up
    let mass: Vec<f64> = per_letter
        .iter()
        .map(|v| v.iter().map(|lp| (lp - max).exp()).sum())
        .collect();
    let total: f64 = mass.iter().sum();
    Some(mass.into_iter().map(|m| m / total).collect())
}

pub fn baseline_logprob(
    llm: &dyn LlmClient,
    case: &BenchmarkCase,
    decoding: &DecodingParams,
) -> Result<Option<AnswerDistribution>> {
    if !llm.supports_logprobs() {
        return Err(Error::Input(format!(
            "the log-probability baseline needs a backend with first-token logprobs; {} has none",
            llm.identity()
        )));
    }
    if case.options.len() > 26 {
        return Err(Error::Domain(format!(
            "case {} has {} options; the log-probability baseline supports at most 26",
            case.case_id,
            case.options.len()
        )));
    }
    let prompt = prompts::render_single_choice_prompt(&case.to_question(), &case.country);
    let completion = llm.complete(&prompt, decoding, true)?;
    let Some(logprobs) = completion.first_token_logprobs else {
        return Ok(None);
    };
    Ok(
        logprob_distribution(&logprobs, case.options.len()).map(|probs| {
            AnswerDistribution::new(
                case.options
                    .iter()
                    .map(|o| o.id.clone())
                    .zip(probs)
                    .collect(),
            )
        }),
    )
}

/// Reads a single option letter from a sampled answer such as `B`,
/// `(B)`, `B.` or `B) Agree`.
pub fn parse_choice(text: &str, n_options: usize) -> Option<usize> {
    let t = text.trim_start();
    let t = t.strip_prefix("Answer:").map_or(t, str::trim_start);
    let t = t.strip_prefix('(').unwrap_or(t);
    let mut chars = t.chars();
    let c = chars.next()?;
    if chars.next().is_some_and(|n| n.is_alphanumeric()) {
        return None;
    }
    letter_index(&c.to_string(), n_options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingOutcome {
    /// `None` when no sample could be read.
    pub distribution: Option<AnswerDistribution>,
    pub parsed: usize,
    pub dropped: usize,
}

/// Empirical distribution of `n` single-choice answers. Sample `i` uses the
/// decoding seed offset by `i` when a seed is set.
pub fn baseline_sampling(
    llm: &dyn LlmClient,
    case: &BenchmarkCase,
    n: usize,
    decoding: &DecodingParams,
) -> Result<SamplingOutcome> {
    if n == 0 {
        return Err(Error::Domain(
            "opinion sampling needs at least one sample".into(),
        ));
    }
    if case.options.len() > 26 {
        return Err(Error::Domain(format!(
            "case {} has more than 26 options",
            case.case_id
        )));
    }
    let prompt = prompts::render_single_choice_prompt(&case.to_question(), &case.country);
    let mut counts = vec![0usize; case.options.len()];
    let mut dropped = 0;
    for i in 0..n {
        let text = llm
            .complete(&prompt, &decoding.offset_seed(i as u64), false)?
            .text;
        match parse_choice(&text, counts.len()) {
            Some(j) => counts[j] += 1,
            None => dropped += 1,
        }
    }
    let parsed = n - dropped;
    if dropped > 0 {
        log::debug!(
            "case {}: dropped {dropped} of {n} unreadable samples",
            case.case_id
        );
    }
    let distribution = (parsed > 0).then(|| {
        AnswerDistribution::new(
            case.options
                .iter()
                .zip(&counts)
                .map(|(o, c)| (o.id.clone(), *c as f64 / parsed as f64))
                .collect(),
        )
    });
    Ok(SamplingOutcome {
        distribution,
        parsed,
        dropped,
    })
}

pub fn baseline_uniform(case: &BenchmarkCase) -> AnswerDistribution {
    AnswerDistribution::uniform(case.options.iter().map(|o| o.id.as_str()))
}
