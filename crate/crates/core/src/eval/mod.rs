//! Benchmark loading, scoring of predictors by JSD against gold
//! distributions, and LMH signature accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{AnswerDistribution, EvidenceBank, SurveyOption};
use crate::inference::{
    run_two_stage, InferenceConfig, OptionSignatures, PredictionResult, Question,
};
use crate::llm::LlmClient;
use crate::metrics::jsd;
use crate::retrieval::Retriever;

mod baselines;
mod report;

pub use baselines::{
    baseline_logprob, baseline_sampling, baseline_uniform, baseline_verbalized,
    logprob_distribution, parse_choice, SamplingOutcome,
};
pub use report::{
    k_sweep_markdown, markdown_report, write_per_case_csv, write_reports, KSweepRow,
    AGGREGATION_NOTE,
};

/// Gold sums may be off by this much before renormalization.
pub const GOLD_SUM_TOLERANCE: f64 = 1e-6;
/// JSD assigned to a case without a valid prediction.
pub const INVALID_JSD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub options: Vec<SurveyOption>,
    pub country: String,
    pub gold: AnswerDistribution,
    /// Bank item this case was drawn from; excluded from retrieval when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
}

impl BenchmarkCase {
    pub fn to_question(&self) -> Question {
        Question {
            id: self.item_id.clone().unwrap_or_else(|| self.case_id.clone()),
            text: self.question.clone(),
            instruction: self.instruction.clone(),
            options: self.options.clone(),
        }
    }

    /// Checks the case and renormalizes its gold distribution.
    fn validated(mut self) -> std::result::Result<Self, String> {
        if self.case_id.is_empty() {
            return Err("empty case_id".into());
        }
        if self.country.is_empty() {
            return Err("empty country".into());
        }
        self.to_question().validate().map_err(|e| e.to_string())?;
        let ids: BTreeSet<&str> = self.options.iter().map(|o| o.id.as_str()).collect();
        if let Some(k) = self.gold.keys().find(|k| !ids.contains(k)) {
            return Err(format!("gold key {k:?} is not an option"));
        }
        if let Some((k, v)) = self
            .gold
            .iter()
            .find(|(_, v)| !(v.is_finite() && *v >= 0.0))
        {
            return Err(format!("gold probability {v} for {k:?}"));
        }
        let sum = self.gold.sum();
        if (sum - 1.0).abs() > GOLD_SUM_TOLERANCE {
            return Err(format!("gold sums to {sum}"));
        }
        self.gold = AnswerDistribution::new(
            self.gold
                .iter()
                .map(|(k, v)| (k.to_string(), v / sum))
                .collect(),
        );
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRejection {
    pub line: usize,
    pub case_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub cases: Vec<BenchmarkCase>,
    pub rejections: Vec<CaseRejection>,
}

/// Reads a JSON-lines benchmark. Bad lines are rejected individually.
pub fn load_benchmark(path: &Path) -> Result<Benchmark> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_benchmark(&text))
}

pub fn parse_benchmark(text: &str) -> Benchmark {
    let mut out = Benchmark::default();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let reject = |case_id: Option<String>, reason: String| CaseRejection {
            line: i + 1,
            case_id,
            reason,
        };
        let case: BenchmarkCase = match serde_json::from_str(line) {
            Ok(c) => c,
            Err(e) => {
                out.rejections.push(reject(None, e.to_string()));
                continue;
            }
        };
        let id = case.case_id.clone();
        match case.validated() {
            Ok(c) if !seen.insert(c.case_id.clone()) => {
                out.rejections
                    .push(reject(Some(id), "duplicate case_id".into()));
            }
            Ok(c) => out.cases.push(c),
            Err(reason) => out.rejections.push(reject(Some(id), reason)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub country: String,
    /// `None` when the prediction was invalid or absent.
    pub jsd: Option<f64>,
    pub valid: bool,
}

impl CaseScore {
    /// The value that enters means: invalid cases count as 1.0.
    pub fn scored_jsd(&self) -> f64 {
        self.jsd.unwrap_or(INVALID_JSD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryScore {
    pub cases: usize,
    pub mean_jsd: f64,
    pub validity_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub per_case: Vec<CaseScore>,
    pub mean_jsd: f64,
    pub validity_rate: f64,
    pub per_country: BTreeMap<String, CountryScore>,
}

fn summarize<'a>(scores: impl IntoIterator<Item = &'a CaseScore>) -> CountryScore {
    let (mut n, mut total, mut valid) = (0usize, 0.0, 0usize);
    for s in scores {
        n += 1;
        total += s.scored_jsd();
        valid += usize::from(s.valid);
    }
    CountryScore {
        cases: n,
        mean_jsd: total / n as f64,
        validity_rate: valid as f64 / n as f64,
    }
}

/// Scores each case's prediction against its gold distribution (macro mean
/// over cases). `max_in_flight` bounds concurrent predictor calls; results
/// keep case order.
pub fn evaluate<F>(
    method: &str,
    cases: &[BenchmarkCase],
    max_in_flight: usize,
    predictor: F,
) -> Result<MethodResult>
where
    F: Fn(&BenchmarkCase) -> Result<Option<AnswerDistribution>> + Sync,
{
    use rayon::prelude::*;
    if cases.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty benchmark".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    let per_case: Vec<CaseScore> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let pred = predictor(case)?;
                let jsd = pred.map(|p| jsd(&p, &case.gold)).transpose()?;
                Ok(CaseScore {
                    case_id: case.case_id.clone(),
                    country: case.country.clone(),
                    valid: jsd.is_some(),
                    jsd,
                })
            })
            .collect::<Result<_>>()
    })?;
    let overall = summarize(&per_case);
    let mut by_country: BTreeMap<&str, Vec<&CaseScore>> = BTreeMap::new();
    for s in &per_case {
        by_country.entry(&s.country).or_default().push(s);
    }
    let per_country = by_country
        .into_iter()
        .map(|(c, scores)| (c.to_string(), summarize(scores)))
        .collect();
    Ok(MethodResult {
        method: method.to_string(),
        mean_jsd: overall.mean_jsd,
        validity_rate: overall.validity_rate,
        per_case,
        per_country,
    })
}

/// Runs the two-stage pipeline on a case for the group matching its
/// country. The case's own bank item, if any, is never used as evidence.
pub fn run_evida(
    case: &BenchmarkCase,
    retriever: &Retriever<'_>,
    llm: &dyn LlmClient,
    config: &InferenceConfig,
) -> Result<PredictionResult> {
    let group = retriever.bank().find_country(&case.country)?;
    let exclude: BTreeSet<String> = case.item_id.iter().cloned().collect();
    run_two_stage(&case.to_question(), group, &exclude, retriever, llm, config)
}

/// Predicted option signatures for one case, from Stage A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmhCase {
    pub case_id: String,
    pub country: String,
    pub item_id: Option<String>,
    /// `None` when Stage A never validated.
    pub predicted: Option<OptionSignatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmhAccuracy {
    pub overall: f64,
    pub cases: usize,
    pub per_country: BTreeMap<String, CountryAccuracy>,
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryAccuracy {
    pub cases: usize,
    pub accuracy: f64,
}

/// Per-dimension exact-match accuracy of predicted option signatures
/// against the bank's signatures, averaged per case, then over cases. Cases
/// without gold coverage are skipped; cases with no valid prediction score 0.
pub fn lmh_accuracy(cases: &[LmhCase], bank: &EvidenceBank) -> Result<LmhAccuracy> {
    let mut skipped = Vec::new();
    let mut scored: Vec<(&str, f64)> = Vec::new();
    for c in cases {
        let gold = c
            .item_id
            .as_deref()
            .ok_or("case has no bank item id")
            .and_then(|id| {
                let g = bank
                    .find_country(&c.country)
                    .map_err(|_| "country not in bank")?;
                bank.item_evidence(g, id)
                    .ok_or("item has no evidence for this country")
            })
            .map(|ev| ev.gold_signatures());
        let gold = match gold {
            Ok(g) if !g.is_empty() => g,
            Ok(_) => {
                skipped.push((
                    c.case_id.clone(),
                    "no option has a gold signature".to_string(),
                ));
                continue;
            }
            Err(reason) => {
                skipped.push((c.case_id.clone(), reason.to_string()));
                continue;
            }
        };
        let acc = match &c.predicted {
            Some(pred) => crate::rewards::r_lmh(pred, &gold)?,
            None => 0.0,
        };
        scored.push((&c.country, acc));
    }
    if scored.is_empty() {
        return Err(Error::Domain("no case has gold signature coverage".into()));
    }
    let mut by_country: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (c, a) in &scored {
        by_country.entry(c).or_default().push(*a);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let all: Vec<f64> = scored.iter().map(|(_, a)| *a).collect();
    Ok(LmhAccuracy {
        overall: mean(&all),
        cases: all.len(),
        per_country: by_country
            .into_iter()
            .map(|(c, v)| {
                (
                    c.to_string(),
                    CountryAccuracy {
                        cases: v.len(),
                        accuracy: mean(&v),
                    },
                )
            })
            .collect(),
        skipped,
    })
}
