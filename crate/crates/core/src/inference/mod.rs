//! Two-stage prediction: profile each answer option in value space
//! (Stage A), then predict the group's answer distribution from those
//! profiles and the retrieved evidence (Stage B).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{AnswerDistribution, GroupKey, SurveyItem, SurveyOption};
use crate::llm::{DecodingParams, LlmClient};
use crate::metrics::normalize_distribution;
use crate::retrieval::{
    RetrievalQuery, RetrievedEvidence, Retriever, TraceEntry, DEFAULT_K, DEFAULT_N_MIN,
};
use crate::values::LmhSignature;

mod parse;
pub mod prompts;
mod validate;

pub use parse::{
    extract_json_object, parse_stage_a, parse_stage_b, OptionProfile, ParseFailure, StageAOutput,
    StageBOutput,
};
pub use validate::{
    stage_a_signatures, stage_b_distribution, validate_stage_a, validate_stage_b, Check,
    ValidationReport,
};

/// Per-option LMH signatures keyed by option id.
pub type OptionSignatures = BTreeMap<String, LmhSignature>;

pub const DEFAULT_TOLERANCE: f64 = 0.01;
pub const DEFAULT_RETRIES: u32 = 2;

/// A question to predict for, with its answer options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub options: Vec<SurveyOption>,
}

impl Question {
    pub fn validate(&self) -> Result<()> {
        self.as_item().validate()
    }

    pub fn as_item(&self) -> SurveyItem {
        SurveyItem {
            item_id: self.id.clone(),
            question_text: self.text.clone(),
            instruction: self.instruction.clone(),
            options: self.options.clone(),
        }
    }
}

impl From<&SurveyItem> for Question {
    fn from(item: &SurveyItem) -> Self {
        Question {
            id: item.item_id.clone(),
            text: item.question_text.clone(),
            instruction: item.instruction.clone(),
            options: item.options.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// Both stages run with no retrieved items and no group profile.
    NoEvidence,
    /// One distribution prompt over the evidence, with no option profiling.
    NoWelzel,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoEvidence => "no-evidence",
            Ablation::NoWelzel => "no-welzel",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "full" | "none" => Ok(Ablation::Full),
            "no-evidence" => Ok(Ablation::NoEvidence),
            "no-welzel" => Ok(Ablation::NoWelzel),
            other => Err(Error::Input(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub k: usize,
    pub n_min: u64,
    /// Allowed |sum - 1| for a Stage B distribution.
    pub tolerance: f64,
    /// Extra attempts per stage after an invalid output.
    pub retries: u32,
    pub decoding: DecodingParams,
    pub ablation: Ablation,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            k: DEFAULT_K,
            n_min: DEFAULT_N_MIN,
            tolerance: DEFAULT_TOLERANCE,
            retries: DEFAULT_RETRIES,
            decoding: DecodingParams::default(),
            ablation: Ablation::Full,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0 && self.tolerance < 1.0) {
            return Err(Error::Domain(format!(
                "tolerance {} must lie in [0, 1)",
                self.tolerance
            )));
        }
        self.decoding.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub raw: String,
    pub report: ValidationReport,
}

/// One stage's prompt, every attempt made, and the final outcome. `output`
/// and `report` come from the last attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<T> {
    pub prompt: String,
    pub attempts: Vec<Attempt>,
    pub output: Option<T>,
    pub report: ValidationReport,
}

impl<T> StageRecord<T> {
    pub fn valid(&self) -> bool {
        self.report.valid
    }

    /// Raw text of the final attempt.
    pub fn raw(&self) -> &str {
        self.attempts.last().map_or("", |a| a.raw.as_str())
    }

    fn skipped(reason: &str) -> Self {
        StageRecord {
            prompt: String::new(),
            attempts: Vec::new(),
            output: None,
            report: ValidationReport::skipped(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub question_id: String,
    pub group: GroupKey,
    pub mode: Ablation,
    /// Absent in the no-welzel mode.
    pub stage_a: Option<StageRecord<StageAOutput>>,
    pub stage_b: StageRecord<StageBOutput>,
    /// Canonical-id signatures from a valid Stage A.
    pub option_signatures: Option<OptionSignatures>,
    /// Present iff Stage B is valid; sums to 1.
    pub normalized_distribution: Option<AnswerDistribution>,
    pub retrieval_trace: Vec<TraceEntry>,
}

impl PredictionResult {
    pub fn stage_a_valid(&self) -> bool {
        self.stage_a.as_ref().is_some_and(StageRecord::valid)
    }

    pub fn stage_b_valid(&self) -> bool {
        self.stage_b.valid()
    }
}

/// Runs `render -> complete -> parse -> validate` up to `1 + retries` times
/// with the same prompt. Retries offset the decoding seed so a seeded
/// backend does not repeat itself.
pub(crate) fn run_stage<T>(
    llm: &dyn LlmClient,
    prompt: String,
    config: &InferenceConfig,
    parse: impl Fn(&str) -> std::result::Result<T, ParseFailure>,
    validate: impl Fn(&T) -> ValidationReport,
) -> Result<StageRecord<T>> {
    let mut attempts = Vec::new();
    let mut last = None;
    for n in 0..=config.retries {
        let params = config.decoding.offset_seed(u64::from(n));
        let completion = llm.complete(&prompt, &params, false)?;
        let (output, report) = match parse(&completion.text) {
            Ok(out) => {
                let report = validate(&out);
                (Some(out), report)
            }
            Err(f) => (None, ValidationReport::parse_failure(&f)),
        };
        let valid = report.valid;
        attempts.push(Attempt {
            raw: completion.text,
            report: report.clone(),
        });
        last = Some((output, report));
        if valid {
            break;
        }
        log::debug!("invalid stage output on attempt {}", n + 1);
    }
    let (output, report) = last.expect("at least one attempt");
    Ok(StageRecord {
        prompt,
        attempts,
        output,
        report,
    })
}

/// Predicts `question`'s answer distribution for `group`. Items in
/// `exclude` are never retrieved as evidence.
pub fn run_two_stage(
    question: &Question,
    group: &GroupKey,
    exclude: &BTreeSet<String>,
    retriever: &Retriever<'_>,
    llm: &dyn LlmClient,
    config: &InferenceConfig,
) -> Result<PredictionResult> {
    config.validate()?;
    question.validate()?;
    let bank = retriever.bank();
    let group_evidence = bank
        .group(group)
        .ok_or_else(|| Error::UnknownGroup(group.to_string()))?;

    let evidence = if config.ablation == Ablation::NoEvidence {
        RetrievedEvidence::default()
    } else {
        let query = RetrievalQuery {
            question_text: question.text.clone(),
            instruction: question.instruction.clone(),
            group: group.clone(),
            k: config.k,
            n_min: config.n_min,
            exclude_item_ids: exclude.clone(),
        };
        retriever.retrieve(&query)?
    };
    let group_profile =
        (config.ablation != Ablation::NoEvidence).then_some(&group_evidence.profile);
    predict_with_evidence(question, group, group_profile, &evidence, llm, config)
}

/// Both stages over evidence that has already been retrieved. The ablation
/// mode in `config` picks the prompt family; retrieval settings are unused.
pub fn predict_with_evidence(
    question: &Question,
    group: &GroupKey,
    group_profile: Option<&LmhSignature>,
    evidence: &RetrievedEvidence,
    llm: &dyn LlmClient,
    config: &InferenceConfig,
) -> Result<PredictionResult> {
    config.validate()?;
    question.validate()?;
    let options = &question.options;

    let mut result = PredictionResult {
        question_id: question.id.clone(),
        group: group.clone(),
        mode: config.ablation,
        stage_a: None,
        stage_b: StageRecord::skipped("not run"),
        option_signatures: None,
        normalized_distribution: None,
        retrieval_trace: evidence.trace(),
    };

    let parse_b = parse_stage_b;
    let validate_b = |out: &StageBOutput| validate_stage_b(out, options, config.tolerance);

    if config.ablation == Ablation::NoWelzel {
        let prompt = prompts::render_distribution_only_prompt(question, evidence);
        result.stage_b = run_stage(llm, prompt, config, parse_b, validate_b)?;
    } else {
        let prompt = prompts::render_stage_a_prompt(question, group_profile, evidence);
        let stage_a = run_stage(llm, prompt, config, parse_stage_a, |out| {
            validate_stage_a(out, options)
        })?;
        let signatures = stage_a
            .output
            .as_ref()
            .filter(|_| stage_a.valid())
            .and_then(|out| stage_a_signatures(out, options));
        result.stage_a = Some(stage_a);
        match signatures {
            Some(sigs) => {
                let prompt =
                    prompts::render_stage_b_prompt(question, group_profile, &sigs, evidence);
                result.stage_b = run_stage(llm, prompt, config, parse_b, validate_b)?;
                result.option_signatures = Some(sigs);
            }
            None => result.stage_b = StageRecord::skipped("stage A output invalid"),
        }
    }

    if result.stage_b.valid() {
        let raw = result
            .stage_b
            .output
            .as_ref()
            .and_then(|out| stage_b_distribution(out, options))
            .ok_or_else(|| {
                Error::Domain("valid stage B output could not be canonicalized".into())
            })?;
        result.normalized_distribution = Some(normalize_distribution(&raw)?);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionJob {
    pub question: Question,
    pub group: GroupKey,
    #[serde(default)]
    pub exclude: BTreeSet<String>,
}

/// Runs independent jobs with at most `max_in_flight` in progress. Results
/// keep job order.
pub fn predict_many(
    jobs: &[PredictionJob],
    retriever: &Retriever<'_>,
    llm: &dyn LlmClient,
    config: &InferenceConfig,
    max_in_flight: usize,
) -> Result<Vec<Result<PredictionResult>>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|j| run_two_stage(&j.question, &j.group, &j.exclude, retriever, llm, config))
            .collect()
    }))
}

/// One JSON object per line.
pub fn write_predictions(path: &Path, results: &[PredictionResult]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in results {
        let line = serde_json::to_string(r).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
