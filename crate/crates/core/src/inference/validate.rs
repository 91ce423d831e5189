//! Content checks on parsed stage outputs. Failures are report entries,
//! never errors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::parse::{ParseFailure, StageAOutput, StageBOutput};
use super::OptionSignatures;
use crate::evidence::{AnswerDistribution, SurveyOption};
use crate::values::{canonical_order, LmhLabel, LmhSignature, DIMENSIONS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub valid: bool,
}

impl ValidationReport {
    fn from_checks(checks: Vec<Check>) -> Self {
        let valid = checks.iter().all(|c| c.passed);
        ValidationReport { checks, valid }
    }

    fn push(checks: &mut Vec<Check>, name: &str, failures: Vec<String>) {
        checks.push(Check {
            name: name.into(),
            passed: failures.is_empty(),
            detail: failures.join("; "),
        });
    }

    /// A single failed `parse` check.
    pub fn parse_failure(f: &ParseFailure) -> Self {
        Self::from_checks(vec![Check {
            name: "parse".into(),
            passed: false,
            detail: f.to_string(),
        }])
    }

    /// A single failed check explaining why a stage never ran.
    pub fn skipped(reason: &str) -> Self {
        Self::from_checks(vec![Check {
            name: "skipped".into(),
            passed: false,
            detail: reason.into(),
        }])
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Maps an emitted key to an option id. Ids win over texts; a key that is
/// no id and matches the text of several options is ambiguous.
fn resolve_option<'a>(key: &str, options: &'a [SurveyOption]) -> Result<&'a str, String> {
    if let Some(o) = options.iter().find(|o| o.id == key) {
        return Ok(&o.id);
    }
    let by_text: Vec<&SurveyOption> = options.iter().filter(|o| o.text == key).collect();
    match by_text.as_slice() {
        [one] => Ok(&one.id),
        [] => Err(format!("unknown option {key:?}")),
        _ => Err(format!("option text {key:?} is ambiguous")),
    }
}

fn parse_label(s: &str) -> Option<LmhLabel> {
    match s {
        "low" => Some(LmhLabel::Low),
        "medium" => Some(LmhLabel::Medium),
        "high" => Some(LmhLabel::High),
        _ => None,
    }
}

pub fn validate_stage_a(out: &StageAOutput, options: &[SurveyOption]) -> ValidationReport {
    let mut checks = Vec::new();

    let canonical = canonical_order();
    let order_ok = out.subindex_order.len() == canonical.len()
        && out
            .subindex_order
            .iter()
            .zip(&canonical)
            .all(|(a, b)| a == b);
    let order_fail = if order_ok {
        vec![]
    } else {
        vec![format!("got {:?}", out.subindex_order)]
    };
    ValidationReport::push(&mut checks, "subindex_order", order_fail);

    let mut coverage = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &out.option_profiles {
        match resolve_option(&p.option, options) {
            Ok(id) if !seen.insert(id) => coverage.push(format!("duplicate profile for {id}")),
            Ok(_) => {}
            Err(e) => coverage.push(e),
        }
    }
    for o in options {
        if !seen.contains(o.id.as_str()) {
            coverage.push(format!("no profile for {}", o.id));
        }
    }
    ValidationReport::push(&mut checks, "option_coverage", coverage);

    let lengths = out
        .option_profiles
        .iter()
        .filter(|p| p.labels.len() != DIMENSIONS)
        .map(|p| format!("{} has {} labels", p.option, p.labels.len()))
        .collect();
    ValidationReport::push(&mut checks, "signature_length", lengths);

    let labels = out
        .option_profiles
        .iter()
        .flat_map(|p| p.labels.iter().map(move |l| (p, l)))
        .filter(|(_, l)| parse_label(l).is_none())
        .map(|(p, l)| format!("{}: label {l:?} not in low/medium/high", p.option))
        .collect();
    ValidationReport::push(&mut checks, "label_set", labels);

    ValidationReport::from_checks(checks)
}

/// Canonical-id signatures from an output that passed validation.
pub fn stage_a_signatures(
    out: &StageAOutput,
    options: &[SurveyOption],
) -> Option<OptionSignatures> {
    let mut sigs = BTreeMap::new();
    for p in &out.option_profiles {
        let id = resolve_option(&p.option, options).ok()?;
        let labels: Vec<LmhLabel> = p
            .labels
            .iter()
            .map(|l| parse_label(l))
            .collect::<Option<_>>()?;
        let arr: [LmhLabel; DIMENSIONS] = labels.try_into().ok()?;
        sigs.insert(id.to_string(), LmhSignature::new(arr));
    }
    Some(sigs)
}

pub fn validate_stage_b(
    out: &StageBOutput,
    options: &[SurveyOption],
    tolerance: f64,
) -> ValidationReport {
    let mut checks = Vec::new();

    let mut known = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, _) in &out.predicted_distribution {
        match resolve_option(k, options) {
            Ok(id) if !seen.insert(id) => known.push(format!("{id} given twice")),
            Ok(_) => {}
            Err(e) => known.push(e),
        }
    }
    ValidationReport::push(&mut checks, "known_options", known);

    let missing = options
        .iter()
        .filter(|o| !seen.contains(o.id.as_str()))
        .map(|o| format!("no probability for {}", o.id))
        .collect();
    ValidationReport::push(&mut checks, "covers_all_options", missing);

    let negative = out
        .predicted_distribution
        .iter()
        .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
        .map(|(k, v)| format!("{k} = {v}"))
        .collect();
    ValidationReport::push(&mut checks, "non_negative", negative);

    let sum: f64 = out.predicted_distribution.iter().map(|(_, v)| v).sum();
    let normalized = if (sum - 1.0).abs() <= tolerance {
        vec![]
    } else {
        vec![format!("sum {sum} outside 1 +/- {tolerance}")]
    };
    ValidationReport::push(&mut checks, "normalized", normalized);

    ValidationReport::from_checks(checks)
}

/// Canonical-id distribution (not yet renormalized) from a validated output.
pub fn stage_b_distribution(
    out: &StageBOutput,
    options: &[SurveyOption],
) -> Option<AnswerDistribution> {
    let mut d = BTreeMap::new();
    for (k, v) in &out.predicted_distribution {
        d.insert(resolve_option(k, options).ok()?.to_string(), *v);
    }
    Some(AnswerDistribution::new(d))
}
