//! Prompt templates and their rendering. Rendering is a pure function of
//! its inputs.

use std::fmt::Write;

use super::{OptionSignatures, Question};
use crate::evidence::{AnswerDistribution, SurveyOption};
use crate::retrieval::RetrievedEvidence;
use crate::values::LmhSignature;

/// Substring identifying the option-profiling prompt.
pub const STAGE_A_MARKER: &str = "assign Welzel sub-index categories";
/// Substring shared by every prompt that asks for a distribution as JSON.
pub const DISTRIBUTION_MARKER: &str = "\"predicted_distribution\"";
/// Substring identifying single-answer prompts (sampling and log-prob baselines).
pub const SINGLE_CHOICE_MARKER: &str = "Answer with the letter of a single option only.";

const SUB_INDEX_GLOSSARY: &str = r#"Welzel sub-indexes are 8 dimensions, with discretized values including "low", "medium", and "high". Sub-index meanings:
sub_meanings = {
    "DEFIANCE": "Less deference to authority/tradition (higher = more defiant).",
    "DISBELIEF": "Lower religiosity (higher = more disbelief).",
    "RELATIVISM": "Less moral absolutism (higher = more relativist).",
    "SCEPTICISM": "More skepticism toward traditional state institutions.",
    "AUTONOMY": "Preference for independence/imagination over obedience in child-raising.",
    "EQUALITY": "Support for gender equality.",
    "CHOICE": "Acceptance of private-life choices (e.g., divorce/abortion/homosexuality).",
    "VOICE": "Support for free speech and people having a say.",
}

Sub-index order:
WELZEL_SUBINDEX_COLS = [
    "DEFIANCE", "DISBELIEF", "RELATIVISM", "SCEPTICISM",
    "AUTONOMY", "EQUALITY", "CHOICE", "VOICE",
]"#;

const STAGE_A_TEMPLATE: &str = r#"You are given similar WVS questions from the SAME demographic group.
Each provides:
- observed_distribution_over_labels
- label_to_subindex_LMH (typical L/M/H pattern among respondents choosing that label)

Reference questions:
{reference_questions_with_lmh}

Task:
For the input survey question, assign Welzel sub-index categories (low/medium/high) to each answer option.

{sub_index_glossary}

Rules:
- Return ONLY JSON (no markdown).
- Use exactly the schema:
{
    "subindex_order": [
        "DEFIANCE", "DISBELIEF", "RELATIVISM", "SCEPTICISM",
        "AUTONOMY", "EQUALITY", "CHOICE", "VOICE",
    ],
    "option_profiles": [
        {"option": "<string>", "subindex_LMH": "low|medium|high"
    ],
    "notes": "<short string>",
}
- subindex_LMH entries must be one of: "low", "medium", "high"

Input survey question:
{new_question}

Answer options:
{answer_options}

Return JSON now.
"#;

const STAGE_B_TEMPLATE: &str = r#"Context:
You are given similar WVS questions from the SAME demographic group.
Each provides:
- observed_distribution_over_labels
- label_to_subindex_LMH (typical L/M/H pattern among respondents choosing that label)

Reference questions:
{reference_questions_with_lmh}

{sub_index_glossary}

Input survey question with Welzel's values:
{input_question_with_welzel}

Task:
For the input survey question, return a plausible probability distribution over the answer options that:
- Uses all options as keys
- Values are floats >= 0
- Sums to 1 (within rounding)
- Leans toward options whose LMH profiles better match the group target LMH profile
- Is consistent with patterns in retrieved examples (e.g., if similar LMH profiles got high probability there, mirror that)

Rules:
- Return ONLY JSON (no markdown).
- Use exactly schema: 
{
    "predicted_distribution": {"A": 0.25, "B": 0.15, "C": 0.15, "D": 0.45},
    "rationale": "<brief>",
}

Return JSON now.
"#;

const DISTRIBUTION_ONLY_TEMPLATE: &str = r#"Context:
You are given similar WVS questions from the SAME demographic group.
Each provides:
- observed_distribution_over_labels

Reference questions:
{reference_questions}

Input survey question:
{new_question}

Answer options:
{answer_options}

Task:
For the input survey question, return a plausible probability distribution over the answer options that:
- Uses all options as keys
- Values are floats >= 0
- Sums to 1 (within rounding)
- Is consistent with patterns in retrieved examples (e.g., if similar questions got high probability on an answer there, mirror that)

Rules:
- Return ONLY JSON (no markdown).
- Use exactly schema:
{
    "predicted_distribution": {"A": 0.25, "B": 0.15, "C": 0.15, "D": 0.45},
    "rationale": "<brief>",
}

Return JSON now.
"#;

const VERBALIZED_TEMPLATE: &str = r#"Consider how the adult population of {country} would answer the following survey question.

Input survey question:
{new_question}

Answer options:
{answer_options}

Task:
Return the distribution of answers you expect from people in {country}, as a probability distribution over the answer options that:
- Uses all options as keys
- Values are floats >= 0
- Sums to 1 (within rounding)

Rules:
- Return ONLY JSON (no markdown).
- Use exactly schema:
{
    "predicted_distribution": {"A": 0.25, "B": 0.15, "C": 0.15, "D": 0.45},
    "rationale": "<brief>",
}

Return JSON now.
"#;

const SINGLE_CHOICE_TEMPLATE: &str = r#"Imagine you are a person living in {country}. Answer the following survey question.

Input survey question:
{new_question}

Answer options:
{answer_options}

Answer with the letter of a single option only.
Answer:"#;

/// Single pass, so slot values containing `{name}` are never re-expanded.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in slots {
            let token_len = name.len() + 2;
            if tail.len() >= token_len
                && tail[1..].starts_with(name)
                && tail[token_len - 1..].starts_with('}')
            {
                out.push_str(value);
                rest = &tail[token_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Probabilities are shown to four decimals.
fn prob(p: f64) -> String {
    let r = (p * 1e4).round() / 1e4;
    serde_json::to_string(&r).expect("finite floats serialize")
}

pub fn signature_json(s: &LmhSignature) -> String {
    let labels: Vec<String> = s.labels().iter().map(|l| json_str(l.as_str())).collect();
    format!("[{}]", labels.join(", "))
}

/// `{"A": 0.5, ...}` in the item's option order.
fn distribution_json(options: &[SurveyOption], d: &AnswerDistribution) -> String {
    let parts: Vec<String> = options
        .iter()
        .map(|o| format!("{}: {}", json_str(&o.id), prob(d.get(&o.id))))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

fn option_texts_json(options: &[SurveyOption]) -> String {
    let parts: Vec<String> = options
        .iter()
        .map(|o| format!("{}: {}", json_str(&o.id), json_str(&o.text)))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

fn render_references(evidence: &RetrievedEvidence, with_lmh: bool) -> String {
    let mut out = String::new();
    for (i, entry) in evidence.entries.iter().enumerate() {
        let ev = &entry.evidence;
        let item = &ev.item;
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{}] {} (n={})", i + 1, item.item_id, ev.support);
        let _ = writeln!(
            out,
            "question: {}",
            json_str(&crate::retrieval::item_text(item))
        );
        let _ = writeln!(out, "options: {}", option_texts_json(&item.options));
        let _ = write!(
            out,
            "observed_distribution_over_labels: {}",
            distribution_json(&item.options, &ev.distribution)
        );
        if with_lmh {
            let parts: Vec<String> = item
                .options
                .iter()
                .filter_map(|o| {
                    let sig = ev.option_evidence.get(&o.id)?.signature?;
                    Some(format!("{}: {}", json_str(&o.id), signature_json(&sig)))
                })
                .collect();
            let _ = write!(out, "\nlabel_to_subindex_LMH: {{{}}}", parts.join(", "));
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

fn answer_options(options: &[SurveyOption]) -> String {
    options
        .iter()
        .map(|o| format!("- {}: {}", o.id, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn question_block(q: &Question, group_profile: Option<&LmhSignature>) -> String {
    let mut s = crate::retrieval::question_text(&q.text, q.instruction.as_deref());
    if let Some(p) = group_profile {
        let _ = write!(s, "\nGroup target LMH profile: {}", signature_json(p));
    }
    s
}

pub fn render_stage_a_prompt(
    q: &Question,
    group_profile: Option<&LmhSignature>,
    evidence: &RetrievedEvidence,
) -> String {
    fill(
        STAGE_A_TEMPLATE,
        &[
            ("sub_index_glossary", SUB_INDEX_GLOSSARY),
            (
                "reference_questions_with_lmh",
                &render_references(evidence, true),
            ),
            ("new_question", &question_block(q, group_profile)),
            ("answer_options", &answer_options(&q.options)),
        ],
    )
}

pub fn render_stage_b_prompt(
    q: &Question,
    group_profile: Option<&LmhSignature>,
    predicted: &OptionSignatures,
    evidence: &RetrievedEvidence,
) -> String {
    let mut block = format!("Question: {}", question_block(q, group_profile));
    block.push_str("\nAnswer options with predicted LMH profiles:");
    for o in &q.options {
        let sig = predicted
            .get(&o.id)
            .map_or_else(|| "[]".to_string(), signature_json);
        let _ = write!(block, "\n- {}: {} -> {}", o.id, o.text, sig);
    }
    fill(
        STAGE_B_TEMPLATE,
        &[
            ("sub_index_glossary", SUB_INDEX_GLOSSARY),
            (
                "reference_questions_with_lmh",
                &render_references(evidence, true),
            ),
            ("input_question_with_welzel", &block),
        ],
    )
}

/// Single-stage distribution prompt without value signatures.
pub fn render_distribution_only_prompt(q: &Question, evidence: &RetrievedEvidence) -> String {
    fill(
        DISTRIBUTION_ONLY_TEMPLATE,
        &[
            ("reference_questions", &render_references(evidence, false)),
            ("new_question", &question_block(q, None)),
            ("answer_options", &answer_options(&q.options)),
        ],
    )
}

pub fn render_verbalized_prompt(q: &Question, country: &str) -> String {
    fill(
        VERBALIZED_TEMPLATE,
        &[
            ("country", country),
            ("new_question", &question_block(q, None)),
            ("answer_options", &answer_options(&q.options)),
        ],
    )
}

/// Options are relabelled A, B, C, ... by position.
pub fn render_single_choice_prompt(q: &Question, country: &str) -> String {
    let lettered: Vec<SurveyOption> = q
        .options
        .iter()
        .enumerate()
        .map(|(i, o)| SurveyOption::new(option_letter(i), o.text.clone()))
        .collect();
    fill(
        SINGLE_CHOICE_TEMPLATE,
        &[
            ("country", country),
            ("new_question", &question_block(q, None)),
            ("answer_options", &answer_options(&lettered)),
        ],
    )
}

pub fn option_letter(i: usize) -> String {
    assert!(i < 26, "option letters only cover A..Z");
    ((b'A' + i as u8) as char).to_string()
}
