//! Extraction and decoding of the JSON objects models return. Decoding only
//! checks shape; content rules live in `validate`.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseFailure {
    #[error("no JSON object found")]
    NoJson,
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("wrong top-level keys: {0}")]
    WrongKeys(String),
    #[error("unexpected value shape: {0}")]
    WrongShape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionProfile {
    pub option: String,
    /// Raw label strings as emitted, before validation.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAOutput {
    pub subindex_order: Vec<String>,
    pub option_profiles: Vec<OptionProfile>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBOutput {
    /// Keys as emitted (option id or option text), in emitted order.
    pub predicted_distribution: Vec<(String, f64)>,
    pub rationale: String,
}

/// Returns the first balanced top-level `{...}` in `text`. A fenced
/// Markdown block is searched first when one is present.
pub fn extract_json_object(text: &str) -> Result<&str, ParseFailure> {
    if let Some(inner) = fenced_block(text) {
        if let Some(found) = first_object(inner)? {
            return Ok(found);
        }
    }
    first_object(text)?.ok_or(ParseFailure::NoJson)
}

fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // skip an info string such as `json`
    let body_start = after.find('\n').map_or(0, |i| i + 1);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

fn first_object(text: &str) -> Result<Option<&str>, ParseFailure> {
    let Some(start) = text.find('{') else {
        return Ok(None);
    };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(Some(&text[start..start + i + 1]));
                }
            }
            _ => {}
        }
    }
    Err(ParseFailure::Malformed("unbalanced braces".into()))
}

fn object(text: &str) -> Result<Map<String, Value>, ParseFailure> {
    let raw = extract_json_object(text)?;
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ParseFailure::WrongShape(
            "top level is not an object".into(),
        )),
        Err(e) => Err(ParseFailure::Malformed(e.to_string())),
    }
}

fn check_keys(
    m: &Map<String, Value>,
    required: &[&str],
    optional: &[&str],
) -> Result<(), ParseFailure> {
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|k| !m.contains_key(*k))
        .collect();
    let unexpected: Vec<&str> = m
        .keys()
        .map(String::as_str)
        .filter(|k| !required.contains(k) && !optional.contains(k))
        .collect();
    if missing.is_empty() && unexpected.is_empty() {
        return Ok(());
    }
    Err(ParseFailure::WrongKeys(format!(
        "missing {missing:?}, unexpected {unexpected:?}"
    )))
}

fn string_list(v: &Value, what: &str) -> Result<Vec<String>, ParseFailure> {
    let arr = v
        .as_array()
        .ok_or_else(|| ParseFailure::WrongShape(format!("{what} is not a list")))?;
    arr.iter()
        .map(|x| {
            x.as_str()
                .map(str::to_string)
                .ok_or_else(|| ParseFailure::WrongShape(format!("{what} holds a non-string")))
        })
        .collect()
}

fn optional_string(m: &Map<String, Value>, key: &str) -> Result<String, ParseFailure> {
    match m.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseFailure::WrongShape(format!("{key} is not a string"))),
    }
}

pub fn parse_stage_a(text: &str) -> Result<StageAOutput, ParseFailure> {
    let m = object(text)?;
    check_keys(&m, &["subindex_order", "option_profiles"], &["notes"])?;
    let subindex_order = string_list(&m["subindex_order"], "subindex_order")?;
    let profiles = m["option_profiles"]
        .as_array()
        .ok_or_else(|| ParseFailure::WrongShape("option_profiles is not a list".into()))?;
    let option_profiles = profiles
        .iter()
        .map(|p| {
            let obj = p.as_object().ok_or_else(|| {
                ParseFailure::WrongShape("option profile is not an object".into())
            })?;
            let option = match obj.get("option") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => {
                    return Err(ParseFailure::WrongShape(
                        "option profile lacks an option string".into(),
                    ))
                }
            };
            let labels = obj
                .get("subindex_LMH")
                .ok_or_else(|| {
                    ParseFailure::WrongShape(format!("profile for {option} lacks subindex_LMH"))
                })
                .and_then(|v| string_list(v, "subindex_LMH"))?;
            Ok(OptionProfile { option, labels })
        })
        .collect::<Result<_, _>>()?;
    Ok(StageAOutput {
        subindex_order,
        option_profiles,
        notes: optional_string(&m, "notes")?,
    })
}

pub fn parse_stage_b(text: &str) -> Result<StageBOutput, ParseFailure> {
    let m = object(text)?;
    check_keys(&m, &["predicted_distribution"], &["rationale"])?;
    let dist = m["predicted_distribution"].as_object().ok_or_else(|| {
        ParseFailure::WrongShape("predicted_distribution is not an object".into())
    })?;
    let predicted_distribution = dist
        .iter()
        .map(|(k, v)| {
            v.as_f64().map(|x| (k.clone(), x)).ok_or_else(|| {
                ParseFailure::WrongShape(format!("probability for {k} is not a number"))
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(StageBOutput {
        predicted_distribution,
        rationale: optional_string(&m, "rationale")?,
    })
}
