//! Offline LLM backends for tests and `--mock` runs.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{Completion, DecodingParams, LlmClient};
use crate::error::{Error, Result};
use crate::inference::prompts::{DISTRIBUTION_MARKER, SINGLE_CHOICE_MARKER, STAGE_A_MARKER};
use crate::values::canonical_order;

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptedResponse {
    Text(String),
    Full(Completion),
}

impl From<ScriptedResponse> for Completion {
    fn from(r: ScriptedResponse) -> Self {
        match r {
            ScriptedResponse::Text(t) => Completion::text(t),
            ScriptedResponse::Full(c) => c,
        }
    }
}

#[derive(Deserialize)]
struct RawRule {
    #[serde(default)]
    contains: Option<String>,
    responses: Vec<ScriptedResponse>,
}

#[derive(Deserialize)]
struct RawScript {
    rules: Vec<RawRule>,
}

/// A canned response list, used for prompts containing `contains` (or for
/// every prompt when `None`). Responses cycle in order.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub contains: Option<String>,
    pub responses: Vec<Completion>,
}

impl ScriptRule {
    pub fn always(text: impl Into<String>) -> Self {
        ScriptRule {
            contains: None,
            responses: vec![Completion::text(text)],
        }
    }

    pub fn when(marker: impl Into<String>, texts: &[&str]) -> Self {
        ScriptRule {
            contains: Some(marker.into()),
            responses: texts.iter().map(|t| Completion::text(*t)).collect(),
        }
    }
}

/// Replays scripted completions. The first rule whose marker occurs in the
/// prompt answers; each rule keeps its own cursor, so output is
/// reproducible only under sequential use.
pub struct ScriptedLlm {
    rules: Vec<ScriptRule>,
    cursors: Vec<AtomicUsize>,
}

impl ScriptedLlm {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        let cursors = rules.iter().map(|_| AtomicUsize::new(0)).collect();
        ScriptedLlm { rules, cursors }
    }

    /// Loads `{"rules": [{"contains": "...", "responses": ["...", {...}]}]}`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawScript = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let rules = raw
            .rules
            .into_iter()
            .map(|r| {
                if r.responses.is_empty() {
                    return Err(Error::Input(format!(
                        "{}: rule has no responses",
                        path.display()
                    )));
                }
                Ok(ScriptRule {
                    contains: r.contains,
                    responses: r.responses.into_iter().map(Completion::from).collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(ScriptedLlm::new(rules))
    }
}

impl LlmClient for ScriptedLlm {
    fn identity(&self) -> String {
        "scripted".into()
    }

    fn supports_logprobs(&self) -> bool {
        self.rules
            .iter()
            .flat_map(|r| &r.responses)
            .any(|c| c.first_token_logprobs.is_some())
    }

    fn complete(
        &self,
        prompt: &str,
        _params: &DecodingParams,
        _want_logprobs: bool,
    ) -> Result<Completion> {
        for (rule, cursor) in self.rules.iter().zip(&self.cursors) {
            if rule.contains.as_deref().is_none_or(|m| prompt.contains(m)) {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                return Ok(rule.responses[i % rule.responses.len()].clone());
            }
        }
        Err(Error::Input(
            "no scripted response matches the prompt".into(),
        ))
    }
}

/// A stateless stand-in model. It reads the option list from the prompt and
/// answers every prompt family with well-formed output whose content is a
/// hash of (model seed, decoding seed, prompt). Safe under concurrency.
#[derive(Debug, Clone, Default)]
pub struct SyntheticLlm {
    seed: u64,
}

impl SyntheticLlm {
    pub fn new(seed: u64) -> Self {
        SyntheticLlm { seed }
    }

    fn unit(&self, params: &DecodingParams, prompt: &str, tag: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(params.seed.unwrap_or(0).to_le_bytes());
        h.update(prompt.as_bytes());
        h.update([0]);
        h.update(tag.as_bytes());
        let d = h.finalize();
        let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        (v >> 11) as f64 / (1u64 << 53) as f64
    }

    fn weights(&self, params: &DecodingParams, prompt: &str, ids: &[String]) -> Vec<f64> {
        ids.iter()
            .map(|id| 0.1 + self.unit(params, prompt, &format!("w:{id}")))
            .collect()
    }
}

/// Option ids listed as `- <id>: ...` under the first "Answer options" line.
pub(crate) fn listed_options(prompt: &str) -> Vec<String> {
    let mut lines = prompt
        .lines()
        .skip_while(|l| !l.starts_with("Answer options"));
    lines.next();
    lines
        .take_while(|l| l.starts_with("- "))
        .filter_map(|l| l[2..].split_once(':').map(|(id, _)| id.trim().to_string()))
        .collect()
}

impl LlmClient for SyntheticLlm {
    fn identity(&self) -> String {
        format!("synthetic:{}", self.seed)
    }

    fn supports_logprobs(&self) -> bool {
        true
    }

    fn complete(
        &self,
        prompt: &str,
        params: &DecodingParams,
        want_logprobs: bool,
    ) -> Result<Completion> {
        let ids = listed_options(prompt);
        if ids.is_empty() {
            return Ok(Completion::text("I am not sure how to answer that."));
        }
        if prompt.contains(STAGE_A_MARKER) {
            let profiles: Vec<serde_json::Value> = ids
                .iter()
                .map(|id| {
                    let labels: Vec<&str> = (0..8)
                        .map(|d| {
                            let u = self.unit(params, prompt, &format!("lmh:{id}:{d}"));
                            ["low", "medium", "high"][(u * 3.0) as usize % 3]
                        })
                        .collect();
                    serde_json::json!({"option": id, "subindex_LMH": labels})
                })
                .collect();
            let body = serde_json::json!({
                "subindex_order": canonical_order(),
                "option_profiles": profiles,
                "notes": "synthetic profile",
            });
            return Ok(Completion::text(body.to_string()));
        }
        let w = self.weights(params, prompt, &ids);
        let total: f64 = w.iter().sum();
        if prompt.contains(DISTRIBUTION_MARKER) {
            let dist: serde_json::Map<String, serde_json::Value> = ids
                .iter()
                .zip(&w)
                .map(|(id, x)| (id.clone(), serde_json::json!(x / total)))
                .collect();
            let body =
                serde_json::json!({"predicted_distribution": dist, "rationale": "synthetic"});
            return Ok(Completion::text(body.to_string()));
        }
        if prompt.contains(SINGLE_CHOICE_MARKER) {
            let mut u = self.unit(params, prompt, "choice") * total;
            let mut pick = ids.len() - 1;
            for (i, x) in w.iter().enumerate() {
                if u < *x {
                    pick = i;
                    break;
                }
                u -= x;
            }
            let logprobs = want_logprobs.then(|| {
                ids.iter()
                    .zip(&w)
                    .map(|(id, x)| (id.clone(), (x / total).ln()))
                    .collect()
            });
            return Ok(Completion {
                text: ids[pick].clone(),
                first_token_logprobs: logprobs,
            });
        }
        Ok(Completion::text("I am not sure how to answer that."))
    }
}
