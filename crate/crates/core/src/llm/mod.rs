//! LLM backend contract and an OpenAI-compatible chat-completions client.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TransportError};
use crate::transport::{token_from_env, with_retries, JsonEndpoint, RetryPolicy};

mod mock;

pub use mock::{ScriptRule, ScriptedLlm, SyntheticLlm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.7,
            top_k: None,
            top_p: None,
            max_tokens: 1024,
            seed: None,
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Domain(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Domain("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Same parameters with the seed offset by `n`, when a seed is set.
    pub fn offset_seed(&self, n: u64) -> Self {
        DecodingParams {
            seed: self.seed.map(|s| s.wrapping_add(n)),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Log-probabilities of candidate first tokens, when requested and
    /// supported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_logprobs: Option<BTreeMap<String, f64>>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            first_token_logprobs: None,
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn identity(&self) -> String;

    fn supports_logprobs(&self) -> bool;

    fn complete(
        &self,
        prompt: &str,
        params: &DecodingParams,
        want_logprobs: bool,
    ) -> Result<Completion>;
}

impl<L: LlmClient + ?Sized> LlmClient for &L {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn supports_logprobs(&self) -> bool {
        (**self).supports_logprobs()
    }

    fn complete(
        &self,
        prompt: &str,
        params: &DecodingParams,
        want_logprobs: bool,
    ) -> Result<Completion> {
        (**self).complete(prompt, params, want_logprobs)
    }
}

impl<L: LlmClient + ?Sized> LlmClient for Box<L> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn supports_logprobs(&self) -> bool {
        (**self).supports_logprobs()
    }

    fn complete(
        &self,
        prompt: &str,
        params: &DecodingParams,
        want_logprobs: bool,
    ) -> Result<Completion> {
        (**self).complete(prompt, params, want_logprobs)
    }
}

#[derive(Debug, Clone)]
pub struct ChatClientConfig {
    /// Base URL up to and including the API version, e.g. `http://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub logprobs: bool,
    pub top_logprobs: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Client for any server exposing `POST {base_url}/chat/completions`.
pub struct ChatCompletionsClient {
    endpoint: JsonEndpoint,
    cfg: ChatClientConfig,
}

impl ChatCompletionsClient {
    pub fn new(cfg: ChatClientConfig) -> Result<Self> {
        let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        let endpoint = JsonEndpoint::new(url, token_from_env(&cfg.api_key_env), cfg.timeout)?;
        Ok(ChatCompletionsClient { endpoint, cfg })
    }
}

impl LlmClient for ChatCompletionsClient {
    fn identity(&self) -> String {
        format!("chat:{}:{}", self.endpoint.url(), self.cfg.model)
    }

    fn supports_logprobs(&self) -> bool {
        self.cfg.logprobs
    }

    fn complete(
        &self,
        prompt: &str,
        params: &DecodingParams,
        want_logprobs: bool,
    ) -> Result<Completion> {
        params.validate()?;
        if want_logprobs && !self.cfg.logprobs {
            return Err(TransportError::Unsupported(
                "first-token logprobs are disabled for this backend".into(),
            )
            .into());
        }
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: params.temperature,
            top_p: params.top_p,
            top_k: params.top_k,
            max_tokens: params.max_tokens,
            seed: params.seed,
            logprobs: want_logprobs,
            top_logprobs: want_logprobs.then_some(self.cfg.top_logprobs),
        };
        let resp: ChatResponse = with_retries(&self.cfg.retry, || self.endpoint.post(&body))?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::Decode("response has no choices".into()))?;
        let first_token_logprobs = if want_logprobs {
            let first = choice
                .logprobs
                .and_then(|l| l.content)
                .and_then(|c| c.into_iter().next())
                .ok_or_else(|| TransportError::Decode("response carries no logprobs".into()))?;
            let mut map: BTreeMap<String, f64> = first
                .top_logprobs
                .into_iter()
                .map(|t| (t.token, t.logprob))
                .collect();
            map.entry(first.token).or_insert(first.logprob);
            Some(map)
        } else {
            None
        };
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            first_token_logprobs,
        })
    }
}
