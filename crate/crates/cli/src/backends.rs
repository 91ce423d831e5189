use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use evida_core::llm::{
    ChatClientConfig, ChatCompletionsClient, LlmClient, ScriptedLlm, SyntheticLlm,
};
use evida_core::retrieval::{CachedEncoder, Encoder, HashEncoder, HttpEncoder, HttpEncoderConfig};
use evida_core::transport::RetryPolicy;

use crate::config::PipelineConfig;

/// Offline stand-ins selected by `--mock` / `--mock-script`.
#[derive(Debug, Clone, Default)]
pub struct MockChoice {
    pub enabled: bool,
    pub script: Option<PathBuf>,
}

impl MockChoice {
    pub fn active(&self) -> bool {
        self.enabled || self.script.is_some()
    }
}

pub fn encoder(cfg: &PipelineConfig, mock: &MockChoice) -> Result<Box<dyn Encoder>> {
    let hash = HashEncoder::new(cfg.hash_dim, cfg.hash_seed);
    if mock.active() {
        return Ok(Box::new(hash));
    }
    match &cfg.encoder_url {
        Some(url) => {
            let http = HttpEncoder::new(&HttpEncoderConfig {
                url: url.clone(),
                model: cfg.encoder_model.clone(),
                token_env: cfg.encoder_token_env.clone(),
                timeout: Duration::from_secs(cfg.timeout_secs),
                retry: RetryPolicy::default(),
            })?;
            Ok(Box::new(CachedEncoder::new(http, cfg.cache_dir.clone())))
        }
        None => {
            log::info!("no encoder_url configured; using the hashing encoder");
            Ok(Box::new(hash))
        }
    }
}

/// The chat backend, plus whether calls must be issued one at a time
/// (scripted replies are consumed in call order).
pub fn llm(cfg: &PipelineConfig, mock: &MockChoice) -> Result<(Box<dyn LlmClient>, bool)> {
    if let Some(path) = &mock.script {
        return Ok((Box::new(ScriptedLlm::from_file(path)?), true));
    }
    if mock.enabled {
        return Ok((Box::new(SyntheticLlm::new(cfg.hash_seed)), false));
    }
    let base_url = cfg.llm_base_url.clone().ok_or_else(|| {
        evida_core::Error::Input(
            "no LLM endpoint configured; set llm_base_url or pass --mock".into(),
        )
    })?;
    let client = ChatCompletionsClient::new(ChatClientConfig {
        base_url,
        model: cfg.llm_model.clone(),
        api_key_env: cfg.llm_api_key_env.clone(),
        timeout: Duration::from_secs(cfg.timeout_secs),
        retry: RetryPolicy::default(),
        logprobs: cfg.llm_logprobs,
        top_logprobs: 20,
    })
    .context("creating the chat-completions client")?;
    Ok((Box::new(client), false))
}

/// Name used in report columns.
pub fn model_name(cfg: &PipelineConfig, mock: &MockChoice) -> String {
    if mock.script.is_some() {
        "scripted".into()
    } else if mock.enabled {
        "mock".into()
    } else {
        cfg.llm_model.clone()
    }
}
