//! Pipeline settings. Each key can come from a command-line flag, the TOML
//! config file, or an `EVIDA_<KEY>` environment variable, in that order of
//! precedence, falling back to the built-in default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use evida_core::inference::{Ablation, InferenceConfig};
use evida_core::llm::DecodingParams;
use evida_core::rewards::{RewardWeights, DEFAULT_GROUP_SIZE};
use evida_core::values::Thresholds;
use serde::Deserialize;

macro_rules! layered_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        /// One configuration layer; unset keys defer to lower layers.
        #[derive(Debug, Clone, Default, PartialEq, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigLayer {
            $( $(#[$doc])* pub $field: Option<$ty>, )*
        }

        impl ConfigLayer {
            /// Keys set in `higher` replace those set here.
            pub fn overlay(mut self, higher: ConfigLayer) -> ConfigLayer {
                $( if higher.$field.is_some() { self.$field = higher.$field; } )*
                self
            }

            /// Reads `EVIDA_<KEY>` variables from `vars`.
            pub fn from_env_map(vars: &HashMap<String, String>) -> Result<ConfigLayer> {
                let mut layer = ConfigLayer::default();
                $(
                    let name = concat!("EVIDA_", stringify!($field)).to_uppercase();
                    if let Some(raw) = vars.get(&name) {
                        layer.$field = Some(parse_env::<$ty>(&name, raw)?);
                    }
                )*
                Ok(layer)
            }

            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];
        }
    };
}

layered_config! {
    /// Evidence bank directory.
    bank: PathBuf,
    /// Embedding cache directory; no disk cache when unset.
    cache_dir: PathBuf,
    /// Embedding service URL; the offline hashing encoder is used when unset.
    encoder_url: String,
    encoder_model: String,
    encoder_token_env: String,
    hash_dim: usize,
    hash_seed: u64,
    /// Chat-completions base URL, e.g. `http://localhost:8000/v1`.
    llm_base_url: String,
    llm_model: String,
    llm_api_key_env: String,
    /// Whether the backend returns first-token logprobs.
    llm_logprobs: bool,
    timeout_secs: u64,
    temperature: f64,
    top_p: f64,
    top_k: u32,
    max_tokens: u32,
    /// Decoding seed.
    seed: u64,
    tau1: f64,
    tau2: f64,
    k: usize,
    n_min: u64,
    tolerance: f64,
    retries: u32,
    ablation: Ablation,
    weight_lmh: f64,
    weight_dist: f64,
    weight_schema_a: f64,
    weight_schema_b: f64,
    group_size: usize,
    /// Seed for episode sampling.
    episode_seed: u64,
    /// Opinion-sampling draws per case.
    samples: usize,
    max_in_flight: usize,
}

fn parse_env<T: FromStr>(name: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| anyhow::anyhow!("{name}={raw:?}: {e}"))
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<ConfigLayer> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| {
            format!(
                "parsing config {} (known keys: {})",
                path.display(),
                Self::KEYS.join(", ")
            )
        })
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub bank: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub encoder_url: Option<String>,
    pub encoder_model: Option<String>,
    pub encoder_token_env: String,
    pub hash_dim: usize,
    pub hash_seed: u64,
    pub llm_base_url: Option<String>,
    pub llm_model: String,
    pub llm_api_key_env: String,
    pub llm_logprobs: bool,
    pub timeout_secs: u64,
    pub decoding: DecodingParams,
    pub thresholds: Thresholds,
    pub k: usize,
    pub n_min: u64,
    pub tolerance: f64,
    pub retries: u32,
    pub ablation: Ablation,
    pub weights: RewardWeights,
    pub group_size: usize,
    pub episode_seed: u64,
    pub samples: usize,
    pub max_in_flight: usize,
}

impl PipelineConfig {
    pub fn resolve(layer: ConfigLayer) -> Result<PipelineConfig> {
        let inf = InferenceConfig::default();
        let dec = DecodingParams::default();
        let w = RewardWeights::default();
        let thresholds = Thresholds::new(
            layer.tau1.unwrap_or(Thresholds::DEFAULT_TAU1),
            layer.tau2.unwrap_or(Thresholds::DEFAULT_TAU2),
        )?;
        let weights = RewardWeights::new(
            layer.weight_lmh.unwrap_or(w.lmh),
            layer.weight_dist.unwrap_or(w.dist),
            layer.weight_schema_a.unwrap_or(w.schema_a),
            layer.weight_schema_b.unwrap_or(w.schema_b),
        )?;
        let cfg = PipelineConfig {
            bank: layer.bank.unwrap_or_else(|| PathBuf::from("bank")),
            cache_dir: layer.cache_dir,
            encoder_url: layer.encoder_url,
            encoder_model: layer.encoder_model,
            encoder_token_env: layer
                .encoder_token_env
                .unwrap_or_else(|| "EVIDA_ENCODER_API_KEY".into()),
            hash_dim: layer.hash_dim.unwrap_or(256),
            hash_seed: layer.hash_seed.unwrap_or(0),
            llm_base_url: layer.llm_base_url,
            llm_model: layer.llm_model.unwrap_or_else(|| "default".into()),
            llm_api_key_env: layer
                .llm_api_key_env
                .unwrap_or_else(|| "EVIDA_API_KEY".into()),
            llm_logprobs: layer.llm_logprobs.unwrap_or(false),
            timeout_secs: layer.timeout_secs.unwrap_or(120),
            decoding: DecodingParams {
                temperature: layer.temperature.unwrap_or(dec.temperature),
                top_p: layer.top_p,
                top_k: layer.top_k,
                max_tokens: layer.max_tokens.unwrap_or(dec.max_tokens),
                seed: layer.seed,
            },
            thresholds,
            k: layer.k.unwrap_or(inf.k),
            n_min: layer.n_min.unwrap_or(inf.n_min),
            tolerance: layer.tolerance.unwrap_or(inf.tolerance),
            retries: layer.retries.unwrap_or(inf.retries),
            ablation: layer.ablation.unwrap_or(inf.ablation),
            weights,
            group_size: layer.group_size.unwrap_or(DEFAULT_GROUP_SIZE),
            episode_seed: layer.episode_seed.unwrap_or(0),
            samples: layer.samples.unwrap_or(10_000),
            max_in_flight: layer.max_in_flight.unwrap_or(4),
        };
        cfg.inference().validate()?;
        if cfg.group_size < 2 {
            bail!("group_size must be at least 2");
        }
        if cfg.hash_dim == 0 {
            bail!("hash_dim must be positive");
        }
        Ok(cfg)
    }

    /// Resolves flag > file > environment > default.
    pub fn load(
        flags: ConfigLayer,
        file: Option<&Path>,
        env: &HashMap<String, String>,
    ) -> Result<PipelineConfig> {
        let mut layer = ConfigLayer::from_env_map(env)?;
        if let Some(path) = file {
            layer = layer.overlay(ConfigLayer::from_file(path)?);
        }
        Self::resolve(layer.overlay(flags))
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            k: self.k,
            n_min: self.n_min,
            tolerance: self.tolerance,
            retries: self.retries,
            decoding: self.decoding.clone(),
            ablation: self.ablation,
        }
    }
}
