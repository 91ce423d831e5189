use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use evida_core::inference::Ablation;
use evida_core::ErrorClass;

mod backends;
mod commands;
mod config;

use backends::MockChoice;
use config::{ConfigLayer, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "evida",
    version,
    about = "Predict country-level survey answer distributions from survey evidence"
)]
struct Cli {
    /// TOML file with pipeline settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(flatten)]
    settings: SettingFlags,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override config-file and environment settings.
#[derive(Args, Default)]
struct SettingFlags {
    /// Evidence bank directory.
    #[arg(long, global = true)]
    bank: Option<PathBuf>,
    /// Use the offline synthetic model and hashing encoder.
    #[arg(long, global = true)]
    mock: bool,
    /// Replay model replies from a JSON script (implies --mock).
    #[arg(long, global = true, value_name = "FILE")]
    mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    llm_base_url: Option<String>,
    #[arg(long, global = true)]
    llm_model: Option<String>,
    #[arg(long, global = true)]
    encoder_url: Option<String>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Number of retrieved evidence items.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Minimum support for an evidence item.
    #[arg(long, global = true)]
    n_min: Option<u64>,
    #[arg(long, global = true)]
    tau1: Option<f64>,
    #[arg(long, global = true)]
    tau2: Option<f64>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Decoding seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true)]
    retries: Option<u32>,
    /// full, no-evidence or no-welzel.
    #[arg(long, global = true)]
    ablation: Option<Ablation>,
    #[arg(long, global = true)]
    group_size: Option<usize>,
    #[arg(long, global = true)]
    episode_seed: Option<u64>,
    /// Opinion-sampling draws per case.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// Reward weights as LMH,DIST,SCHEMA_A,SCHEMA_B.
    #[arg(long, global = true, value_parser = parse_weights, value_name = "W,W,W,W")]
    weights: Option<[f64; 4]>,
}

fn parse_weights(raw: &str) -> Result<[f64; 4], String> {
    let parts = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| format!("expected 4 weights, got {}", p.len()))
}

impl SettingFlags {
    fn layer(&self) -> ConfigLayer {
        let w = |i: usize| self.weights.as_ref().map(|w| w[i]);
        ConfigLayer {
            bank: self.bank.clone(),
            llm_base_url: self.llm_base_url.clone(),
            llm_model: self.llm_model.clone(),
            encoder_url: self.encoder_url.clone(),
            cache_dir: self.cache_dir.clone(),
            k: self.k,
            n_min: self.n_min,
            tau1: self.tau1,
            tau2: self.tau2,
            temperature: self.temperature,
            seed: self.seed,
            tolerance: self.tolerance,
            retries: self.retries,
            ablation: self.ablation,
            group_size: self.group_size,
            episode_seed: self.episode_seed,
            samples: self.samples,
            max_in_flight: self.max_in_flight,
            weight_lmh: w(0),
            weight_dist: w(1),
            weight_schema_a: w(2),
            weight_schema_b: w(3),
            ..Default::default()
        }
    }

    fn mock(&self) -> MockChoice {
        MockChoice {
            enabled: self.mock,
            script: self.mock_script.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic microdata set, item catalog, benchmark and question file.
    Synth(commands::bank::SynthArgs),
    /// Aggregate respondent microdata into an evidence bank.
    BuildBank(commands::bank::BuildBankArgs),
    /// Summarize a saved evidence bank.
    InspectBank,
    /// Show the evidence retrieved for a question.
    Retrieve(commands::predict::RetrieveArgs),
    /// Predict answer distributions for questions.
    Predict(commands::predict::PredictArgs),
    /// Score predictors on a benchmark and write reports.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Build training episodes, collect scored rollouts and export a batch.
    Episodes(commands::train::EpisodesArgs),
    /// Summarize an exported batch, optionally re-weighting its rewards.
    Score(commands::train::ScoreArgs),
}

/// Marks errors that come from the user's settings rather than the data.
#[derive(Debug)]
struct SettingsError;

impl std::fmt::Display for SettingsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid settings")
    }
}

impl std::error::Error for SettingsError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<SettingsError>().is_some() {
        return 2;
    }
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<evida_core::Error>())
        .map(evida_core::Error::class);
    match class {
        Some(ErrorClass::Domain) => 3,
        Some(ErrorClass::Transport) => 4,
        Some(ErrorClass::Input) | None => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let env: std::collections::HashMap<String, String> = std::env::vars().collect();
    let cfg = PipelineConfig::load(cli.settings.layer(), cli.config.as_deref(), &env)
        .map_err(|e| e.context(SettingsError))?;
    let mock = cli.settings.mock();
    match cli.command {
        Command::Synth(a) => commands::bank::synth(&a),
        Command::BuildBank(a) => commands::bank::build_bank(&cfg, &a),
        Command::InspectBank => commands::bank::inspect_bank(&cfg),
        Command::Retrieve(a) => commands::predict::retrieve(&cfg, &mock, &a),
        Command::Predict(a) => commands::predict::predict(&cfg, &mock, &a),
        Command::Evaluate(a) => commands::evaluate::evaluate(&cfg, &mock, &a),
        Command::Episodes(a) => commands::train::episodes(&cfg, &mock, &a),
        Command::Score(a) => commands::train::score(&cfg, &a),
    }
}

/// Exit quietly when stdout is closed early (`evida ... | head`).
#[cfg(unix)]
fn reset_sigpipe() {
    // SAFETY: restores the default disposition before any other thread exists.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
