use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use evida_core::evidence::{load_bank, EvidenceBank};

use crate::config::PipelineConfig;

pub mod bank;
pub mod evaluate;
pub mod predict;
pub mod train;

pub fn open_bank(cfg: &PipelineConfig) -> Result<EvidenceBank> {
    load_bank(&cfg.bank).with_context(|| format!("loading bank {}", cfg.bank.display()))
}

/// Writes `lines` (each without a newline) to `out`, or stdout when `None`.
pub fn write_lines(out: Option<&Path>, lines: &[String]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
            lock.flush()?;
            Ok(())
        }
    }
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}
