//! On-disk bank layout: `manifest.json` plus one JSON-lines file per group,
//! each line an [`ItemEvidence`]. The manifest carries the thresholds, the
//! schema version, and a SHA-256 of every group file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EvidenceBank, GroupEvidence, GroupKey, ItemEvidence};
use crate::error::{Error, Result, StoreError};
use crate::values::{LmhSignature, Thresholds};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub thresholds: Thresholds,
    pub item_count: usize,
    pub groups: Vec<GroupManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupManifest {
    pub key: GroupKey,
    pub file: String,
    pub sha256: String,
    pub respondents: u64,
    pub profile: LmhSignature,
    pub entries: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("bank types serialize infallibly")
}

/// Writes the bank under `dir`, creating it if needed. Output is a pure
/// function of the bank, so rebuilding from the same inputs is
/// byte-identical.
pub fn save_bank(bank: &EvidenceBank, dir: &Path) -> Result<BankManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut groups = Vec::with_capacity(bank.groups.len());
    for (i, (key, group)) in bank.groups.iter().enumerate() {
        let file = format!("group-{i:04}.jsonl");
        let mut body = String::new();
        for ev in group.items.values() {
            body.push_str(&to_json(ev));
            body.push('\n');
        }
        let path = dir.join(&file);
        std::fs::write(&path, body.as_bytes()).map_err(|e| Error::io(&path, e))?;
        groups.push(GroupManifest {
            key: key.clone(),
            file,
            sha256: sha256_hex(body.as_bytes()),
            respondents: group.respondents,
            profile: group.profile,
            entries: group.items.len(),
        });
    }
    let manifest = BankManifest {
        schema_version: SCHEMA_VERSION,
        tool: "evida".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        thresholds: bank.thresholds,
        item_count: bank.item_ids().len(),
        groups,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<BankManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let version: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
            file: MANIFEST_FILE.into(),
            reason: e.to_string(),
        })?;
    let found = version.get("schema_version").and_then(|v| v.as_u64());
    match found {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(StoreError::VersionMismatch {
                found: v as u32,
                expected: SCHEMA_VERSION,
            }
            .into())
        }
        None => {
            return Err(StoreError::Malformed {
                file: MANIFEST_FILE.into(),
                reason: "missing schema_version".into(),
            }
            .into())
        }
    }
    Ok(
        serde_json::from_value(version).map_err(|e| StoreError::Malformed {
            file: MANIFEST_FILE.into(),
            reason: e.to_string(),
        })?,
    )
}

pub fn load_bank(dir: &Path) -> Result<EvidenceBank> {
    let manifest = read_manifest(dir)?;
    let mut groups = BTreeMap::new();
    for gm in &manifest.groups {
        let path = dir.join(&gm.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let actual = sha256_hex(&bytes);
        if actual != gm.sha256 {
            return Err(StoreError::Checksum {
                file: gm.file.clone(),
                expected: gm.sha256.clone(),
                actual,
            }
            .into());
        }
        let malformed = |reason: String| StoreError::Malformed {
            file: gm.file.clone(),
            reason,
        };
        let text = String::from_utf8(bytes).map_err(|e| malformed(e.to_string()))?;
        let mut items = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let ev: ItemEvidence = serde_json::from_str(line)
                .map_err(|e| malformed(format!("line {}: {e}", i + 1)))?;
            ev.check()
                .map_err(|r| malformed(format!("line {}: {r}", i + 1)))?;
            if items.insert(ev.item.item_id.clone(), ev).is_some() {
                return Err(malformed(format!("line {}: duplicate item", i + 1)).into());
            }
        }
        if items.len() != gm.entries {
            return Err(malformed(format!(
                "{} entries, manifest says {}",
                items.len(),
                gm.entries
            ))
            .into());
        }
        let group = GroupEvidence {
            profile: gm.profile,
            respondents: gm.respondents,
            items,
        };
        if groups.insert(gm.key.clone(), group).is_some() {
            return Err(StoreError::Malformed {
                file: MANIFEST_FILE.into(),
                reason: format!("group {} listed twice", gm.key),
            }
            .into());
        }
    }
    Ok(EvidenceBank {
        thresholds: manifest.thresholds,
        groups,
    })
}
