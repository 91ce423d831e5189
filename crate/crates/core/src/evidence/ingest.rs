//! Respondent microdata ingestion.
//!
//! Two input layouts share the same field names: delimited text with a
//! header row, and JSON lines. Recognized fields are `respondent_id`,
//! `country`, the eight sub-index columns `DEFIANCE`..`VOICE`, and one
//! column per catalog item holding the chosen option id. Any other column is
//! a categorical group attribute.
//!
//! Malformed rows are reported and skipped; only an unreadable source or an
//! unusable header is fatal.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde_json::Value;

use super::{GroupKey, ItemCatalog, RespondentRecord};
use crate::error::{Error, Result};
use crate::values::{SubIndex, WelzelProfile, DIMENSIONS};

/// Slack allowed outside `[0,1]` before a sub-index value is rejected rather
/// than clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicrodataFormat {
    Delimited { delimiter: u8 },
    JsonLines,
}

impl Default for MicrodataFormat {
    fn default() -> Self {
        MicrodataFormat::Delimited { delimiter: b'\t' }
    }
}

impl MicrodataFormat {
    /// `.jsonl`/`.ndjson` are JSON lines, `.csv` is comma-delimited, anything
    /// else is tab-delimited.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => MicrodataFormat::JsonLines,
            Some("csv") => MicrodataFormat::Delimited { delimiter: b',' },
            _ => MicrodataFormat::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub format: MicrodataFormat,
    /// Answer codes treated as "not observed" in addition to negative
    /// integers (don't know / refused / not asked).
    pub missing_codes: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            format: MicrodataFormat::default(),
            missing_codes: ["", "NA", "N/A", "NaN", "."].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number in the source.
    pub line: u64,
    pub respondent_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<RespondentRecord>,
    pub rejections: Vec<Rejection>,
}

pub fn ingest_path(
    path: &Path,
    catalog: &ItemCatalog,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_respondents(file, catalog, opts)
}

pub fn ingest_respondents<R: Read>(
    source: R,
    catalog: &ItemCatalog,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    match opts.format {
        MicrodataFormat::Delimited { delimiter } => {
            ingest_delimited(source, delimiter, catalog, opts)
        }
        MicrodataFormat::JsonLines => ingest_jsonl(source, catalog, opts),
    }
}

/// One row's raw fields, before validation.
#[derive(Default)]
struct RawRow {
    respondent_id: Option<String>,
    country: Option<String>,
    subindex: [Option<String>; DIMENSIONS],
    answers: Vec<(String, String)>,
    attributes: BTreeMap<String, String>,
}

enum Column {
    RespondentId,
    Country,
    SubIndex(usize),
    Item(String),
    Attribute(String),
}

fn classify(name: &str, catalog: &ItemCatalog) -> Column {
    match name {
        "respondent_id" => Column::RespondentId,
        "country" => Column::Country,
        _ => {
            if let Some(s) = SubIndex::from_name(name) {
                Column::SubIndex(s as usize)
            } else if catalog.get(name).is_some() {
                Column::Item(name.to_string())
            } else {
                Column::Attribute(name.to_string())
            }
        }
    }
}

fn ingest_delimited<R: Read>(
    source: R,
    delimiter: u8,
    catalog: &ItemCatalog,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Input(format!("cannot read microdata header: {e}")))?
        .clone();
    let columns: Vec<Column> = header.iter().map(|h| classify(h.trim(), catalog)).collect();
    check_header(&columns)?;

    let mut report = IngestReport::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(Error::Input(format!("microdata read failed: {e}")));
                }
                let line = e.position().map_or(0, |p| p.line());
                report.rejections.push(Rejection {
                    line,
                    respondent_id: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != columns.len() {
            report.rejections.push(Rejection {
                line,
                respondent_id: row.get(0).map(str::to_string),
                reason: format!("row has {} fields, header has {}", row.len(), columns.len()),
            });
            continue;
        }
        let mut raw = RawRow::default();
        for (col, field) in columns.iter().zip(row.iter()) {
            let field = field.trim().to_string();
            match col {
                Column::RespondentId => raw.respondent_id = Some(field),
                Column::Country => raw.country = Some(field),
                Column::SubIndex(d) => raw.subindex[*d] = Some(field),
                Column::Item(id) => raw.answers.push((id.clone(), field)),
                Column::Attribute(name) => {
                    raw.attributes.insert(name.clone(), field);
                }
            }
        }
        push_row(&mut report, line, raw, catalog, opts);
    }
    Ok(report)
}

fn check_header(columns: &[Column]) -> Result<()> {
    let has = |f: &dyn Fn(&Column) -> bool| columns.iter().any(f);
    if !has(&|c| matches!(c, Column::RespondentId)) {
        return Err(Error::Input("microdata header lacks respondent_id".into()));
    }
    if !has(&|c| matches!(c, Column::Country)) {
        return Err(Error::Input("microdata header lacks country".into()));
    }
    for s in SubIndex::ALL {
        if !has(&|c| matches!(c, Column::SubIndex(d) if *d == s as usize)) {
            return Err(Error::Input(format!(
                "microdata header lacks sub-index column {s}"
            )));
        }
    }
    Ok(())
}

fn json_scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => Some(v.to_string()),
    }
}

fn ingest_jsonl<R: Read>(
    source: R,
    catalog: &ItemCatalog,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::Input(format!("microdata read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(o)) => o,
            Ok(_) => {
                report.rejections.push(Rejection {
                    line: line_no,
                    respondent_id: None,
                    reason: "line is not a JSON object".into(),
                });
                continue;
            }
            Err(e) => {
                report.rejections.push(Rejection {
                    line: line_no,
                    respondent_id: None,
                    reason: format!("invalid JSON: {e}"),
                });
                continue;
            }
        };
        let mut raw = RawRow::default();
        for (key, value) in &obj {
            let field = json_scalar(value);
            match classify(key, catalog) {
                Column::RespondentId => raw.respondent_id = field,
                Column::Country => raw.country = field,
                Column::SubIndex(d) => raw.subindex[d] = field,
                Column::Item(id) => raw.answers.push((id, field.unwrap_or_default())),
                Column::Attribute(name) => {
                    if let Some(f) = field {
                        raw.attributes.insert(name, f);
                    }
                }
            }
        }
        push_row(&mut report, line_no, raw, catalog, opts);
    }
    Ok(report)
}

fn push_row(
    report: &mut IngestReport,
    line: u64,
    raw: RawRow,
    catalog: &ItemCatalog,
    opts: &IngestOptions,
) {
    let id = raw.respondent_id.clone();
    match validate_row(raw, catalog, opts) {
        Ok(rec) => report.records.push(rec),
        Err(reason) => report.rejections.push(Rejection {
            line,
            respondent_id: id,
            reason,
        }),
    }
}

fn is_missing(code: &str, opts: &IngestOptions) -> bool {
    opts.missing_codes.iter().any(|m| m == code) || code.parse::<i64>().is_ok_and(|n| n < 0)
}

fn validate_row(
    raw: RawRow,
    catalog: &ItemCatalog,
    opts: &IngestOptions,
) -> std::result::Result<RespondentRecord, String> {
    let respondent_id = raw
        .respondent_id
        .filter(|s| !s.is_empty())
        .ok_or("missing respondent_id")?;
    let country = raw
        .country
        .filter(|s| !s.is_empty())
        .ok_or("missing country")?;

    let mut values = [0.0; DIMENSIONS];
    for (d, field) in raw.subindex.iter().enumerate() {
        let name = SubIndex::ALL[d].name();
        let field = field
            .as_deref()
            .filter(|f| !f.is_empty() && !opts.missing_codes.iter().any(|m| m == f))
            .ok_or_else(|| format!("missing sub-index {name}"))?;
        let v: f64 = field
            .parse()
            .map_err(|_| format!("sub-index {name} is not a number: {field}"))?;
        if !v.is_finite() || !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&v) {
            return Err(format!("sub-index {name} value {v} outside [0,1]"));
        }
        values[d] = v.clamp(0.0, 1.0);
    }
    let profile = WelzelProfile::new(values).map_err(|e| e.to_string())?;

    let mut answers = BTreeMap::new();
    for (item_id, code) in raw.answers {
        if is_missing(&code, opts) {
            continue;
        }
        let item = catalog
            .get(&item_id)
            .expect("item columns come from the catalog");
        if !item.has_option(&code) {
            return Err(format!("item {item_id}: `{code}` is not an option id"));
        }
        answers.insert(item_id, code);
    }

    Ok(RespondentRecord {
        respondent_id,
        group: GroupKey {
            country,
            attributes: raw.attributes,
        },
        profile,
        answers,
    })
}
