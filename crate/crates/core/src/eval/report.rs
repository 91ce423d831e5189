//! Report files: JSON summary, per-case CSV, and Markdown tables laid out
//! as methods by model, plus per-country breakdowns.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LmhAccuracy, MethodResult};
use crate::error::{Error, Result};

pub const AGGREGATION_NOTE: &str =
    "macro mean over cases; cases without a valid prediction count as JSD 1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub mean_jsd: f64,
    pub validity_rate: f64,
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn markdown_report(model: &str, results: &[MethodResult], lmh: Option<&LmhAccuracy>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Mean JSD (lower is better)\n");
    let _ = writeln!(s, "Aggregation: {AGGREGATION_NOTE}.\n");
    let _ = writeln!(s, "| Method | {model} | Average |");
    let _ = writeln!(s, "|---|---|---|");
    for r in results {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            r.method,
            f4(r.mean_jsd),
            f4(r.mean_jsd)
        );
    }

    let _ = writeln!(s, "\n## Stage-B validity\n");
    let _ = writeln!(s, "| Method | Cases | Valid |");
    let _ = writeln!(s, "|---|---|---|");
    for r in results {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            r.method,
            r.per_case.len(),
            f4(r.validity_rate)
        );
    }

    let countries: BTreeSet<&str> = results
        .iter()
        .flat_map(|r| r.per_country.keys().map(String::as_str))
        .collect();
    let _ = writeln!(s, "\n## Mean JSD by country\n");
    let header: Vec<&str> = countries.iter().copied().collect();
    let _ = writeln!(s, "| Method | {} |", header.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(header.len()));
    for r in results {
        let cells: Vec<String> = header
            .iter()
            .map(|c| {
                r.per_country
                    .get(*c)
                    .map_or_else(|| "-".to_string(), |x| f4(x.mean_jsd))
            })
            .collect();
        let _ = writeln!(s, "| {} | {} |", r.method, cells.join(" | "));
    }

    if let Some(acc) = lmh {
        let _ = writeln!(s, "\n## LMH signature accuracy\n");
        let _ = writeln!(s, "| Country | Cases | Accuracy |");
        let _ = writeln!(s, "|---|---|---|");
        for (c, a) in &acc.per_country {
            let _ = writeln!(s, "| {c} | {} | {} |", a.cases, f4(a.accuracy));
        }
        let _ = writeln!(s, "| Average | {} | {} |", acc.cases, f4(acc.overall));
    }
    s
}

pub fn k_sweep_markdown(rows: &[KSweepRow]) -> String {
    let mut s = String::from(
        "## Mean JSD by number of retrieved items K\n\n| K | Mean JSD | Valid |\n|---|---|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            r.k,
            f4(r.mean_jsd),
            f4(r.validity_rate)
        );
    }
    s
}

pub fn write_per_case_csv(path: &Path, results: &[MethodResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    w.write_record(["method", "case_id", "country", "jsd", "scored_jsd", "valid"])
        .map_err(fail)?;
    for r in results {
        for c in &r.per_case {
            let jsd = c.jsd.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                r.method.as_str(),
                &c.case_id,
                &c.country,
                &jsd,
                &c.scored_jsd().to_string(),
                if c.valid { "true" } else { "false" },
            ])
            .map_err(fail)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `summary.json`, `per_case.csv` and `report.md` into `dir`.
pub fn write_reports(
    dir: &Path,
    model: &str,
    results: &[MethodResult],
    lmh: Option<&LmhAccuracy>,
    k_sweep: Option<&[KSweepRow]>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let methods: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "method": r.method,
                "cases": r.per_case.len(),
                "mean_jsd": r.mean_jsd,
                "validity_rate": r.validity_rate,
                "per_country": r.per_country,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "model": model,
        "aggregation": AGGREGATION_NOTE,
        "methods": methods,
        "lmh_accuracy": lmh,
        "k_sweep": k_sweep,
    });
    let path = dir.join("summary.json");
    let text =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Input(e.to_string()))? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    write_per_case_csv(&dir.join("per_case.csv"), results)?;

    let mut md = markdown_report(model, results, lmh);
    if let Some(rows) = k_sweep {
        md.push('\n');
        md.push_str(&k_sweep_markdown(rows));
    }
    let path = dir.join("report.md");
    std::fs::write(&path, md).map_err(|e| Error::io(&path, e))
}
