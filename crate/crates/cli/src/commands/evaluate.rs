use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use anyhow::{bail, Result};
use clap::Args;
use evida_core::eval::{
    self, baseline_logprob, baseline_sampling, baseline_uniform, baseline_verbalized,
    load_benchmark, run_evida, write_reports, BenchmarkCase, KSweepRow, LmhCase, MethodResult,
};
use evida_core::inference::InferenceConfig;
use evida_core::retrieval::Retriever;
use evida_core::{AnswerDistribution, Error, ErrorClass, LlmClient, PredictionResult};

use super::{open_bank, to_json, write_lines};
use crate::backends::{self, MockChoice};
use crate::config::PipelineConfig;

const METHODS: &[&str] = &["evida", "verbalized", "logprob", "sampling", "uniform"];

#[derive(Args)]
pub struct EvaluateArgs {
    /// Benchmark JSONL.
    #[arg(long)]
    benchmark: PathBuf,
    /// Comma-separated: evida, verbalized, logprob, sampling, uniform.
    #[arg(long, default_value = "evida,verbalized,uniform")]
    methods: String,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Also run the full pipeline at each of these K values.
    #[arg(long, value_delimiter = ',')]
    k_sweep: Vec<usize>,
    /// Model column label in the report; defaults to the backend name.
    #[arg(long)]
    model_name: Option<String>,
}

/// Per-case failures that describe the case rather than the run (for
/// example a country missing from the bank) score as invalid.
fn soften<T>(
    case: &BenchmarkCase,
    r: evida_core::Result<Option<T>>,
) -> evida_core::Result<Option<T>> {
    match r {
        Err(e) if e.class() == ErrorClass::Domain => {
            log::warn!("case {}: {e}", case.case_id);
            Ok(None)
        }
        other => other,
    }
}

struct EvidaRun {
    result: MethodResult,
    predictions: BTreeMap<String, PredictionResult>,
}

fn run_full(
    cases: &[BenchmarkCase],
    retriever: &Retriever<'_>,
    llm: &dyn LlmClient,
    config: &InferenceConfig,
    in_flight: usize,
    label: &str,
) -> Result<EvidaRun> {
    let kept = Mutex::new(BTreeMap::new());
    let result = eval::evaluate(label, cases, in_flight, |case| {
        soften(
            case,
            run_evida(case, retriever, llm, config).map(|r| {
                let dist = r.normalized_distribution.clone();
                kept.lock().unwrap().insert(case.case_id.clone(), r);
                Some(dist).flatten()
            }),
        )
    })?;
    Ok(EvidaRun {
        result,
        predictions: kept.into_inner().unwrap(),
    })
}

pub fn evaluate(cfg: &PipelineConfig, mock: &MockChoice, args: &EvaluateArgs) -> Result<()> {
    let methods: Vec<String> = args
        .methods
        .split(',')
        .map(|m| m.trim().to_lowercase())
        .filter(|m| !m.is_empty())
        .collect();
    if let Some(bad) = methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
        return Err(Error::Input(format!(
            "unknown method {bad:?}; expected one of {METHODS:?}"
        ))
        .into());
    }
    if methods.is_empty() {
        bail!(Error::Input("no methods selected".into()));
    }
    if args.k_sweep.contains(&0) {
        return Err(Error::Input("k-sweep values must be positive".into()).into());
    }

    let bench = load_benchmark(&args.benchmark)?;
    for r in &bench.rejections {
        log::warn!("{}:{}: {}", args.benchmark.display(), r.line, r.reason);
    }
    if bench.cases.is_empty() {
        return Err(Error::Input(format!(
            "{}: no valid benchmark cases",
            args.benchmark.display()
        ))
        .into());
    }
    let cases = &bench.cases;

    let needs_bank = methods.iter().any(|m| m == "evida") || !args.k_sweep.is_empty();
    let bank = if needs_bank {
        Some(open_bank(cfg)?)
    } else {
        None
    };
    let encoder = backends::encoder(cfg, mock)?;
    let retriever = bank
        .as_ref()
        .map(|b| Retriever::new(b, encoder.as_ref(), cfg.max_in_flight))
        .transpose()?;
    let (llm, sequential) = backends::llm(cfg, mock)?;
    let llm = llm.as_ref();
    let in_flight = if sequential { 1 } else { cfg.max_in_flight };
    let inference = cfg.inference();

    let mut results = Vec::new();
    let mut prediction_lines = Vec::new();
    let mut lmh = None;
    for method in &methods {
        log::info!("evaluating {method} on {} cases", cases.len());
        let result = match method.as_str() {
            "evida" => {
                let retriever = retriever.as_ref().expect("bank loaded for evida");
                let run = run_full(cases, retriever, llm, &inference, in_flight, "evida")?;
                let lmh_cases: Vec<LmhCase> = cases
                    .iter()
                    .map(|c| LmhCase {
                        case_id: c.case_id.clone(),
                        country: c.country.clone(),
                        item_id: c.item_id.clone(),
                        predicted: run
                            .predictions
                            .get(&c.case_id)
                            .and_then(|p| p.option_signatures.clone()),
                    })
                    .collect();
                match eval::lmh_accuracy(&lmh_cases, retriever.bank()) {
                    Ok(acc) => lmh = Some(acc),
                    Err(e) => log::warn!("LMH accuracy not reported: {e}"),
                }
                for c in cases {
                    if let Some(p) = run.predictions.get(&c.case_id) {
                        prediction_lines.push(to_json(&serde_json::json!({
                            "case_id": c.case_id,
                            "method": "evida",
                            "prediction": p,
                        }))?);
                    }
                }
                run.result
            }
            "verbalized" => eval::evaluate(method, cases, in_flight, |c| {
                soften(c, baseline_verbalized(llm, c, &inference))
            })?,
            "logprob" => eval::evaluate(method, cases, in_flight, |c| {
                soften(c, baseline_logprob(llm, c, &cfg.decoding))
            })?,
            "sampling" => eval::evaluate(method, cases, in_flight, |c| {
                soften(
                    c,
                    baseline_sampling(llm, c, cfg.samples, &cfg.decoding).map(|o| o.distribution),
                )
            })?,
            "uniform" => eval::evaluate(method, cases, in_flight, |c| {
                Ok(Some::<AnswerDistribution>(baseline_uniform(c)))
            })?,
            _ => unreachable!(),
        };
        results.push(result);
    }

    let mut sweep = Vec::new();
    for &k in &args.k_sweep {
        let retriever = retriever.as_ref().expect("bank loaded for k sweep");
        let config = InferenceConfig {
            k,
            ..inference.clone()
        };
        let run = run_full(
            cases,
            retriever,
            llm,
            &config,
            in_flight,
            &format!("evida-k{k}"),
        )?;
        sweep.push(KSweepRow {
            k,
            mean_jsd: run.result.mean_jsd,
            validity_rate: run.result.validity_rate,
        });
    }

    let model = args
        .model_name
        .clone()
        .unwrap_or_else(|| backends::model_name(cfg, mock));
    write_reports(
        &args.out,
        &model,
        &results,
        lmh.as_ref(),
        (!sweep.is_empty()).then_some(sweep.as_slice()),
    )?;
    write_lines(Some(&args.out.join("predictions.jsonl")), &prediction_lines)?;

    println!("method\tmean_jsd\tvalidity\tcases");
    for r in &results {
        println!(
            "{}\t{:.4}\t{:.4}\t{}",
            r.method,
            r.mean_jsd,
            r.validity_rate,
            r.per_case.len()
        );
    }
    for row in &sweep {
        println!(
            "evida@k={}\t{:.4}\t{:.4}",
            row.k, row.mean_jsd, row.validity_rate
        );
    }
    if let Some(acc) = &lmh {
        println!("lmh_accuracy\t{:.4}\t\t{}", acc.overall, acc.cases);
    }
    println!("reports in {}", args.out.display());
    Ok(())
}
