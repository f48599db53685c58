//! Benchmark harness: metric implementations, a bounded worker pool running
//! tasks against a data lake, and report emission as JSON plus a CSV summary.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datalake::DataLake;
use crate::llmclient::{LedgerSnapshot, LlmClient};
use crate::pipeline::{run_task, PipelineConfig};
use crate::promptgen::{normalize, DemoLibrary};
use crate::taskmodel::{DescriptionTable, TaskInstance};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark contains no tasks")]
    EmptyBenchmark,
    #[error("length mismatch: {predictions} predictions vs {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("bad truth on line {line}: {message}")]
    BadTruthLine { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Accuracy over normalized string equality.
pub fn accuracy(predictions: &[String], truths: &[String]) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| normalize(p) == normalize(t))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall, and F1 for a binary labeling; every zero denominator
/// yields 0 for that component.
pub fn prf1(predictions: &[bool], truths: &[bool]) -> Result<Prf1, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
    })
}

/// Token-level F1 between a predicted and a reference string: both are
/// normalized, split on whitespace, and overlapped as multisets.
pub fn text_f1(prediction: &str, truth: &str) -> f64 {
    let tokens = |s: &str| -> Vec<String> {
        normalize(s).split_whitespace().map(str::to_string).collect()
    };
    let pred = tokens(prediction);
    let gold = tokens(truth);
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for token in &gold {
        *counts.entry(token).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for token in &pred {
        let slot = counts.entry(token).or_insert(0);
        if *slot > 0 {
            *slot -= 1;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// A ground-truth label: either free text or a yes/no flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Truth {
    Bool(bool),
    Text(String),
}

impl Truth {
    /// Canonical textual form; booleans map to "yes" and "no".
    pub fn as_text(&self) -> String {
        match self {
            Truth::Bool(true) => "yes".to_string(),
            Truth::Bool(false) => "no".to_string(),
            Truth::Text(s) => s.clone(),
        }
    }
}

#[derive(Deserialize)]
struct TruthLine {
    truth: Truth,
}

/// Load one truth per line from JSONL with a `truth` field.
pub fn load_truths<R: Read>(source: R) -> Result<Vec<Truth>, EvalError> {
    let reader = BufReader::new(source);
    let mut truths = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TruthLine =
            serde_json::from_str(&line).map_err(|e| EvalError::BadTruthLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        truths.push(parsed.truth);
    }
    Ok(truths)
}

/// One benchmark task's result inside a report.
#[derive(Debug, Clone, Serialize)]
pub struct TaskRow {
    pub index: usize,
    pub kind: String,
    pub prediction: String,
    pub truth: String,
    pub correct: bool,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cache_hits: u64,
    pub attribute_fallback_used: bool,
    pub zero_score_defaults: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub task_count: usize,
    pub error_count: usize,
    pub accuracy: f64,
    /// Present when at least one task kind is a yes/no decision.
    pub binary: Option<Prf1>,
    pub mean_text_f1: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub workers: usize,
    pub config: PipelineConfig,
    pub rows: Vec<TaskRow>,
    pub metrics: Metrics,
    pub ledger: LedgerSnapshot,
    pub prompt_kind_counts: BTreeMap<String, u64>,
    pub mean_prompt_tokens: f64,
    pub mean_completion_tokens: f64,
    pub attribute_fallback_count: usize,
    pub zero_score_default_count: usize,
    pub wall_clock_ms: u64,
    pub created_unix_ms: u64,
}

impl EvalReport {
    pub fn logical_tokens(&self) -> u64 {
        self.ledger.logical_prompt_tokens + self.ledger.logical_completion_tokens
    }
}

/// Run every task against the lake with a bounded worker pool. The per-task
/// seed is `seed ^ index`, so results do not depend on worker count or
/// scheduling order.
pub fn run_benchmark(
    tasks: &[TaskInstance],
    truths: &[Truth],
    lake: &DataLake,
    config: &PipelineConfig,
    client: &LlmClient,
    library: &DemoLibrary,
    descriptions: &DescriptionTable,
    workers: usize,
) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    if tasks.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: tasks.len(),
            truths: truths.len(),
        });
    }
    let workers = workers.max(1).min(tasks.len());
    let started = Instant::now();

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<TaskRow>> = Mutex::new(Vec::with_capacity(tasks.len()));
    let kind_counts: Mutex<BTreeMap<String, u64>> = Mutex::new(BTreeMap::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(index) else {
                    break;
                };
                let truth = &truths[index];
                let task_seed = config.seed ^ index as u64;
                let row = match run_task(task, lake, config, client, library, descriptions, task_seed)
                {
                    Ok(outcome) => {
                        let correct = match (truth, outcome.answer.boolean_value) {
                            (Truth::Bool(t), Some(p)) => p == *t,
                            _ => outcome.answer.normalized == normalize(&truth.as_text()),
                        };
                        let provenance = outcome.context.as_ref().map(|c| &c.provenance);
                        let mut counts = kind_counts.lock().unwrap();
                        for exchange in &outcome.exchanges {
                            *counts.entry(exchange.kind.clone()).or_insert(0) += 1;
                        }
                        TaskRow {
                            index,
                            kind: task.kind.label().to_string(),
                            prediction: outcome.answer.normalized.clone(),
                            truth: truth.as_text(),
                            correct,
                            prompt_tokens: outcome.prompt_tokens(),
                            completion_tokens: outcome.completion_tokens(),
                            cache_hits: outcome.exchanges.iter().filter(|e| e.cached).count()
                                as u64,
                            attribute_fallback_used: provenance
                                .map(|p| p.attribute_fallback_used)
                                .unwrap_or(false),
                            zero_score_defaults: provenance
                                .map(|p| p.zero_score_defaults)
                                .unwrap_or(0),
                            error: None,
                        }
                    }
                    Err(e) => TaskRow {
                        index,
                        kind: task.kind.label().to_string(),
                        prediction: String::new(),
                        truth: truth.as_text(),
                        correct: false,
                        prompt_tokens: 0,
                        completion_tokens: 0,
                        cache_hits: 0,
                        attribute_fallback_used: false,
                        zero_score_defaults: 0,
                        error: Some(e.to_string()),
                    },
                };
                rows.lock().unwrap().push(row);
            });
        }
    });

    let mut rows = rows.into_inner().unwrap();
    rows.sort_by_key(|r| r.index);

    let error_count = rows.iter().filter(|r| r.error.is_some()).count();
    let hits = rows.iter().filter(|r| r.correct).count();
    let accuracy = hits as f64 / rows.len() as f64;

    let binary_pairs: Vec<(bool, bool)> = tasks
        .iter()
        .zip(&rows)
        .filter(|(task, _)| task.kind.is_binary())
        .map(|(_, row)| {
            let truth = normalize(&row.truth) == "yes";
            let prediction = normalize(&row.prediction) == "yes";
            (prediction, truth)
        })
        .collect();
    let binary = if binary_pairs.is_empty() {
        None
    } else {
        let (preds, golds): (Vec<bool>, Vec<bool>) = binary_pairs.into_iter().unzip();
        Some(prf1(&preds, &golds)?)
    };

    let mean_text_f1 = rows
        .iter()
        .map(|r| text_f1(&r.prediction, &r.truth))
        .sum::<f64>()
        / rows.len() as f64;

    let n = rows.len() as f64;
    let mean_prompt_tokens = rows.iter().map(|r| r.prompt_tokens).sum::<u64>() as f64 / n;
    let mean_completion_tokens = rows.iter().map(|r| r.completion_tokens).sum::<u64>() as f64 / n;
    let attribute_fallback_count = rows.iter().filter(|r| r.attribute_fallback_used).count();
    let zero_score_default_count = rows.iter().map(|r| r.zero_score_defaults).sum();

    Ok(EvalReport {
        seed: config.seed,
        workers,
        config: config.clone(),
        metrics: Metrics {
            task_count: rows.len(),
            error_count,
            accuracy,
            binary,
            mean_text_f1,
        },
        rows,
        ledger: client.ledger(),
        prompt_kind_counts: kind_counts.into_inner().unwrap(),
        mean_prompt_tokens,
        mean_completion_tokens,
        attribute_fallback_count,
        zero_score_default_count,
        wall_clock_ms: started.elapsed().as_millis() as u64,
        created_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    })
}

pub fn write_report_json<W: Write>(report: &EvalReport, out: W) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}

/// Per-task summary with one row per task.
pub fn write_report_csv<W: Write>(report: &EvalReport, out: W) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "index",
        "kind",
        "prediction",
        "truth",
        "correct",
        "prompt_tokens",
        "completion_tokens",
        "error",
    ])?;
    for row in &report.rows {
        writer.write_record([
            row.index.to_string(),
            row.kind.clone(),
            row.prediction.clone(),
            row.truth.clone(),
            row.correct.to_string(),
            row.prompt_tokens.to_string(),
            row.completion_tokens.to_string(),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TokenComparisonRow {
    pub label: String,
    pub logical_prompt_tokens: u64,
    pub logical_completion_tokens: u64,
    pub logical_total: u64,
}

/// Summarize several runs' logical token usage, sorted ascending by total.
pub fn token_comparison(entries: &[(String, &EvalReport)]) -> Vec<TokenComparisonRow> {
    let mut rows: Vec<TokenComparisonRow> = entries
        .iter()
        .map(|(label, report)| TokenComparisonRow {
            label: label.clone(),
            logical_prompt_tokens: report.ledger.logical_prompt_tokens,
            logical_completion_tokens: report.ledger.logical_completion_tokens,
            logical_total: report.logical_tokens(),
        })
        .collect();
    rows.sort_by_key(|r| r.logical_total);
    rows
}
