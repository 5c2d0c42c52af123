//! Evaluator/reference correlations and quality-per-latency efficiency.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record_store::{EfficiencyProfile, GenerationRecord, NodeType, TaskType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    /// One of the series has zero variance.
    #[error("correlation undefined for a constant series")]
    Undefined,
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, CorrelationError> {
    if xs.len() != ys.len() {
        return Err(CorrelationError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(CorrelationError::TooFewSamples(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::Undefined);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Gt,
    Judge,
}

impl Reference {
    pub fn as_str(self) -> &'static str {
        match self {
            Reference::Gt => "gt",
            Reference::Judge => "judge",
        }
    }

    fn value(self, rec: &GenerationRecord) -> Option<f64> {
        match self {
            Reference::Gt => rec.gt_score,
            Reference::Judge => rec.judge_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskScope {
    Qa,
    Summarization,
    Averaged,
}

impl TaskScope {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskScope::Qa => "qa",
            TaskScope::Summarization => "summarization",
            TaskScope::Averaged => "averaged",
        }
    }
}

impl From<TaskType> for TaskScope {
    fn from(t: TaskType) -> Self {
        match t {
            TaskType::Qa => TaskScope::Qa,
            TaskType::Summarization => TaskScope::Summarization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub evaluator_key: String,
    pub reference: Reference,
    pub task_scope: TaskScope,
    pub pearson_r: f64,
    pub n: usize,
}

/// A cell that produced no correlation, kept so callers can surface it.
#[derive(Debug, Clone, PartialEq)]
pub struct OmittedCell {
    pub evaluator_key: String,
    pub reference: Reference,
    pub task_scope: TaskScope,
    pub n: usize,
    pub reason: CorrelationError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationOutcome {
    pub reports: Vec<CorrelationReport>,
    pub omitted: Vec<OmittedCell>,
}

impl CorrelationOutcome {
    fn extend(&mut self, other: CorrelationOutcome) {
        self.reports.extend(other.reports);
        self.omitted.extend(other.omitted);
    }
}

/// Per-task Pearson r between an evaluator's normalized score and a
/// reference signal, plus an "averaged" row holding the unweighted mean of
/// the defined per-task values.
pub fn correlation_report(
    records: &[GenerationRecord],
    evaluator_key: &str,
    reference: Reference,
) -> CorrelationOutcome {
    let mut out = CorrelationOutcome::default();
    let mut defined = Vec::new();
    let mut total_n = 0;
    for task in TaskType::ALL {
        let (xs, ys): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| r.task_type == task)
            .filter_map(|r| Some((r.norm_score(evaluator_key)?, reference.value(r)?)))
            .unzip();
        if xs.is_empty() {
            continue;
        }
        match pearson(&xs, &ys) {
            Ok(r) => {
                defined.push(r);
                total_n += xs.len();
                out.reports.push(CorrelationReport {
                    evaluator_key: evaluator_key.to_string(),
                    reference,
                    task_scope: task.into(),
                    pearson_r: r,
                    n: xs.len(),
                });
            }
            Err(reason) => out.omitted.push(OmittedCell {
                evaluator_key: evaluator_key.to_string(),
                reference,
                task_scope: task.into(),
                n: xs.len(),
                reason,
            }),
        }
    }
    if !defined.is_empty() {
        out.reports.push(CorrelationReport {
            evaluator_key: evaluator_key.to_string(),
            reference,
            task_scope: TaskScope::Averaged,
            pearson_r: defined.iter().sum::<f64>() / defined.len() as f64,
            n: total_n,
        });
    }
    out
}

/// Reports for every evaluator key in `records` against both references.
pub fn full_correlation_report(records: &[GenerationRecord]) -> CorrelationOutcome {
    let mut keys: Vec<&str> = records
        .iter()
        .flat_map(|r| r.eval_scores.keys().map(String::as_str))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let mut out = CorrelationOutcome::default();
    for key in keys {
        for reference in [Reference::Gt, Reference::Judge] {
            out.extend(correlation_report(records, key, reference));
        }
    }
    out
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    evaluator_key: &'a str,
    reference: &'static str,
    task_scope: &'static str,
    pearson_r: String,
    n: usize,
}

/// Omitted cells are written with `pearson_r` set to `undefined` or
/// `insufficient`.
pub fn write_correlation_csv(outcome: &CorrelationOutcome, writer: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &outcome.reports {
        w.serialize(CorrelationRow {
            evaluator_key: &r.evaluator_key,
            reference: r.reference.as_str(),
            task_scope: r.task_scope.as_str(),
            pearson_r: r.pearson_r.to_string(),
            n: r.n,
        })?;
    }
    for c in &outcome.omitted {
        let tag = match c.reason {
            CorrelationError::Undefined => "undefined",
            _ => "insufficient",
        };
        w.serialize(CorrelationRow {
            evaluator_key: &c.evaluator_key,
            reference: c.reference.as_str(),
            task_scope: c.task_scope.as_str(),
            pearson_r: tag.to_string(),
            n: c.n,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub model_key: String,
    pub avg_quality: f64,
    /// Mean judge score over the judged subsample, when any exist.
    pub avg_quality_judge: Option<f64>,
    pub avg_latency_ms: f64,
    pub quality_per_ms: f64,
}

impl EfficiencyPoint {
    pub fn new(model_key: impl Into<String>, avg_quality: f64, avg_latency_ms: f64) -> Self {
        Self {
            model_key: model_key.into(),
            avg_quality,
            avg_quality_judge: None,
            avg_latency_ms,
            quality_per_ms: avg_quality / avg_latency_ms,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Average gt quality per inference node divided by its latency. Nodes are
/// listed in profile order; those with no gt-scored records are skipped.
pub fn efficiency_frontier(
    records: &[GenerationRecord],
    profiles: &[EfficiencyProfile],
) -> Vec<EfficiencyPoint> {
    let mut by_model: BTreeMap<&str, Vec<&GenerationRecord>> = BTreeMap::new();
    for r in records {
        by_model.entry(&r.model_key).or_default().push(r);
    }
    profiles
        .iter()
        .filter(|p| p.node_type == NodeType::Inference)
        .filter_map(|p| {
            let recs = by_model.get(p.node_key.as_str())?;
            let gt = mean(recs.iter().filter_map(|r| r.gt_score))?;
            let mut point = EfficiencyPoint::new(&p.node_key, gt, p.avg_latency_ms);
            point.avg_quality_judge = mean(recs.iter().filter_map(|r| r.judge_score));
            Some(point)
        })
        .collect()
}

/// Ratio of the best quality_per_ms to the worst.
pub fn efficiency_spread(points: &[EfficiencyPoint]) -> Option<f64> {
    let best = points.iter().map(|p| p.quality_per_ms).reduce(f64::max)?;
    let worst = points.iter().map(|p| p.quality_per_ms).reduce(f64::min)?;
    (worst > 0.0).then(|| best / worst)
}

#[derive(Serialize)]
struct FrontierRow<'a> {
    model_key: &'a str,
    avg_quality_gt: f64,
    avg_quality_judge: Option<f64>,
    avg_latency_ms: f64,
    quality_per_ms: f64,
}

pub fn write_frontier_csv(points: &[EfficiencyPoint], writer: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(FrontierRow {
            model_key: &p.model_key,
            avg_quality_gt: p.avg_quality,
            avg_quality_judge: p.avg_quality_judge,
            avg_latency_ms: p.avg_latency_ms,
            quality_per_ms: p.quality_per_ms,
        })?;
    }
    w.flush()?;
    Ok(())
}
