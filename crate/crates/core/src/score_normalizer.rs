//! Min–max normalization of evaluator scores and node latencies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record_store::{
    EfficiencyProfile, GenerationRecord, JsonlRecord, NodeType, StoreError, TaskType,
};

/// Normalized value assigned when every fitted raw score is identical.
pub const DEGENERATE_MIDPOINT: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum NormalizeError {
    #[error("no {0} profiles to normalize")]
    EmptyPool(&'static str),
    #[error("node '{node_key}' has nonpositive latency {latency}")]
    NonPositiveLatency { node_key: String, latency: f64 },
    #[error("no span fitted for evaluator '{evaluator_key}' on task {task_type}")]
    MissingSpan {
        evaluator_key: String,
        task_type: &'static str,
    },
}

/// Fitted min/max of one evaluator's raw scores on one task type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpan {
    pub evaluator_key: String,
    pub task_type: TaskType,
    pub min_raw: f64,
    pub max_raw: f64,
}

impl JsonlRecord for NormalizationSpan {
    const REQUIRED: &'static [&'static str] = &["evaluator_key", "task_type", "min_raw", "max_raw"];

    fn unique_key(&self) -> Option<String> {
        Some(format!(
            "({}, {})",
            self.evaluator_key,
            self.task_type.as_str()
        ))
    }

    fn check(&self, line: usize) -> Result<(), StoreError> {
        if self.min_raw.is_finite() && self.max_raw.is_finite() && self.max_raw >= self.min_raw {
            Ok(())
        } else {
            Err(StoreError::InvalidField {
                line,
                message: format!("span [{}, {}] is not ordered", self.min_raw, self.max_raw),
            })
        }
    }
}

/// Normalized latency cost of one node within its pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub node_key: String,
    pub node_type: NodeType,
    pub avg_latency_ms: f64,
    pub cost_norm: f64,
}

impl JsonlRecord for NodeCost {
    const REQUIRED: &'static [&'static str] = &["node_key", "node_type", "cost_norm"];

    fn unique_key(&self) -> Option<String> {
        Some(format!("\"{}\"", self.node_key))
    }

    fn check(&self, line: usize) -> Result<(), StoreError> {
        if (0.0..=1.0).contains(&self.cost_norm) {
            Ok(())
        } else {
            Err(StoreError::InvalidField {
                line,
                message: format!("cost_norm {} is outside [0, 1]", self.cost_norm),
            })
        }
    }
}

/// One span per task type that has at least one raw score from `evaluator_key`.
/// Records without that evaluator are ignored.
pub fn fit_spans(records: &[GenerationRecord], evaluator_key: &str) -> Vec<NormalizationSpan> {
    let mut extremes: BTreeMap<TaskType, (f64, f64)> = BTreeMap::new();
    for rec in records {
        let Some(score) = rec.eval_scores.get(evaluator_key) else {
            continue;
        };
        extremes
            .entry(rec.task_type)
            .and_modify(|(lo, hi)| {
                *lo = lo.min(score.raw);
                *hi = hi.max(score.raw);
            })
            .or_insert((score.raw, score.raw));
    }
    extremes
        .into_iter()
        .map(|(task_type, (min_raw, max_raw))| NormalizationSpan {
            evaluator_key: evaluator_key.to_string(),
            task_type,
            min_raw,
            max_raw,
        })
        .collect()
}

/// Spans for every evaluator key seen in `records`, ordered by key then task.
pub fn fit_all_spans(records: &[GenerationRecord]) -> Vec<NormalizationSpan> {
    let mut keys: Vec<&str> = records
        .iter()
        .flat_map(|r| r.eval_scores.keys().map(String::as_str))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .flat_map(|k| fit_spans(records, k))
        .collect()
}

/// Maps a raw score onto `[0, 10]`, clamping anything outside the span.
pub fn apply_span(raw: f64, span: &NormalizationSpan) -> f64 {
    let width = span.max_raw - span.min_raw;
    if width <= 0.0 {
        return DEGENERATE_MIDPOINT;
    }
    (10.0 * ((raw - span.min_raw) / width)).clamp(0.0, 10.0)
}

/// Fills `norm` for every evaluator score using the matching span.
pub fn normalize_records(
    records: Vec<GenerationRecord>,
    spans: &[NormalizationSpan],
) -> Result<Vec<GenerationRecord>, NormalizeError> {
    let lookup: BTreeMap<(&str, TaskType), &NormalizationSpan> = spans
        .iter()
        .map(|s| ((s.evaluator_key.as_str(), s.task_type), s))
        .collect();
    records
        .into_iter()
        .map(|mut rec| {
            for (key, score) in rec.eval_scores.iter_mut() {
                let span = lookup.get(&(key.as_str(), rec.task_type)).ok_or_else(|| {
                    NormalizeError::MissingSpan {
                        evaluator_key: key.clone(),
                        task_type: rec.task_type.as_str(),
                    }
                })?;
                score.norm = Some(apply_span(score.raw, span));
            }
            Ok(rec)
        })
        .collect()
}

/// Latency costs for the `node_type` pool, in input order.
pub fn latency_costs(
    profiles: &[EfficiencyProfile],
    node_type: NodeType,
) -> Result<Vec<NodeCost>, NormalizeError> {
    let pool: Vec<&EfficiencyProfile> = profiles
        .iter()
        .filter(|p| p.node_type == node_type)
        .collect();
    if pool.is_empty() {
        return Err(NormalizeError::EmptyPool(node_type.as_str()));
    }
    if let Some(bad) = pool
        .iter()
        .find(|p| !(p.avg_latency_ms.is_finite() && p.avg_latency_ms > 0.0))
    {
        return Err(NormalizeError::NonPositiveLatency {
            node_key: bad.node_key.clone(),
            latency: bad.avg_latency_ms,
        });
    }
    let lo = pool
        .iter()
        .map(|p| p.avg_latency_ms)
        .fold(f64::INFINITY, f64::min);
    let hi = pool
        .iter()
        .map(|p| p.avg_latency_ms)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(pool
        .into_iter()
        .map(|p| NodeCost {
            node_key: p.node_key.clone(),
            node_type,
            avg_latency_ms: p.avg_latency_ms,
            cost_norm: if hi > lo {
                (p.avg_latency_ms - lo) / (hi - lo)
            } else {
                0.0
            },
        })
        .collect())
}

/// Inference pool costs followed by eval pool costs. A pool with no
/// profiles is skipped; at least one pool must be present.
pub fn all_latency_costs(profiles: &[EfficiencyProfile]) -> Result<Vec<NodeCost>, NormalizeError> {
    let mut costs = Vec::new();
    for node_type in [NodeType::Inference, NodeType::Eval] {
        if profiles.iter().any(|p| p.node_type == node_type) {
            costs.extend(latency_costs(profiles, node_type)?);
        }
    }
    if costs.is_empty() {
        return Err(NormalizeError::EmptyPool("efficiency"));
    }
    Ok(costs)
}
