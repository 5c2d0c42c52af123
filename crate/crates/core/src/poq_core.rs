//! Reward mathematics for one cost-aware proof-of-quality round.
//!
//! Given the evaluator subset chosen for a (record, model) pair:
//!
//! * consensus quality `Q = sum(e) / (10 K)`, in `[0, 1]`
//! * inference reward `R_F = alpha_f * Q - beta_f * C_F(f)`
//! * evaluator deviation `d_m = |e_m - mean(e)| / 10`, with the mean taken
//!   over the whole subset including `m`
//! * closeness `1 - d_m`
//! * evaluator reward `R_M = alpha_m * closeness - beta_m * C_M(m)`
//!
//! Everything here is pure; sampling lives in [`crate::mc_sim`].

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record_store::{SCORE_MAX, SCORE_MIN, SCORE_SLACK};

/// Largest evaluator subset a round may use.
pub const MAX_K: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum PoqError {
    #[error("evaluator score list is empty")]
    EmptyScores,
    #[error("evaluator score {0} is outside [0, 10]")]
    ScoreOutOfRange(f64),
    #[error("no cost known for node '{0}'")]
    MissingCost(String),
    #[error("evaluator '{evaluator}' has no normalized score for ({record_id}, {model_key})")]
    MissingScore {
        evaluator: String,
        record_id: String,
        model_key: String,
    },
    #[error("evaluator '{0}' appears twice in the subset")]
    DuplicateEvaluator(String),
    #[error("invalid reward parameters: {0}")]
    InvalidParams(String),
}

/// Trade-off coefficients and evaluator subset size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub alpha_f: f64,
    pub beta_f: f64,
    pub alpha_m: f64,
    pub beta_m: f64,
    pub k: usize,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha_f: 1.0,
            beta_f: 1.0,
            alpha_m: 1.0,
            beta_m: 1.0,
            k: MAX_K,
        }
    }
}

impl RewardParams {
    /// Alphas must be positive; betas may be zero so quality-only baselines
    /// can be swept.
    pub fn validate(&self) -> Result<(), PoqError> {
        let fail = |msg: String| Err(PoqError::InvalidParams(msg));
        for (name, v) in [("alpha_f", self.alpha_f), ("alpha_m", self.alpha_m)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [("beta_f", self.beta_f), ("beta_m", self.beta_m)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(1..=MAX_K).contains(&self.k) {
            return fail(format!("k must be in [1, {MAX_K}], got {}", self.k));
        }
        Ok(())
    }
}

/// Per-evaluator result of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorOutcome {
    pub evaluator_key: String,
    pub norm_score: f64,
    pub deviation: f64,
    pub closeness: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub record_id: String,
    pub model_key: String,
    pub evaluator_subset: Vec<String>,
    pub consensus_q: f64,
    pub inference_reward: f64,
    pub per_evaluator: Vec<EvaluatorOutcome>,
}

fn check_scores(scores: impl Iterator<Item = f64>) -> Result<usize, PoqError> {
    let mut n = 0;
    for s in scores {
        if !(s.is_finite() && (SCORE_MIN - SCORE_SLACK..=SCORE_MAX + SCORE_SLACK).contains(&s)) {
            return Err(PoqError::ScoreOutOfRange(s));
        }
        n += 1;
    }
    if n == 0 {
        return Err(PoqError::EmptyScores);
    }
    Ok(n)
}

pub fn consensus_quality(scores: &[f64]) -> Result<f64, PoqError> {
    let k = check_scores(scores.iter().copied())?;
    let sum: f64 = scores.iter().sum();
    Ok(sum / (10.0 * k as f64))
}

pub fn inference_reward(q: f64, cost: f64, params: &RewardParams) -> f64 {
    params.alpha_f * q - params.beta_f * cost
}

pub fn evaluator_outcomes(
    scores: &[(String, f64)],
    costs: &BTreeMap<String, f64>,
    params: &RewardParams,
) -> Result<Vec<EvaluatorOutcome>, PoqError> {
    let k = check_scores(scores.iter().map(|(_, e)| *e))?;
    let mean = scores.iter().map(|(_, e)| e).sum::<f64>() / k as f64;
    scores
        .iter()
        .map(|(key, e)| {
            let cost = *costs
                .get(key)
                .ok_or_else(|| PoqError::MissingCost(key.clone()))?;
            let deviation = (e - mean).abs() / 10.0;
            let closeness = 1.0 - deviation;
            Ok(EvaluatorOutcome {
                evaluator_key: key.clone(),
                norm_score: *e,
                deviation,
                closeness,
                reward: params.alpha_m * closeness - params.beta_m * cost,
            })
        })
        .collect()
}

/// Node costs split by pool, keyed by node key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTable {
    pub inference: BTreeMap<String, f64>,
    pub eval: BTreeMap<String, f64>,
}

/// Scores the already-selected `subset` for one (record, model) pair.
///
/// `scores` maps evaluator keys to their normalized score on this pair; it
/// may contain evaluators outside the subset.
pub fn run_round(
    record_id: &str,
    model_key: &str,
    subset: &[String],
    scores: &BTreeMap<String, f64>,
    costs: &CostTable,
    params: &RewardParams,
) -> Result<RoundOutcome, PoqError> {
    let mut seen = HashSet::new();
    let mut chosen = Vec::with_capacity(subset.len());
    for m in subset {
        if !seen.insert(m.as_str()) {
            return Err(PoqError::DuplicateEvaluator(m.clone()));
        }
        let e = scores.get(m).ok_or_else(|| PoqError::MissingScore {
            evaluator: m.clone(),
            record_id: record_id.to_string(),
            model_key: model_key.to_string(),
        })?;
        chosen.push((m.clone(), *e));
    }
    let f_cost = *costs
        .inference
        .get(model_key)
        .ok_or_else(|| PoqError::MissingCost(model_key.to_string()))?;

    let e_values: Vec<f64> = chosen.iter().map(|(_, e)| *e).collect();
    let consensus_q = consensus_quality(&e_values)?;
    let per_evaluator = evaluator_outcomes(&chosen, &costs.eval, params)?;
    Ok(RoundOutcome {
        record_id: record_id.to_string(),
        model_key: model_key.to_string(),
        evaluator_subset: subset.to_vec(),
        consensus_q,
        inference_reward: inference_reward(consensus_q, f_cost, params),
        per_evaluator,
    })
}
