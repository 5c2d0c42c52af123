//! Seeded Monte Carlo driver for repeated PoQ rounds.
//!
//! Each round draws, in this order, a record index, an inference node, the
//! subset size (only under [`KPolicy::UniformOneToThree`]) and the evaluator
//! subset. All draws come from one ChaCha8 stream seeded with
//! `SimConfig::seed`, so a (seed, config, inputs) triple reproduces the same
//! trace on every platform.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poq_core::{run_round, CostTable, PoqError, RewardParams, RoundOutcome, MAX_K};
use crate::record_store::{GenerationRecord, NodePool, NodeType, PoolError, TaskRecord};
use crate::score_normalizer::NodeCost;

pub const DEFAULT_ROUNDS: u64 = 5000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Poq(#[from] PoqError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("rounds must be >= 1")]
    NoRounds,
    #[error("k = {k} exceeds the {pool} available evaluators")]
    KExceedsPool { k: usize, pool: usize },
    #[error("generation ({id}, {model_key}) is not in the corpus")]
    UnknownRecord { id: String, model_key: String },
    #[error("{kind} node '{key}' has no cost entry")]
    UnknownNode { kind: &'static str, key: String },
    #[error("sweep grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduling {
    /// Every inference node is equally likely each round.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KPolicy {
    /// Always request `RewardParams::k` evaluators.
    #[default]
    #[serde(rename = "fixed")]
    Fixed,
    /// Draw K uniformly from `1..=min(3, |M|)` each round.
    #[serde(rename = "uniform_1_to_3")]
    UniformOneToThree,
}

impl KPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            KPolicy::Fixed => "fixed",
            KPolicy::UniformOneToThree => "uniform_1_to_3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rounds: u64,
    pub seed: u64,
    pub params: RewardParams,
    pub scheduling: Scheduling,
    pub k_policy: KPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            seed: 0,
            params: RewardParams::default(),
            scheduling: Scheduling::Uniform,
            k_policy: KPolicy::Fixed,
        }
    }
}

/// Cumulative reward statistics for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node_key: String,
    pub node_type: NodeType,
    pub total_reward: f64,
    pub job_count: u64,
    pub avg_reward: f64,
    pub avg_latency_ms: f64,
    pub cost_norm: f64,
}

impl NodeStats {
    fn new(cost: &NodeCost) -> Self {
        Self {
            node_key: cost.node_key.clone(),
            node_type: cost.node_type,
            total_reward: 0.0,
            job_count: 0,
            avg_reward: 0.0,
            avg_latency_ms: cost.avg_latency_ms,
            cost_norm: cost.cost_norm,
        }
    }

    fn add(&mut self, reward: f64) {
        self.total_reward += reward;
        self.job_count += 1;
    }

    fn finish(&mut self) {
        if self.job_count > 0 {
            self.avg_reward = self.total_reward / self.job_count as f64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEventKind {
    /// Fewer evaluators had scores than K asked for.
    ReducedK { requested: usize, available: usize },
    /// No evaluator had a score; the round did not execute.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub round: u64,
    pub record_id: String,
    pub model_key: String,
    #[serde(flatten)]
    pub kind: SimEventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Inference nodes first, then evaluators, each in cost-table order.
    pub stats: Vec<NodeStats>,
    pub trace: Option<Vec<RoundOutcome>>,
    pub events: Vec<SimEvent>,
    pub executed_rounds: u64,
}

/// Pre-indexed view of the corpus, scores and costs used by every round.
#[derive(Debug, Clone)]
pub struct SimInputs {
    record_ids: Vec<String>,
    pool: NodePool,
    /// `[record][model]` → evaluators with a normalized score, in pool order.
    available: Vec<Vec<Vec<(usize, f64)>>>,
    costs: CostTable,
    node_costs: Vec<NodeCost>,
}

impl SimInputs {
    /// The node pool is taken from `costs`, preserving its order.
    pub fn new(
        corpus: &[TaskRecord],
        records: &[GenerationRecord],
        costs: &[NodeCost],
    ) -> Result<Self, SimError> {
        if corpus.is_empty() {
            return Err(SimError::EmptyCorpus);
        }
        let keys_of = |t: NodeType| -> Vec<String> {
            costs
                .iter()
                .filter(|c| c.node_type == t)
                .map(|c| c.node_key.clone())
                .collect()
        };
        let pool = NodePool::new(keys_of(NodeType::Inference), keys_of(NodeType::Eval))?;

        let record_idx: HashMap<&str, usize> = corpus
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let model_idx: HashMap<&str, usize> = pool
            .inference_nodes()
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();
        let eval_idx: HashMap<&str, usize> = pool
            .eval_nodes()
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();

        let mut available = vec![vec![Vec::new(); model_idx.len()]; corpus.len()];
        for rec in records {
            let i = *record_idx
                .get(rec.id.as_str())
                .ok_or_else(|| SimError::UnknownRecord {
                    id: rec.id.clone(),
                    model_key: rec.model_key.clone(),
                })?;
            let f =
                *model_idx
                    .get(rec.model_key.as_str())
                    .ok_or_else(|| SimError::UnknownNode {
                        kind: "inference",
                        key: rec.model_key.clone(),
                    })?;
            let mut slots: Vec<(usize, f64)> = Vec::new();
            for (key, score) in &rec.eval_scores {
                let m = *eval_idx
                    .get(key.as_str())
                    .ok_or_else(|| SimError::UnknownNode {
                        kind: "eval",
                        key: key.clone(),
                    })?;
                if let Some(norm) = score.norm {
                    slots.push((m, norm));
                }
            }
            slots.sort_by_key(|(m, _)| *m);
            available[i][f] = slots;
        }

        let mut table = CostTable::default();
        for c in costs {
            let target = match c.node_type {
                NodeType::Inference => &mut table.inference,
                NodeType::Eval => &mut table.eval,
            };
            target.insert(c.node_key.clone(), c.cost_norm);
        }

        Ok(Self {
            record_ids: corpus.iter().map(|r| r.id.clone()).collect(),
            pool,
            available,
            costs: table,
            node_costs: costs.to_vec(),
        })
    }

    pub fn pool(&self) -> &NodePool {
        &self.pool
    }

    pub fn record_count(&self) -> usize {
        self.record_ids.len()
    }
}

pub fn run_simulation(
    config: &SimConfig,
    inputs: &SimInputs,
    keep_trace: bool,
) -> Result<SimResult, SimError> {
    config.params.validate()?;
    if config.rounds == 0 {
        return Err(SimError::NoRounds);
    }
    let eval_keys = inputs.pool.eval_nodes();
    let model_keys = inputs.pool.inference_nodes();
    if config.k_policy == KPolicy::Fixed && config.params.k > eval_keys.len() {
        return Err(SimError::KExceedsPool {
            k: config.params.k,
            pool: eval_keys.len(),
        });
    }
    let k_max = MAX_K.min(eval_keys.len());

    let mut stats: Vec<NodeStats> = inputs.node_costs.iter().map(NodeStats::new).collect();
    // Cost entries may interleave node types; map pool positions onto rows.
    let row_of: HashMap<(NodeType, &str), usize> = stats
        .iter()
        .enumerate()
        .map(|(row, s)| ((s.node_type, s.node_key.as_str()), row))
        .collect();
    let inf_rows: Vec<usize> = model_keys
        .iter()
        .map(|k| row_of[&(NodeType::Inference, k.as_str())])
        .collect();
    let eval_rows: BTreeMap<&str, usize> = eval_keys
        .iter()
        .map(|k| (k.as_str(), row_of[&(NodeType::Eval, k.as_str())]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = keep_trace.then(Vec::new);
    let mut events = Vec::new();
    let mut executed = 0u64;
    let n = inputs.record_ids.len();

    for round in 0..config.rounds {
        let i = rng.random_range(0..n);
        let f = match config.scheduling {
            Scheduling::Uniform => rng.random_range(0..model_keys.len()),
        };
        let requested = match config.k_policy {
            KPolicy::Fixed => config.params.k,
            KPolicy::UniformOneToThree => rng.random_range(1..=k_max),
        };
        let record_id = &inputs.record_ids[i];
        let model_key = &model_keys[f];
        let avail = &inputs.available[i][f];
        if avail.is_empty() {
            events.push(SimEvent {
                round,
                record_id: record_id.clone(),
                model_key: model_key.clone(),
                kind: SimEventKind::Skipped,
            });
            continue;
        }
        let k = requested.min(avail.len());
        if k < requested {
            events.push(SimEvent {
                round,
                record_id: record_id.clone(),
                model_key: model_key.clone(),
                kind: SimEventKind::ReducedK {
                    requested,
                    available: avail.len(),
                },
            });
        }
        let mut picks = index::sample(&mut rng, avail.len(), k).into_vec();
        picks.sort_unstable();
        let subset: Vec<String> = picks
            .iter()
            .map(|&p| eval_keys[avail[p].0].clone())
            .collect();
        let scores: BTreeMap<String, f64> = picks
            .iter()
            .map(|&p| (eval_keys[avail[p].0].clone(), avail[p].1))
            .collect();

        let outcome = run_round(
            record_id,
            model_key,
            &subset,
            &scores,
            &inputs.costs,
            &config.params,
        )?;
        stats[inf_rows[f]].add(outcome.inference_reward);
        for ev in &outcome.per_evaluator {
            stats[eval_rows[ev.evaluator_key.as_str()]].add(ev.reward);
        }
        executed += 1;
        if let Some(t) = trace.as_mut() {
            t.push(outcome);
        }
    }

    for s in &mut stats {
        s.finish();
    }
    // Inference rows first, eval rows after, each in pool order.
    let mut ordered: Vec<NodeStats> = inf_rows.iter().map(|&r| stats[r].clone()).collect();
    ordered.extend(
        eval_keys
            .iter()
            .map(|k| stats[eval_rows[k.as_str()]].clone()),
    );

    Ok(SimResult {
        stats: ordered,
        trace,
        events,
        executed_rounds: executed,
    })
}

#[derive(Serialize)]
struct StatsRow<'a> {
    node_type: &'static str,
    node_key: &'a str,
    avg_reward: f64,
    avg_latency_ms: f64,
    cost_norm: f64,
    jobs: u64,
}

/// Writes the per-node table: node_type, node_key, avg_reward,
/// avg_latency_ms, cost_norm, jobs.
pub fn write_stats_csv(stats: &[NodeStats], writer: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in stats {
        w.serialize(StatsRow {
            node_type: s.node_type.as_str(),
            node_key: &s.node_key,
            avg_reward: s.avg_reward,
            avg_latency_ms: s.avg_latency_ms,
            cost_norm: s.cost_norm,
            jobs: s.job_count,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Value lists per swept parameter. An empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub alpha_f: Vec<f64>,
    #[serde(default)]
    pub beta_f: Vec<f64>,
    #[serde(default)]
    pub alpha_m: Vec<f64>,
    #[serde(default)]
    pub beta_m: Vec<f64>,
    #[serde(default)]
    pub k: Vec<usize>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.alpha_f.is_empty()
            && self.beta_f.is_empty()
            && self.alpha_m.is_empty()
            && self.beta_m.is_empty()
            && self.k.is_empty()
    }

    /// Cartesian product in alpha_f, beta_f, alpha_m, beta_m, k nesting order.
    pub fn points(&self, base: &RewardParams) -> Vec<RewardParams> {
        fn or_base<T: Copy>(v: &[T], b: T) -> Vec<T> {
            if v.is_empty() {
                vec![b]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for &alpha_f in &or_base(&self.alpha_f, base.alpha_f) {
            for &beta_f in &or_base(&self.beta_f, base.beta_f) {
                for &alpha_m in &or_base(&self.alpha_m, base.alpha_m) {
                    for &beta_m in &or_base(&self.beta_m, base.beta_m) {
                        for &k in &or_base(&self.k, base.k) {
                            out.push(RewardParams {
                                alpha_f,
                                beta_f,
                                alpha_m,
                                beta_m,
                                k,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Each grid point gets `derive_seed(base, index)`.
    #[default]
    PerPoint,
    /// Every point reuses the base seed (common random numbers).
    Shared,
}

/// SplitMix64 finalizer over the base seed offset by the grid index.
pub fn derive_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn point_label(p: &RewardParams) -> String {
    format!(
        "af={}_bf={}_am={}_bm={}_k={}",
        p.alpha_f, p.beta_f, p.alpha_m, p.beta_m, p.k
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub config: SimConfig,
    pub stats: Vec<NodeStats>,
    pub executed_rounds: u64,
    pub events: usize,
}

/// One simulation per grid point, run in parallel; results keep grid order.
pub fn sweep(
    base: &SimConfig,
    grid: &SweepGrid,
    inputs: &SimInputs,
    seeds: SeedMode,
) -> Result<Vec<SweepPoint>, SimError> {
    if grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let configs: Vec<SimConfig> = grid
        .points(&base.params)
        .into_iter()
        .enumerate()
        .map(|(i, params)| SimConfig {
            params,
            seed: match seeds {
                SeedMode::PerPoint => derive_seed(base.seed, i),
                SeedMode::Shared => base.seed,
            },
            ..base.clone()
        })
        .collect();
    configs
        .into_par_iter()
        .enumerate()
        .map(|(index, config)| {
            let result = run_simulation(&config, inputs, false)?;
            Ok(SweepPoint {
                index,
                label: point_label(&config.params),
                config,
                stats: result.stats,
                executed_rounds: result.executed_rounds,
                events: result.events.len(),
            })
        })
        .collect()
}
