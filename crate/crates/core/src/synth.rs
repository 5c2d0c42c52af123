//! Deterministic synthetic fixtures in the record_store formats.
//!
//! Per (record, model) pair a true quality is drawn from a clamped normal
//! and rounded to the nearest reachable token-F1 value; the output text is
//! then built so that its token F1 against the reference equals that
//! quality exactly. Evaluator raw scores are `fidelity * quality + noise`,
//! on whatever scale that produces.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gt_metrics::token_f1;
use crate::record_store::{
    save_jsonl, Dataset, EfficiencyProfile, EvalScore, GenerationRecord, JudgeRecord, NodeType,
    StoreError, TaskRecord, TaskType,
};

/// Reference length in tokens; quality resolution is `10 / REFERENCE_TOKENS`.
pub const REFERENCE_TOKENS: usize = 50;
/// Judged records per (dataset, task, model) group.
pub const DEFAULT_JUDGE_GROUP: usize = 30;

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const EFFICIENCY_FILE: &str = "efficiency.jsonl";
pub const JUDGEMENTS_FILE: &str = "judgements.jsonl";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_key: String,
    pub quality_mean: f64,
    pub quality_sd: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorProfile {
    pub evaluator_key: String,
    /// Weight on true quality; negative values plant an inverted evaluator.
    pub fidelity: f64,
    pub noise_sd: f64,
    pub latency_ms: f64,
}

impl EvaluatorProfile {
    /// Picks `noise_sd` so that, for quality with standard deviation
    /// `quality_sd`, the raw score has correlation `rho` with quality.
    pub fn with_target_correlation(
        evaluator_key: impl Into<String>,
        rho: f64,
        quality_sd: f64,
        latency_ms: f64,
    ) -> Self {
        let fidelity = if rho < 0.0 { -1.0 } else { 1.0 };
        let rho = rho.abs().clamp(1e-6, 1.0);
        Self {
            evaluator_key: evaluator_key.into(),
            fidelity,
            noise_sd: quality_sd * (1.0 / (rho * rho) - 1.0).sqrt(),
            latency_ms,
        }
    }
}

/// LLM-judge stand-in: `5 + fidelity * (quality - 5) + noise`, clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeProfile {
    pub fidelity: f64,
    pub noise_sd: f64,
    #[serde(default = "default_group")]
    pub per_group: usize,
}

fn default_group() -> usize {
    DEFAULT_JUDGE_GROUP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_per_task: usize,
    pub model_profiles: Vec<ModelProfile>,
    pub evaluator_profiles: Vec<EvaluatorProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeProfile>,
}

impl SynthSpec {
    /// Five inference and three evaluator nodes shaped like a small real
    /// deployment: two fast strong models, one middling, two slow weak ones;
    /// one informative evaluator, one near-random, one mildly inverted.
    pub fn reference_pool(seed: u64) -> Self {
        let model = |key: &str, mean: f64, lat: f64| ModelProfile {
            model_key: key.into(),
            quality_mean: mean,
            quality_sd: 2.0,
            latency_ms: lat,
        };
        let eval = |key: &str, fidelity: f64, noise: f64, lat: f64| EvaluatorProfile {
            evaluator_key: key.into(),
            fidelity,
            noise_sd: noise,
            latency_ms: lat,
        };
        Self {
            seed,
            n_per_task: 200,
            model_profiles: vec![
                model("gemma_2_2b_it", 5.3, 1108.0),
                model("llama_3_2_3b", 5.4, 1077.7),
                model("phi3_mini_4k", 1.5, 2409.3),
                model("qwen2_1_5b", 1.6, 2320.6),
                model("tinyllama_1_1b", 2.1, 1470.1),
            ],
            evaluator_profiles: vec![
                eval("ce_minilm", 0.05, 3.0, 1.0),
                eval("ce_deberta", -0.2, 3.0, 5.9),
                eval("sts_stsb", 1.0, 3.0, 0.9),
            ],
            judge: Some(JudgeProfile {
                fidelity: 0.4,
                noise_sd: 1.0,
                per_group: DEFAULT_JUDGE_GROUP,
            }),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_per_task == 0 {
            return bad("n_per_task must be >= 1".into());
        }
        if self.model_profiles.is_empty() || self.evaluator_profiles.is_empty() {
            return bad("need at least one model and one evaluator".into());
        }
        let mut keys = HashSet::new();
        for m in &self.model_profiles {
            if !keys.insert(m.model_key.as_str()) {
                return bad(format!("duplicate node key '{}'", m.model_key));
            }
            if !(0.0..=10.0).contains(&m.quality_mean) {
                return bad(format!("{}: quality_mean outside [0, 10]", m.model_key));
            }
            if !(m.quality_sd >= 0.0 && m.latency_ms > 0.0) {
                return bad(format!(
                    "{}: need quality_sd >= 0, latency_ms > 0",
                    m.model_key
                ));
            }
        }
        for e in &self.evaluator_profiles {
            if !keys.insert(e.evaluator_key.as_str()) {
                return bad(format!("duplicate node key '{}'", e.evaluator_key));
            }
            if !(-1.0..=1.0).contains(&e.fidelity) {
                return bad(format!("{}: fidelity outside [-1, 1]", e.evaluator_key));
            }
            if !(e.noise_sd >= 0.0 && e.latency_ms > 0.0) {
                return bad(format!(
                    "{}: need noise_sd >= 0, latency_ms > 0",
                    e.evaluator_key
                ));
            }
        }
        if let Some(j) = &self.judge {
            if !((-1.0..=1.0).contains(&j.fidelity) && j.noise_sd >= 0.0) {
                return bad("judge: need fidelity in [-1, 1], noise_sd >= 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub tasks: Vec<TaskRecord>,
    pub generations: Vec<GenerationRecord>,
    pub profiles: Vec<EfficiencyProfile>,
    pub judgements: Vec<JudgeRecord>,
}

impl SynthOutput {
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        save_jsonl(&self.tasks, dir.join(TASKS_FILE))?;
        save_jsonl(&self.generations, dir.join(GENERATIONS_FILE))?;
        save_jsonl(&self.profiles, dir.join(EFFICIENCY_FILE))?;
        save_jsonl(&self.judgements, dir.join(JUDGEMENTS_FILE))
    }
}

fn reference_text(record: usize) -> String {
    (0..REFERENCE_TOKENS)
        .map(|j| format!("s{record}w{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Output sharing exactly `hits` tokens with [`reference_text`].
fn output_text(record: usize, hits: usize) -> String {
    (0..REFERENCE_TOKENS)
        .map(|j| {
            if j < hits {
                format!("s{record}w{j}")
            } else {
                format!("x{j}")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tasks = Vec::with_capacity(2 * spec.n_per_task);
    for task_type in TaskType::ALL {
        let prefix = match task_type {
            TaskType::Qa => "qa",
            TaskType::Summarization => "sum",
        };
        for n in 0..spec.n_per_task {
            let idx = tasks.len();
            tasks.push(TaskRecord {
                id: format!("{prefix}-{n:05}"),
                dataset: Dataset::Synthetic,
                task_type,
                input: format!("synthetic {} prompt {idx}", task_type.as_str()),
                reference: reference_text(idx),
            });
        }
    }

    let mut generations = Vec::with_capacity(tasks.len() * spec.model_profiles.len());
    for (idx, task) in tasks.iter().enumerate() {
        for model in &spec.model_profiles {
            let z: f64 = rng.sample(StandardNormal);
            let q = (model.quality_mean + model.quality_sd * z).clamp(0.0, 10.0);
            let hits = (q * REFERENCE_TOKENS as f64 / 10.0).round() as usize;
            let output = output_text(idx, hits);
            let gt = token_f1(&output, &task.reference).scaled;
            let mut eval_scores = BTreeMap::new();
            for e in &spec.evaluator_profiles {
                let noise: f64 = rng.sample(StandardNormal);
                eval_scores.insert(
                    e.evaluator_key.clone(),
                    EvalScore::raw(e.fidelity * gt + e.noise_sd * noise),
                );
            }
            generations.push(GenerationRecord {
                id: task.id.clone(),
                dataset: task.dataset,
                task_type: task.task_type,
                model_key: model.model_key.clone(),
                prompt: task.input.clone(),
                reference: task.reference.clone(),
                output,
                gt_score: Some(gt),
                eval_scores,
                judge_score: None,
            });
        }
    }

    let mut judgements = Vec::new();
    if let Some(judge) = &spec.judge {
        let mut groups: BTreeMap<(Dataset, TaskType, &str), Vec<usize>> = BTreeMap::new();
        for (i, g) in generations.iter().enumerate() {
            groups
                .entry((g.dataset, g.task_type, g.model_key.as_str()))
                .or_default()
                .push(i);
        }
        let mut picked = Vec::new();
        for members in groups.values() {
            let take = judge.per_group.min(members.len());
            let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), take)
                .into_iter()
                .map(|p| members[p])
                .collect();
            chosen.sort_unstable();
            picked.extend(chosen);
        }
        picked.sort_unstable();
        for i in picked {
            let g = &generations[i];
            let gt = g.gt_score.unwrap_or(0.0);
            let noise: f64 = rng.sample(StandardNormal);
            let score =
                (5.0 + judge.fidelity * (gt - 5.0) + judge.noise_sd * noise).clamp(0.0, 10.0);
            judgements.push(JudgeRecord {
                id: g.id.clone(),
                model_key: g.model_key.clone(),
                score,
                justification: "synthetic judgement".into(),
            });
        }
    }

    let mut profiles: Vec<EfficiencyProfile> = spec
        .model_profiles
        .iter()
        .map(|m| EfficiencyProfile {
            node_key: m.model_key.clone(),
            node_type: NodeType::Inference,
            avg_latency_ms: m.latency_ms,
            throughput_sps: 1000.0 / m.latency_ms,
            peak_mem_mb: 0.0,
            batch_size: 1,
        })
        .collect();
    profiles.extend(spec.evaluator_profiles.iter().map(|e| EfficiencyProfile {
        node_key: e.evaluator_key.clone(),
        node_type: NodeType::Eval,
        avg_latency_ms: e.latency_ms,
        throughput_sps: 1000.0 / e.latency_ms,
        peak_mem_mb: 0.0,
        batch_size: 32,
    }));

    Ok(SynthOutput {
        tasks,
        generations,
        profiles,
        judgements,
    })
}
