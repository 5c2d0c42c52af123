//! Data model and JSONL persistence for every pipeline stage.
//!
//! Each file is one JSON object per line. Loading is all-or-nothing: the
//! first bad line aborts the load with its 1-based line number, so callers
//! never see a partially populated corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Slack applied to every `[0, 10]` range check.
pub const SCORE_SLACK: f64 = 1e-9;
pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 10.0;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: record must be a JSON object")]
    NotAnObject { line: usize },
    #[error("line {line}: missing required field '{field}'")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: invalid field: {message}")]
    InvalidField { line: usize, message: String },
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: {field} = {value} is outside [0, 10]")]
    OutOfRange {
        line: usize,
        field: String,
        value: f64,
    },
    #[error("score for {key} has no matching generation record")]
    OrphanScore { key: String },
    #[error("{field} = {value} is outside [0, 10] for {key}")]
    ScoreOutOfRange {
        key: String,
        field: &'static str,
        value: f64,
    },
}

impl StoreError {
    /// 1-based line number for errors tied to a specific input line.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::MalformedJson { line, .. }
            | Self::NotAnObject { line }
            | Self::MissingField { line, .. }
            | Self::InvalidField { line, .. }
            | Self::DuplicateKey { line, .. }
            | Self::OutOfRange { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Squad,
    CnnDailymail,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Qa,
    Summarization,
}

impl TaskType {
    pub const ALL: [TaskType; 2] = [TaskType::Qa, TaskType::Summarization];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Qa => "qa",
            TaskType::Summarization => "summarization",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Inference,
    Eval,
}

impl NodeType {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Inference => "inference",
            NodeType::Eval => "eval",
        }
    }
}

/// One corpus item: prompt, reference answer and task type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub dataset: Dataset,
    pub task_type: TaskType,
    pub input: String,
    pub reference: String,
}

/// Raw evaluator output and its normalized counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScore {
    pub raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
}

impl EvalScore {
    pub fn raw(raw: f64) -> Self {
        Self { raw, norm: None }
    }
}

/// One model output for one task, plus whatever scores are attached so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub dataset: Dataset,
    pub task_type: TaskType,
    pub model_key: String,
    pub prompt: String,
    pub reference: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_score: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub eval_scores: BTreeMap<String, EvalScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_score: Option<f64>,
}

impl GenerationRecord {
    pub fn key(&self) -> (String, String) {
        (self.id.clone(), self.model_key.clone())
    }

    /// Normalized score of `evaluator_key`, if one has been attached.
    pub fn norm_score(&self, evaluator_key: &str) -> Option<f64> {
        self.eval_scores.get(evaluator_key).and_then(|s| s.norm)
    }
}

/// Output of the external LLM judge for one (task, model) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub id: String,
    pub model_key: String,
    pub score: f64,
    #[serde(default)]
    pub justification: String,
}

/// Measured efficiency of one inference or evaluator node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyProfile {
    pub node_key: String,
    pub node_type: NodeType,
    pub avg_latency_ms: f64,
    pub throughput_sps: f64,
    pub peak_mem_mb: f64,
    pub batch_size: u32,
}

/// The ordered inference (F) and evaluator (M) node sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePool {
    inference_nodes: Vec<String>,
    eval_nodes: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("{0} node list is empty")]
    Empty(&'static str),
    #[error("duplicate {kind} node '{key}'")]
    Duplicate { kind: &'static str, key: String },
}

impl NodePool {
    pub fn new(inference_nodes: Vec<String>, eval_nodes: Vec<String>) -> Result<Self, PoolError> {
        for (kind, list) in [("inference", &inference_nodes), ("eval", &eval_nodes)] {
            if list.is_empty() {
                return Err(PoolError::Empty(kind));
            }
            let mut seen = HashSet::new();
            for key in list {
                if !seen.insert(key.as_str()) {
                    return Err(PoolError::Duplicate {
                        kind,
                        key: key.clone(),
                    });
                }
            }
        }
        Ok(Self {
            inference_nodes,
            eval_nodes,
        })
    }

    pub fn inference_nodes(&self) -> &[String] {
        &self.inference_nodes
    }

    pub fn eval_nodes(&self) -> &[String] {
        &self.eval_nodes
    }
}

/// A record type that can be stored one-per-line.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    /// Fields that must be present on every line.
    const REQUIRED: &'static [&'static str];

    /// Uniqueness key within one file, if the format has one.
    fn unique_key(&self) -> Option<String> {
        None
    }

    /// Semantic checks beyond what deserialization enforces.
    fn check(&self, _line: usize) -> Result<(), StoreError> {
        Ok(())
    }
}

fn check_score(line: usize, field: &str, value: f64) -> Result<(), StoreError> {
    if value.is_finite() && (SCORE_MIN - SCORE_SLACK..=SCORE_MAX + SCORE_SLACK).contains(&value) {
        Ok(())
    } else {
        Err(StoreError::OutOfRange {
            line,
            field: field.to_string(),
            value,
        })
    }
}

fn non_empty(line: usize, field: &str, value: &str) -> Result<(), StoreError> {
    if value.is_empty() {
        Err(StoreError::InvalidField {
            line,
            message: format!("'{field}' must be non-empty"),
        })
    } else {
        Ok(())
    }
}

impl JsonlRecord for TaskRecord {
    const REQUIRED: &'static [&'static str] = &["id", "dataset", "task_type", "input", "reference"];

    fn unique_key(&self) -> Option<String> {
        Some(format!("\"{}\"", self.id))
    }

    fn check(&self, line: usize) -> Result<(), StoreError> {
        non_empty(line, "id", &self.id)?;
        non_empty(line, "input", &self.input)?;
        non_empty(line, "reference", &self.reference)
    }
}

impl JsonlRecord for GenerationRecord {
    const REQUIRED: &'static [&'static str] = &[
        "id",
        "dataset",
        "task_type",
        "model_key",
        "prompt",
        "reference",
        "output",
    ];

    fn unique_key(&self) -> Option<String> {
        Some(format!("(\"{}\", \"{}\")", self.id, self.model_key))
    }

    fn check(&self, line: usize) -> Result<(), StoreError> {
        non_empty(line, "id", &self.id)?;
        non_empty(line, "model_key", &self.model_key)?;
        if let Some(gt) = self.gt_score {
            check_score(line, "gt_score", gt)?;
        }
        if let Some(judge) = self.judge_score {
            check_score(line, "judge_score", judge)?;
        }
        for (key, score) in &self.eval_scores {
            if !score.raw.is_finite() {
                return Err(StoreError::InvalidField {
                    line,
                    message: format!("eval_scores.{key}.raw is not finite"),
                });
            }
            if let Some(norm) = score.norm {
                check_score(line, &format!("eval_scores.{key}.norm"), norm)?;
            }
        }
        Ok(())
    }
}

impl JsonlRecord for JudgeRecord {
    const REQUIRED: &'static [&'static str] = &["id", "model_key", "score"];

    fn unique_key(&self) -> Option<String> {
        Some(format!("(\"{}\", \"{}\")", self.id, self.model_key))
    }

    fn check(&self, line: usize) -> Result<(), StoreError> {
        check_score(line, "score", self.score)
    }
}

impl JsonlRecord for EfficiencyProfile {
    const REQUIRED: &'static [&'static str] = &[
        "node_key",
        "node_type",
        "avg_latency_ms",
        "throughput_sps",
        "peak_mem_mb",
        "batch_size",
    ];

    fn unique_key(&self) -> Option<String> {
        Some(format!("\"{}\"", self.node_key))
    }

    fn check(&self, line: usize) -> Result<(), StoreError> {
        non_empty(line, "node_key", &self.node_key)?;
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(StoreError::InvalidField {
                    line,
                    message: format!("'{field}' must be > 0, got {v}"),
                })
            }
        };
        positive("avg_latency_ms", self.avg_latency_ms)?;
        positive("throughput_sps", self.throughput_sps)?;
        if !(self.peak_mem_mb.is_finite() && self.peak_mem_mb >= 0.0) {
            return Err(StoreError::InvalidField {
                line,
                message: format!("'peak_mem_mb' must be >= 0, got {}", self.peak_mem_mb),
            });
        }
        if self.batch_size == 0 {
            return Err(StoreError::InvalidField {
                line,
                message: "'batch_size' must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Parses JSONL from any reader. Blank lines are skipped but still counted.
pub fn read_jsonl<T: JsonlRecord>(reader: impl BufRead) -> Result<Vec<T>, StoreError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| StoreError::MalformedJson {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| StoreError::MalformedJson {
            line: line_no,
            message: e.to_string(),
        })?;
        let obj = value
            .as_object()
            .ok_or(StoreError::NotAnObject { line: line_no })?;
        if let Some(field) = T::REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
            return Err(StoreError::MissingField {
                line: line_no,
                field,
            });
        }
        let record: T = serde_json::from_value(value).map_err(|e| StoreError::InvalidField {
            line: line_no,
            message: e.to_string(),
        })?;
        record.check(line_no)?;
        if let Some(key) = record.unique_key() {
            if !seen.insert(key.clone()) {
                return Err(StoreError::DuplicateKey { line: line_no, key });
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_jsonl<T: JsonlRecord>(path: impl AsRef<Path>) -> Result<Vec<T>, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_jsonl(BufReader::new(file))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TaskRecord>, StoreError> {
    load_jsonl(path)
}

pub fn load_generations(path: impl AsRef<Path>) -> Result<Vec<GenerationRecord>, StoreError> {
    load_jsonl(path)
}

pub fn load_judgements(path: impl AsRef<Path>) -> Result<Vec<JudgeRecord>, StoreError> {
    load_jsonl(path)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<EfficiencyProfile>, StoreError> {
    load_jsonl(path)
}

/// Serializes records, one compact object per line, in declaration field order.
pub fn write_jsonl<T: Serialize>(records: &[T], mut writer: impl Write) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_jsonl(records, BufWriter::new(file)).map_err(io_err)
}

pub type PairKey = (String, String);
pub type EvalKey = (String, String, String);

/// Attaches externally computed scores to generation records.
///
/// `gt` and `judges` are keyed by (id, model_key); `evals` by
/// (id, model_key, evaluator_key) and carry raw scores. Every key must match
/// an existing record. Records absent from a map keep their current value.
pub fn merge_scores(
    generations: Vec<GenerationRecord>,
    gt: &BTreeMap<PairKey, f64>,
    evals: &BTreeMap<EvalKey, f64>,
    judges: &BTreeMap<PairKey, f64>,
) -> Result<Vec<GenerationRecord>, StoreError> {
    let known: HashSet<PairKey> = generations.iter().map(GenerationRecord::key).collect();
    let orphan = |id: &str, model: &str, extra: Option<&str>| StoreError::OrphanScore {
        key: match extra {
            Some(e) => format!("(\"{id}\", \"{model}\", \"{e}\")"),
            None => format!("(\"{id}\", \"{model}\")"),
        },
    };
    for (id, model) in gt.keys().chain(judges.keys()) {
        if !known.contains(&(id.clone(), model.clone())) {
            return Err(orphan(id, model, None));
        }
    }
    for (id, model, evaluator) in evals.keys() {
        if !known.contains(&(id.clone(), model.clone())) {
            return Err(orphan(id, model, Some(evaluator)));
        }
    }
    let range = |key: &PairKey, field, value: f64| {
        if value.is_finite() && (SCORE_MIN - SCORE_SLACK..=SCORE_MAX + SCORE_SLACK).contains(&value)
        {
            Ok(())
        } else {
            Err(StoreError::ScoreOutOfRange {
                key: format!("(\"{}\", \"{}\")", key.0, key.1),
                field,
                value,
            })
        }
    };
    for (key, &v) in gt {
        range(key, "gt_score", v)?;
    }
    for (key, &v) in judges {
        range(key, "judge_score", v)?;
    }

    let mut per_pair: BTreeMap<PairKey, Vec<(&str, f64)>> = BTreeMap::new();
    for ((id, model, evaluator), &raw) in evals {
        per_pair
            .entry((id.clone(), model.clone()))
            .or_default()
            .push((evaluator, raw));
    }

    Ok(generations
        .into_iter()
        .map(|mut rec| {
            let key = rec.key();
            if let Some(&v) = gt.get(&key) {
                rec.gt_score = Some(v);
            }
            if let Some(&v) = judges.get(&key) {
                rec.judge_score = Some(v);
            }
            if let Some(scores) = per_pair.get(&key) {
                for &(evaluator, raw) in scores {
                    rec.eval_scores
                        .insert(evaluator.to_string(), EvalScore::raw(raw));
                }
            }
            rec
        })
        .collect())
}

/// Collects judge results into the map consumed by [`merge_scores`].
pub fn judge_map(judgements: &[JudgeRecord]) -> BTreeMap<PairKey, f64> {
    judgements
        .iter()
        .map(|j| ((j.id.clone(), j.model_key.clone()), j.score))
        .collect()
}
