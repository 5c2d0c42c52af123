//! Cost-aware proof-of-quality (PoQ) simulation and analysis.
//!
//! The pipeline ingests offline generation, evaluation and efficiency logs,
//! turns them into normalized quality and cost signals, replays seeded PoQ
//! consensus rounds and reports per-node reward statistics.
//!
//! * [`record_store`]: data model and JSONL I/O
//! * [`gt_metrics`]: token-level F1 ground truth
//! * [`score_normalizer`]: evaluator min–max spans and latency costs
//! * [`poq_core`]: per-round reward mathematics
//! * [`mc_sim`]: Monte Carlo driver and parameter sweeps
//! * [`analysis`]: correlations and quality-per-latency
//! * [`synth`]: deterministic synthetic fixtures

pub mod analysis;
pub mod gt_metrics;
pub mod mc_sim;
pub mod poq_core;
pub mod record_store;
pub mod score_normalizer;
pub mod synth;
