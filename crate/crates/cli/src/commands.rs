use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use poqsim_core::analysis::{
    efficiency_frontier, full_correlation_report, write_correlation_csv, write_frontier_csv,
};
use poqsim_core::gt_metrics::score_generations;
use poqsim_core::mc_sim::{run_simulation, sweep, write_stats_csv, SimInputs};
use poqsim_core::record_store::{
    judge_map, load_corpus, load_generations, load_jsonl, load_judgements, load_profiles,
    merge_scores, save_jsonl, EfficiencyProfile, GenerationRecord, JudgeRecord, TaskRecord,
};
use poqsim_core::score_normalizer::{
    all_latency_costs, fit_all_spans, normalize_records, NodeCost, NormalizationSpan,
};
use poqsim_core::synth::{self, SynthSpec};

use crate::config::{read_grid, resolve_sim_config, SimOverrides};
use crate::error::{CliError, ErrorClass};
use crate::manifest::{beside, ManifestBuilder};

type Result<T> = std::result::Result<T, CliError>;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn save<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    save_jsonl(records, path).map_err(CliError::writing)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::internal(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Tasks,
    Generations,
    Judgements,
    Efficiency,
    Spans,
    Costs,
}

impl FileKind {
    fn name(self) -> &'static str {
        match self {
            FileKind::Tasks => "tasks",
            FileKind::Generations => "generations",
            FileKind::Judgements => "judgements",
            FileKind::Efficiency => "efficiency",
            FileKind::Spans => "spans",
            FileKind::Costs => "costs",
        }
    }

    fn detect(first: &serde_json::Map<String, Value>) -> Option<Self> {
        let has = |k: &str| first.contains_key(k);
        if has("output") {
            Some(FileKind::Generations)
        } else if has("input") {
            Some(FileKind::Tasks)
        } else if has("score") && has("model_key") {
            Some(FileKind::Judgements)
        } else if has("throughput_sps") {
            Some(FileKind::Efficiency)
        } else if has("cost_norm") {
            Some(FileKind::Costs)
        } else if has("min_raw") {
            Some(FileKind::Spans)
        } else {
            None
        }
    }
}

/// Returns `None` for an empty file.
fn sniff(path: &Path) -> Result<Option<FileKind>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| {
            CliError::validation(format!(
                "{}: line {}: invalid JSON: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        let obj = value.as_object().ok_or_else(|| {
            CliError::validation(format!(
                "{}: line {}: record must be a JSON object",
                path.display(),
                idx + 1
            ))
        })?;
        return FileKind::detect(obj).map(Some).ok_or_else(|| {
            CliError::validation(format!("{}: unrecognized record format", path.display()))
        });
    }
    Ok(None)
}

fn count_records(path: &Path, kind: FileKind) -> Result<usize> {
    let n = match kind {
        FileKind::Tasks => load_jsonl::<TaskRecord>(path).map(|v| v.len()),
        FileKind::Generations => load_jsonl::<GenerationRecord>(path).map(|v| v.len()),
        FileKind::Judgements => load_jsonl::<JudgeRecord>(path).map(|v| v.len()),
        FileKind::Efficiency => load_jsonl::<EfficiencyProfile>(path).map(|v| v.len()),
        FileKind::Spans => load_jsonl::<NormalizationSpan>(path).map(|v| v.len()),
        FileKind::Costs => load_jsonl::<NodeCost>(path).map(|v| v.len()),
    };
    n.map_err(|e| CliError::reading(path, e))
}

/// Validates every file, reporting each; fails with the most severe class.
pub fn validate(paths: &[PathBuf]) -> Result<()> {
    let mut worst: Option<CliError> = None;
    for path in paths {
        let outcome = sniff(path).and_then(|kind| match kind {
            None => Ok(("empty", 0)),
            Some(k) => count_records(path, k).map(|n| (k.name(), n)),
        });
        match outcome {
            Ok((kind, n)) => println!("{}: {kind}, {n} records", path.display()),
            Err(e) => {
                println!("{}: error: {e}", path.display());
                let replace = match &worst {
                    None => true,
                    Some(w) => e.class == ErrorClass::MissingInput && w.class != e.class,
                };
                if replace {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn score_gt(input: &Path, output: &Path, judges: Option<&Path>) -> Result<()> {
    let mut manifest = ManifestBuilder::new("score-gt");
    let records = load_generations(input).map_err(|e| CliError::reading(input, e))?;
    manifest.input(input);
    let mut scored = score_generations(records);
    if let Some(path) = judges {
        let judgements = load_judgements(path).map_err(|e| CliError::reading(path, e))?;
        manifest.input(path);
        scored = merge_scores(
            scored,
            &Default::default(),
            &Default::default(),
            &judge_map(&judgements),
        )
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    }
    save(&scored, output)?;
    manifest.output(output);
    manifest.write(&beside(output))?;
    println!("scored {} records -> {}", scored.len(), output.display());
    Ok(())
}

pub fn normalize(
    input: &Path,
    output: &Path,
    spans_out: &Path,
    spans_in: Option<&Path>,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("normalize");
    let records = load_generations(input).map_err(|e| CliError::reading(input, e))?;
    manifest.input(input);
    let spans = match spans_in {
        Some(path) => {
            let s =
                load_jsonl::<NormalizationSpan>(path).map_err(|e| CliError::reading(path, e))?;
            manifest.input(path);
            s
        }
        None => fit_all_spans(&records),
    };
    let normed =
        normalize_records(records, &spans).map_err(|e| CliError::validation(e.to_string()))?;
    save(&normed, output)?;
    save(&spans, spans_out)?;
    manifest.output(output);
    manifest.output(spans_out);
    manifest.write(&beside(output))?;
    println!(
        "normalized {} records with {} spans -> {}",
        normed.len(),
        spans.len(),
        output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CostRow<'a> {
    node_type: &'static str,
    node_key: &'a str,
    avg_latency_ms: f64,
    cost_norm: f64,
}

pub fn costs(efficiency: &Path, output: &Path, csv_out: Option<&Path>) -> Result<()> {
    let mut manifest = ManifestBuilder::new("costs");
    let profiles = load_profiles(efficiency).map_err(|e| CliError::reading(efficiency, e))?;
    manifest.input(efficiency);
    let costs = all_latency_costs(&profiles).map_err(|e| CliError::validation(e.to_string()))?;
    save(&costs, output)?;
    manifest.output(output);
    if let Some(path) = csv_out {
        let mut w = csv::Writer::from_writer(create(path)?);
        for c in &costs {
            w.serialize(CostRow {
                node_type: c.node_type.as_str(),
                node_key: &c.node_key,
                avg_latency_ms: c.avg_latency_ms,
                cost_norm: c.cost_norm,
            })
            .map_err(csv_err(path))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        drop(w);
        manifest.output(path);
    }
    manifest.write(&beside(output))?;
    for c in &costs {
        println!(
            "{:<10} {:<20} {:>10.1} ms  cost {:.3}",
            c.node_type.as_str(),
            c.node_key,
            c.avg_latency_ms,
            c.cost_norm
        );
    }
    Ok(())
}

pub struct SimFiles<'a> {
    pub tasks: &'a Path,
    pub metrics: &'a Path,
    pub costs: &'a Path,
}

fn load_inputs(files: &SimFiles<'_>, manifest: &mut ManifestBuilder) -> Result<SimInputs> {
    let corpus = load_corpus(files.tasks).map_err(|e| CliError::reading(files.tasks, e))?;
    let records =
        load_generations(files.metrics).map_err(|e| CliError::reading(files.metrics, e))?;
    let costs =
        load_jsonl::<NodeCost>(files.costs).map_err(|e| CliError::reading(files.costs, e))?;
    for p in [files.tasks, files.metrics, files.costs] {
        manifest.input(p);
    }
    SimInputs::new(&corpus, &records, &costs).map_err(|e| CliError::validation(e.to_string()))
}

pub fn simulate(
    files: &SimFiles<'_>,
    config: Option<&Path>,
    overrides: &SimOverrides,
    stats_out: &Path,
    trace_out: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_sim_config(config, overrides)?;
    let mut manifest = ManifestBuilder::new("simulate").seed(cfg.seed).config(&cfg);
    if let Some(p) = config {
        manifest.input(p);
    }
    let inputs = load_inputs(files, &mut manifest)?;
    let result = run_simulation(&cfg, &inputs, trace_out.is_some())
        .map_err(|e| CliError::validation(e.to_string()))?;

    write_stats_csv(&result.stats, create(stats_out)?).map_err(csv_err(stats_out))?;
    manifest.output(stats_out);
    if let (Some(path), Some(trace)) = (trace_out, &result.trace) {
        save(trace, path)?;
        manifest.output(path);
    }
    manifest.write(&beside(stats_out))?;

    println!(
        "{} of {} rounds executed, {} events; stats -> {}",
        result.executed_rounds,
        cfg.rounds,
        result.events.len(),
        stats_out.display()
    );
    for s in &result.stats {
        println!(
            "{:<10} {:<20} avg {:>8.4}  cost {:.3}  jobs {}",
            s.node_type.as_str(),
            s.node_key,
            s.avg_reward,
            s.cost_norm,
            s.job_count
        );
    }
    Ok(())
}

pub fn sweep_cmd(
    files: &SimFiles<'_>,
    config: Option<&Path>,
    overrides: &SimOverrides,
    grid_path: &Path,
    out_dir: &Path,
) -> Result<()> {
    let base = resolve_sim_config(config, overrides)?;
    let (grid, mode) = read_grid(grid_path)?;
    let mut root = ManifestBuilder::new("sweep").seed(base.seed).config(&base);
    if let Some(p) = config {
        root.input(p);
    }
    root.input(grid_path);
    let inputs = load_inputs(files, &mut root)?;
    let points =
        sweep(&base, &grid, &inputs, mode).map_err(|e| CliError::validation(e.to_string()))?;

    ensure_dir(out_dir)?;
    for point in &points {
        let dir = out_dir.join(format!("point-{:03}", point.index));
        ensure_dir(&dir)?;
        let stats_path = dir.join("stats.csv");
        write_stats_csv(&point.stats, create(&stats_path)?).map_err(csv_err(&stats_path))?;
        let mut m = ManifestBuilder::new("sweep-point")
            .seed(point.config.seed)
            .config(serde_json::json!({
                "label": point.label,
                "index": point.index,
                "config": point.config,
            }));
        m.input(files.tasks);
        m.input(files.metrics);
        m.input(files.costs);
        m.output(&stats_path);
        m.write(&dir.join("manifest.json"))?;
        root.output(&stats_path);
        println!(
            "point {:03} {} seed {} -> {}",
            point.index,
            point.label,
            point.config.seed,
            dir.display()
        );
    }
    root.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

pub fn analyze(metrics: &Path, efficiency: &Path, out_dir: &Path) -> Result<()> {
    let mut manifest = ManifestBuilder::new("analyze");
    let records = load_generations(metrics).map_err(|e| CliError::reading(metrics, e))?;
    let profiles = load_profiles(efficiency).map_err(|e| CliError::reading(efficiency, e))?;
    manifest.input(metrics);
    manifest.input(efficiency);

    ensure_dir(out_dir)?;
    let corr = full_correlation_report(&records);
    let corr_path = out_dir.join("correlations.csv");
    write_correlation_csv(&corr, create(&corr_path)?).map_err(csv_err(&corr_path))?;
    let frontier = efficiency_frontier(&records, &profiles);
    let frontier_path = out_dir.join("frontier.csv");
    write_frontier_csv(&frontier, create(&frontier_path)?).map_err(csv_err(&frontier_path))?;
    manifest.output(&corr_path);
    manifest.output(&frontier_path);
    manifest.write(&out_dir.join("manifest.json"))?;

    for r in corr
        .reports
        .iter()
        .filter(|r| r.task_scope.as_str() == "averaged")
    {
        println!(
            "{:<14} vs {:<5} r = {:+.3} (n = {})",
            r.evaluator_key,
            r.reference.as_str(),
            r.pearson_r,
            r.n
        );
    }
    for c in &corr.omitted {
        eprintln!(
            "note: {} vs {} on {}: {}",
            c.evaluator_key,
            c.reference.as_str(),
            c.task_scope.as_str(),
            c.reason
        );
    }
    for p in &frontier {
        println!(
            "{:<20} quality {:.3}  latency {:.1} ms  quality/ms {:.6}",
            p.model_key, p.avg_quality, p.avg_latency_ms, p.quality_per_ms
        );
    }
    Ok(())
}

pub fn synth_cmd(
    spec_path: Option<&Path>,
    seed: Option<u64>,
    n_per_task: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("synth");
    let mut spec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            manifest.input(path);
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::reference_pool(0),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = n_per_task {
        spec.n_per_task = n;
    }
    let out = synth::generate(&spec).map_err(|e| CliError::validation(e.to_string()))?;
    out.write_to_dir(out_dir).map_err(CliError::writing)?;
    for name in [
        synth::TASKS_FILE,
        synth::GENERATIONS_FILE,
        synth::EFFICIENCY_FILE,
        synth::JUDGEMENTS_FILE,
    ] {
        manifest.output(&out_dir.join(name));
    }
    let spec_copy = out_dir.join("synth_spec.json");
    let text =
        serde_json::to_string_pretty(&spec).map_err(|e| CliError::internal(e.to_string()))?;
    std::fs::write(&spec_copy, text + "\n").map_err(|e| CliError::io(&spec_copy, e))?;
    manifest.output(&spec_copy);
    manifest = manifest.seed(spec.seed).config(&spec);
    manifest.write(&out_dir.join("manifest.json"))?;
    println!(
        "synthesized {} tasks, {} generations, {} judgements -> {}",
        out.tasks.len(),
        out.generations.len(),
        out.judgements.len(),
        out_dir.display()
    );
    Ok(())
}
