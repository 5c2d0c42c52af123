use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poqsim_core::record_store::{
    load_generations, load_jsonl, save_jsonl, Dataset, EfficiencyProfile, GenerationRecord,
    NodeType, TaskType,
};
use poqsim_core::score_normalizer::NodeCost;
use poqsim_core::synth::{generate, SynthSpec};
use tempfile::TempDir;

fn poqsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poqsim"))
        .current_dir(dir)
        .args(args)
        .env_remove("POQSIM_SEED")
        .env_remove("POQSIM_CONFIG")
        .output()
        .expect("spawn poqsim")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = poqsim(dir, args);
    assert!(
        out.status.success(),
        "poqsim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_fixture(dir: &Path) {
    let mut spec = SynthSpec::reference_pool(11);
    spec.n_per_task = 20;
    generate(&spec)
        .unwrap()
        .write_to_dir(dir.join("d"))
        .unwrap();
}

/// Runs score-gt, normalize and costs on the synthetic fixture.
fn prepared(dir: &Path) {
    small_fixture(dir);
    ok(
        dir,
        &[
            "score-gt",
            "--input",
            "d/generations.jsonl",
            "--output",
            "g.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "normalize",
            "--input",
            "g.jsonl",
            "--output",
            "n.jsonl",
            "--spans-out",
            "s.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "costs",
            "--efficiency",
            "d/efficiency.jsonl",
            "--output",
            "c.jsonl",
        ],
    );
}

const SIM_INPUTS: [&str; 6] = [
    "--tasks",
    "d/tasks.jsonl",
    "--metrics",
    "n.jsonl",
    "--costs",
    "c.jsonl",
];

fn generation(id: &str, output: &str, reference: &str) -> GenerationRecord {
    GenerationRecord {
        id: id.into(),
        dataset: Dataset::Squad,
        task_type: TaskType::Qa,
        model_key: "m".into(),
        prompt: "q".into(),
        reference: reference.into(),
        output: output.into(),
        gt_score: None,
        eval_scores: Default::default(),
        judge_score: None,
    }
}

#[test]
fn validate_reports_counts() {
    let tmp = TempDir::new().unwrap();
    small_fixture(tmp.path());
    let out = ok(
        tmp.path(),
        &[
            "validate",
            "d/tasks.jsonl",
            "d/generations.jsonl",
            "d/efficiency.jsonl",
        ],
    );
    assert!(out.contains("d/tasks.jsonl: tasks, 40 records"), "{out}");
    assert!(out.contains("generations, 200 records"), "{out}");
    assert!(out.contains("efficiency, 8 records"), "{out}");
}

#[test]
fn validate_corrupt_line_names_line() {
    let tmp = TempDir::new().unwrap();
    small_fixture(tmp.path());
    let text = fs::read_to_string(tmp.path().join("d/tasks.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{\"id\": \"broken\"";
    fs::write(tmp.path().join("bad.jsonl"), lines.join("\n")).unwrap();
    let out = poqsim(tmp.path(), &["validate", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("line 5"), "{stdout}");
}

#[test]
fn validate_missing_file_names_path() {
    let tmp = TempDir::new().unwrap();
    let out = poqsim(tmp.path(), &["validate", "absent.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

#[test]
fn score_gt_identity_empty_and_rerun() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    save_jsonl(
        &[
            generation("a", "The Eiffel Tower", "the eiffel tower"),
            generation("b", "Paris", "London"),
        ],
        dir.join("in.jsonl"),
    )
    .unwrap();
    ok(
        dir,
        &["score-gt", "--input", "in.jsonl", "--output", "out1.jsonl"],
    );
    ok(
        dir,
        &["score-gt", "--input", "in.jsonl", "--output", "out2.jsonl"],
    );
    let scored = load_generations(dir.join("out1.jsonl")).unwrap();
    assert_eq!(scored[0].gt_score, Some(10.0));
    assert_eq!(scored[1].gt_score, Some(0.0));
    assert_eq!(
        fs::read(dir.join("out1.jsonl")).unwrap(),
        fs::read(dir.join("out2.jsonl")).unwrap()
    );
    assert!(dir.join("out1.jsonl.manifest.json").exists());

    fs::write(dir.join("empty.jsonl"), "").unwrap();
    ok(
        dir,
        &[
            "score-gt",
            "--input",
            "empty.jsonl",
            "--output",
            "empty_out.jsonl",
        ],
    );
    assert_eq!(fs::read(dir.join("empty_out.jsonl")).unwrap(), b"");
}

#[test]
fn score_gt_does_not_touch_input() {
    let tmp = TempDir::new().unwrap();
    small_fixture(tmp.path());
    let before = fs::read(tmp.path().join("d/generations.jsonl")).unwrap();
    ok(
        tmp.path(),
        &[
            "score-gt",
            "--input",
            "d/generations.jsonl",
            "--output",
            "g.jsonl",
        ],
    );
    assert_eq!(
        before,
        fs::read(tmp.path().join("d/generations.jsonl")).unwrap()
    );
}

#[test]
fn costs_on_table_latencies() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let profiles: Vec<EfficiencyProfile> = [
        ("gemma_2_2b_it", 1108.0),
        ("llama_3_2_3b", 1077.7),
        ("phi3_mini_4k", 2409.3),
        ("qwen2_1_5b", 2320.6),
        ("tinyllama_1_1b", 1470.1),
    ]
    .iter()
    .map(|(k, lat)| EfficiencyProfile {
        node_key: (*k).into(),
        node_type: NodeType::Inference,
        avg_latency_ms: *lat,
        throughput_sps: 1000.0 / lat,
        peak_mem_mb: 1.0,
        batch_size: 1,
    })
    .collect();
    save_jsonl(&profiles, dir.join("eff.jsonl")).unwrap();
    ok(
        dir,
        &[
            "costs",
            "--efficiency",
            "eff.jsonl",
            "--output",
            "c.jsonl",
            "--csv",
            "c.csv",
        ],
    );
    let csv = fs::read_to_string(dir.join("c.csv")).unwrap();
    let mut norms: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    norms.sort_by(f64::total_cmp);
    for (got, want) in norms.iter().zip([0.000, 0.023, 0.295, 0.933, 1.000]) {
        assert!((got - want).abs() <= 0.001, "{got} vs {want}");
    }
    let costs: Vec<NodeCost> = load_jsonl(dir.join("c.jsonl")).unwrap();
    assert_eq!(costs.len(), 5);
}

#[test]
fn simulate_twice_identical() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    prepared(dir);
    let mut args: Vec<&str> = vec!["simulate"];
    args.extend(SIM_INPUTS);
    let run = |stats: &str, trace: &str| {
        let mut a = args.clone();
        a.extend([
            "--stats-out",
            stats,
            "--trace",
            trace,
            "--seed",
            "5",
            "--rounds",
            "800",
        ]);
        ok(dir, &a);
    };
    run("s1.csv", "t1.jsonl");
    run("s2.csv", "t2.jsonl");
    assert_eq!(
        fs::read(dir.join("s1.csv")).unwrap(),
        fs::read(dir.join("s2.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("t1.jsonl")).unwrap(),
        fs::read(dir.join("t2.jsonl")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("s1.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["rounds"], 800);
}

#[test]
fn config_file_and_env_precedence() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    prepared(dir);
    fs::write(dir.join("sim.conf"), "seed = 1\nrounds = 300\nk = 2\n").unwrap();
    let mut args: Vec<&str> = vec!["simulate", "--config", "sim.conf", "--stats-out", "s.csv"];
    args.extend(SIM_INPUTS);
    let out = Command::new(env!("CARGO_BIN_EXE_poqsim"))
        .current_dir(dir)
        .args(&args)
        .env("POQSIM_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("s.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["rounds"], 300);
    assert_eq!(manifest["config"]["params"]["k"], 2);
}

#[test]
fn bad_config_is_validation_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    prepared(dir);
    fs::write(dir.join("sim.conf"), "rounds = 10\nalpha_f = -1\n").unwrap();
    let mut args: Vec<&str> = vec!["simulate", "--config", "sim.conf", "--stats-out", "s.csv"];
    args.extend(SIM_INPUTS);
    assert_eq!(poqsim(dir, &args).status.code(), Some(2));
    assert!(!dir.join("s.csv").exists());
}

#[test]
fn sweep_two_points() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    prepared(dir);
    fs::write(dir.join("grid.conf"), "beta_f = 0, 1\n").unwrap();
    let mut args: Vec<&str> = vec![
        "sweep",
        "--grid",
        "grid.conf",
        "--out-dir",
        "sw",
        "--rounds",
        "200",
    ];
    args.extend(SIM_INPUTS);
    ok(dir, &args);
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir.join("sw"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    assert_eq!(subdirs.len(), 2);
    for (i, sub) in subdirs.iter().enumerate() {
        assert!(sub.ends_with(format!("point-{i:03}")));
        assert!(sub.join("stats.csv").exists());
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(sub.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["command"], "sweep-point");
    }
}

#[test]
fn analyze_writes_tables() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    prepared(dir);
    ok(
        dir,
        &[
            "analyze",
            "--metrics",
            "n.jsonl",
            "--efficiency",
            "d/efficiency.jsonl",
            "--out-dir",
            "an",
        ],
    );
    let corr = fs::read_to_string(dir.join("an/correlations.csv")).unwrap();
    assert!(corr.starts_with("evaluator_key,reference,task_scope,pearson_r,n"));
    let frontier = fs::read_to_string(dir.join("an/frontier.csv")).unwrap();
    assert_eq!(frontier.lines().count(), 6);
    assert!(dir.join("an/manifest.json").exists());
}

#[test]
fn synth_seed_flag_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth",
            "--seed",
            "4",
            "--n-per-task",
            "10",
            "--out-dir",
            "a",
        ],
    );
    ok(
        dir,
        &[
            "synth",
            "--seed",
            "4",
            "--n-per-task",
            "10",
            "--out-dir",
            "b",
        ],
    );
    ok(
        dir,
        &[
            "synth",
            "--seed",
            "5",
            "--n-per-task",
            "10",
            "--out-dir",
            "c",
        ],
    );
    let read = |p: &str| fs::read(dir.join(p)).unwrap();
    assert_eq!(read("a/generations.jsonl"), read("b/generations.jsonl"));
    assert_ne!(read("a/generations.jsonl"), read("c/generations.jsonl"));
    let spec: SynthSpec = serde_json::from_slice(&read("a/synth_spec.json")).unwrap();
    ok(
        dir,
        &["synth", "--spec", "a/synth_spec.json", "--out-dir", "e"],
    );
    assert_eq!(spec.seed, 4);
    assert_eq!(read("a/generations.jsonl"), read("e/generations.jsonl"));
}
