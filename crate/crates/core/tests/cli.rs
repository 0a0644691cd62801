//! Integration tests for the command layer and the binary itself.
//!
//! Every test works in its own temp directory seeded from the fixture
//! corpus, dataset, qrels, and mock-LLM transcript, so commands run the real
//! pipeline end to end without any network access.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mq4cs::cli::{
    cmd_compare, cmd_eval, cmd_generate, cmd_index, cmd_oracle, cmd_run, read_run_manifest,
};
use mq4cs::config::{load_config, CliOverrides, ExperimentConfig};
use mq4cs::querygen::read_query_sets;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn setup(dir: &Path) -> ExperimentConfig {
    setup_with(dir, &CliOverrides::default())
}

fn setup_with(dir: &Path, overrides: &CliOverrides) -> ExperimentConfig {
    for name in ["corpus.jsonl", "conversations.jsonl", "qrels.txt", "transcript.jsonl", "config.toml"] {
        fs::copy(fixture(name), dir.join(name)).unwrap();
    }
    load_config(&dir.join("config.toml"), overrides).unwrap()
}

#[test]
fn single_query_variant_retrieves_with_one_query_per_turn() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = CliOverrides {
        variant: Some("qr".to_string()),
        ..CliOverrides::default()
    };
    let config = setup_with(dir.path(), &overrides);
    assert_eq!(config.pipeline.phi, 1, "qr must force the budget to one");

    cmd_index(&config).unwrap();
    cmd_generate(&config, &[1]).unwrap();
    let outcome = cmd_run(&config, 1).unwrap();
    assert_eq!(outcome.tag, "qr_phi1");
    assert_eq!(outcome.turns, 6);

    let manifest = read_run_manifest(&config, "qr_phi1").unwrap();
    assert_eq!(manifest.variant, "qr");
    assert_eq!(manifest.phi, 1);
    assert_eq!(manifest.queries_per_turn.len(), 6);
    assert!(
        manifest.queries_per_turn.values().all(|&n| n == 1),
        "rewriting produces exactly one query per turn: {:?}",
        manifest.queries_per_turn
    );
}

#[test]
fn eval_reproduces_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["corpus.jsonl", "conversations.jsonl", "transcript.jsonl"] {
        fs::copy(fixture(name), dir.path().join(name)).unwrap();
    }
    // Same layout as the fixture config, but judged by the worked-example
    // qrels so the report's numbers are known in closed form.
    let config_toml = format!(
        r#"workers = 1

[paths]
corpus = "corpus.jsonl"
corpus_format = "jsonl"
dataset = "conversations.jsonl"
qrels = "{}"
index_dir = "index"
output_dir = "out"

[pipeline]
variant = "mq4cs"
phi = 3

[llm]
mode = "mock"
transcript = "transcript.jsonl"

[eval]
metrics = ["ndcg@3", "recall@100", "mrr", "map"]
relevance_threshold = 1
"#,
        fixture("eval_example.qrels").display()
    );
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, config_toml).unwrap();
    let config = load_config(&config_path, &CliOverrides::default()).unwrap();

    let report = cmd_eval(&config, Some(&fixture("eval_example.run"))).unwrap();

    // The report carries the runid from inside the file; the artifact
    // names use the file stem.
    assert_eq!(report.tag, "demo");
    assert_eq!(report.evaluated_turns, 2);
    assert!(report.unjudged_turns.is_empty());
    assert!(report.missing_turns.is_empty());

    let ndcg_t1 = 3.5 / (3.0 + 1.0 / 3.0f64.log2());
    let ndcg_t2 = 1.0 / 3.0f64.log2();
    let close = |got: f64, want: f64| (got - want).abs() < 1e-12;
    assert!(close(report.means["ndcg@3"], (ndcg_t1 + ndcg_t2) / 2.0));
    assert!(close(report.means["mrr"], 0.75));
    assert!(close(report.means["map"], (5.0 / 6.0 + 0.5) / 2.0));
    assert!(close(report.means["recall@100"], 1.0));
    assert!(close(report.per_turn["t1"]["map"], 5.0 / 6.0));
    assert!(close(report.per_turn["t2"]["mrr"], 0.5));

    let reports_dir = config.paths.output_dir.join("reports");
    assert!(reports_dir.join("eval_example.report.json").exists());
    let text = fs::read_to_string(reports_dir.join("eval_example.report.txt")).unwrap();
    assert!(text.contains("runid"), "text report names the run: {text}");
}

#[test]
fn generation_failures_are_recorded_and_the_rest_proceeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());

    // Drop the canned completion for one turn at the configured budget; the
    // mock transport then fails that turn the way a flaky endpoint would.
    let transcript = fs::read_to_string(dir.path().join("transcript.jsonl")).unwrap();
    let kept: Vec<&str> = transcript
        .lines()
        .filter(|line| {
            let row: serde_json::Value = serde_json::from_str(line).unwrap();
            !(row["conv_id"] == "c2"
                && row["turn_id"] == 2
                && row["kind"] == "queries"
                && row["phi"] == 3)
        })
        .collect();
    fs::write(dir.path().join("transcript.jsonl"), kept.join("\n")).unwrap();

    cmd_index(&config).unwrap();
    let outcome = cmd_generate(&config, &[3]).unwrap();
    assert_eq!(outcome.query_sets, 5);
    assert_eq!(outcome.failures, 1);

    let failures = fs::read_to_string(config.paths.output_dir.join("generation_failures.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> =
        failures.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["conv_id"], "c2");
    assert_eq!(rows[0]["turn_id"], 2);
    assert_eq!(rows[0]["phi"], 3);
    assert!(
        rows[0]["error"].as_str().unwrap().contains("no transcript entry"),
        "failure keeps the underlying error: {}",
        rows[0]["error"]
    );

    let run = cmd_run(&config, 3).unwrap();
    assert_eq!(run.turns, 5, "the failed turn is absent, the rest ran");
    let manifest = read_run_manifest(&config, "mq4cs_phi3").unwrap();
    assert_eq!(manifest.turns_without_queries, 1);
    assert!(!manifest.queries_per_turn.contains_key("c2_2"));
}

#[test]
fn regenerating_one_variant_keeps_other_variants_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    cmd_index(&config).unwrap();
    cmd_generate(&config, &[2, 3]).unwrap();

    let qr_config = load_config(
        &dir.path().join("config.toml"),
        &CliOverrides { variant: Some("qr".to_string()), ..CliOverrides::default() },
    )
    .unwrap();
    cmd_generate(&qr_config, &[1]).unwrap();
    // Regenerate a subset of the first variant's budgets on top.
    cmd_generate(&config, &[3]).unwrap();

    let sets = read_query_sets(&config.paths.output_dir.join("queries.jsonl")).unwrap();
    let mut counts: BTreeMap<(String, u32), usize> = BTreeMap::new();
    for set in &sets {
        *counts.entry((set.variant.clone(), set.phi)).or_insert(0) += 1;
    }
    let expected: BTreeMap<(String, u32), usize> = [
        (("mq4cs".to_string(), 2), 6),
        (("mq4cs".to_string(), 3), 6),
        (("qr".to_string(), 1), 6),
    ]
    .into();
    assert_eq!(counts, expected, "rows of untouched variants and budgets survive");

    // Both variants stay runnable from the shared queries file.
    assert_eq!(cmd_run(&qr_config, 1).unwrap().turns, 6);
    assert_eq!(cmd_run(&config, 2).unwrap().turns, 6);
}

#[test]
fn compare_pairs_turns_across_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    cmd_index(&config).unwrap();
    cmd_generate(&config, &[1, 3]).unwrap();
    let run1 = cmd_run(&config, 1).unwrap();
    let run3 = cmd_run(&config, 3).unwrap();

    let result = cmd_compare(&config, &run3.run_path, &run1.run_path).unwrap();
    assert_eq!(result.n, 6, "all six judged turns pair up");
    assert!(result.p >= 0.0 && result.p <= 1.0);
    assert!(result.t.is_finite());

    let self_test = cmd_compare(&config, &run3.run_path, &run3.run_path).unwrap();
    assert_eq!(self_test.t, 0.0);
    assert_eq!(self_test.p, 1.0);
    assert_eq!(self_test.mean_diff, 0.0);

    let swapped = cmd_compare(&config, &run1.run_path, &run3.run_path).unwrap();
    assert_eq!(swapped.t, -result.t);
    assert_eq!(swapped.p, result.p);
}

#[test]
fn missing_prerequisites_fail_with_named_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());

    let err = cmd_run(&config, 3).unwrap_err().to_string();
    assert!(err.contains("missing index"), "got: {err}");

    cmd_index(&config).unwrap();
    let err = cmd_run(&config, 3).unwrap_err().to_string();
    assert!(err.contains("missing queries file"), "got: {err}");

    let err = cmd_oracle(&config).unwrap_err().to_string();
    assert!(err.contains("missing run file"), "got: {err}");

    let err = cmd_eval(&config, None).unwrap_err().to_string();
    assert!(err.contains("missing run file"), "got: {err}");

    fs::remove_file(dir.path().join("conversations.jsonl")).unwrap();
    let err = cmd_generate(&config, &[3]).unwrap_err().to_string();
    assert!(err.contains("missing dataset"), "got: {err}");
}

#[test]
fn run_refuses_an_index_built_from_another_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    cmd_index(&config).unwrap();
    cmd_generate(&config, &[3]).unwrap();

    // Swap one passage after indexing; the stored corpus hash catches it.
    let corpus = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    let edited = corpus.replacen("Mars", "Venus", 1);
    assert_ne!(corpus, edited);
    fs::write(dir.path().join("corpus.jsonl"), edited).unwrap();

    let err = cmd_run(&config, 3).unwrap_err().to_string();
    assert!(err.contains("different corpus"), "got: {err}");
}

#[test]
fn no_cache_override_skips_the_prompt_cache() {
    let cached_dir = tempfile::tempdir().unwrap();
    let config = setup(cached_dir.path());
    cmd_index(&config).unwrap();
    cmd_generate(&config, &[1]).unwrap();
    assert!(
        config.paths.output_dir.join("prompt_cache").is_dir(),
        "caching is on by default in the fixture config"
    );

    let uncached_dir = tempfile::tempdir().unwrap();
    let overrides = CliOverrides { no_cache: true, ..CliOverrides::default() };
    let config = setup_with(uncached_dir.path(), &overrides);
    cmd_index(&config).unwrap();
    cmd_generate(&config, &[1]).unwrap();
    assert!(!config.paths.output_dir.join("prompt_cache").exists());
}

#[test]
fn binary_reports_progress_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let config_arg = dir.path().join("config.toml");
    let bin = env!("CARGO_BIN_EXE_mq4cs");

    let index = Command::new(bin)
        .args(["--config", config_arg.to_str().unwrap(), "index"])
        .output()
        .unwrap();
    assert!(index.status.success(), "stderr: {}", String::from_utf8_lossy(&index.stderr));
    let stdout = String::from_utf8_lossy(&index.stdout);
    assert!(stdout.contains("indexed 30 passages"), "got: {stdout}");

    let sweep = Command::new(bin)
        .args(["--config", config_arg.to_str().unwrap(), "sweep"])
        .output()
        .unwrap();
    assert!(sweep.status.success(), "stderr: {}", String::from_utf8_lossy(&sweep.stderr));
    let stdout = String::from_utf8_lossy(&sweep.stdout);
    for tag in ["mq4cs_phi1", "mq4cs_phi3", "mq4cs_phi5", "oracle"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(&format!("{tag}\tndcg@3\t"))),
            "no summary line for {tag} in: {stdout}"
        );
    }

    // A failing command exits nonzero and explains itself on stderr.
    let missing = Command::new(bin)
        .args(["--config", config_arg.to_str().unwrap(), "eval", "--run", "nowhere.run"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(stderr.contains("error:"), "got: {stderr}");
    assert!(stderr.contains("missing run file"), "got: {stderr}");
}
