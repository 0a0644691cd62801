//! Command implementations behind the binary's subcommands.
//!
//! Every command reads the same experiment config and leaves reproducible
//! artifacts under `output_dir`:
//!
//! ```text
//! out/
//!   config.resolved.toml          resolved config copy (provenance)
//!   manifest.json                 command, config hash, timestamp
//!   queries.jsonl                 one generated query set per (turn, phi)
//!   generation_failures.jsonl     turns the LLM failed on, one per line
//!   prompt_cache/                 completion cache (when enabled)
//!   runs/<tag>.run                TREC run file per variant and phi
//!   runs/<tag>.manifest.json      flow provenance for that run
//!   timings/                      per-turn stage timings (wall clock)
//!   reports/<tag>.report.{json,txt}
//!   oracle/                       stitched run, selection, stats, groups
//! ```
//!
//! All writes are atomic (temp file + rename) and everything except
//! `manifest.json` and `timings/` is byte-deterministic given the same
//! config, corpus, and transcript or cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::conversation::{load_dataset, turn_key, Conversation};
use crate::corpus::ingest_collection;
use crate::error::{Error, Result};
use crate::fsio;
use crate::index::InvertedIndex;
use crate::metrics::{evaluate_run, render_text, MetricReport};
use crate::oracle::{
    difficulty_groups, oracle_select, phi_distribution, split_groups, topic_shift_groups,
    GroupStats, OracleSelection, PhiStats,
};
use crate::pipeline::{run_turn, StageTimings, Variant};
use crate::querygen::{generate_queries, read_query_sets, write_query_sets, QuerySet};
use crate::stats::{paired_t_test, TTestResult};
use crate::trec::{run_from_fused, QrelSet, RunFile};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).expect("artifact serializes");
    body.push('\n');
    fsio::atomic_write(path, body.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = fsio::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| Error::parse(path.display(), 0, e.to_string()))
}

/// Writes the resolved config and a command manifest into `output_dir`.
fn write_provenance(config: &ExperimentConfig, command: &str, artifacts: &[String]) -> Result<()> {
    let out = &config.paths.output_dir;
    fsio::create_dir_all(out)?;
    fsio::atomic_write(
        &out.join("config.resolved.toml"),
        config.resolved_toml().as_bytes(),
    )?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        config_hash: String,
        created_unix_ms: u128,
        artifacts: &'a [String],
    }
    let manifest = Manifest {
        command,
        config_hash: config.config_hash(),
        created_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        artifacts,
    };
    write_json(&out.join("manifest.json"), &manifest)
}

/// Runs `job` over `items` with a bounded rayon pool, keeping input order.
fn bounded_map<T, R, F>(workers: usize, items: Vec<T>, job: F) -> Result<Vec<R>>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&job).collect()))
}

/// What `index` produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub num_docs: usize,
    pub avg_doc_length: f64,
    pub corpus_sha256: String,
}

/// Ingests the corpus and writes the inverted index.
pub fn cmd_index(config: &ExperimentConfig) -> Result<IndexSummary> {
    fsio::require_exists("corpus", &config.paths.corpus)?;
    let collection = ingest_collection(&config.paths.corpus, config.corpus_format()?)?;
    let index = InvertedIndex::build(&collection, config.bm25());
    index.save(&config.paths.index_dir)?;
    Ok(IndexSummary {
        num_docs: index.num_docs(),
        avg_doc_length: index.avg_doc_length(),
        corpus_sha256: index.corpus_sha256().to_string(),
    })
}

/// One turn the LLM failed on; the rest of the batch still proceeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub conv_id: String,
    pub turn_id: u32,
    pub phi: u32,
    pub variant: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GenerationTiming {
    turn_key: String,
    variant: String,
    phi: u32,
    generation_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutcome {
    pub query_sets: usize,
    pub failures: usize,
    pub queries_path: PathBuf,
}

/// Generates query sets for every turn at each requested budget.
pub fn cmd_generate(config: &ExperimentConfig, phis: &[u32]) -> Result<GenerateOutcome> {
    fsio::require_exists("dataset", &config.paths.dataset)?;
    let dataset = load_dataset(&config.paths.dataset)?;
    let client = config.build_llm_client()?;
    let variant = config.variant()?;
    let gen_variant = variant.generation();
    let style = config.context_style()?;
    let fewshot = config.llm.fewshot;

    // One task per (conversation, turn, phi), in dataset order with phi
    // innermost; output rows keep this order.
    let mut tasks: Vec<(&Conversation, usize, u32)> = Vec::new();
    for conv in &dataset {
        for turn_pos in 1..=conv.turns.len() {
            for &phi in phis {
                tasks.push((conv, turn_pos, phi));
            }
        }
    }

    let results = bounded_map(config.workers, tasks, |&(conv, turn_pos, phi)| {
        let started = Instant::now();
        let outcome = generate_queries(&client, gen_variant, conv, turn_pos, phi, style, fewshot);
        (conv, turn_pos, phi, outcome, started.elapsed().as_secs_f64() * 1000.0)
    })?;

    let mut sets = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (conv, turn_pos, phi, outcome, elapsed_ms) in results {
        let turn_id = conv.turns[turn_pos - 1].turn_id;
        match outcome {
            Ok(set) => {
                timings.push(GenerationTiming {
                    turn_key: turn_key(&conv.conv_id, turn_id),
                    variant: gen_variant.as_str().to_string(),
                    phi,
                    generation_ms: elapsed_ms,
                });
                sets.push(set);
            }
            Err(err) => failures.push(GenerationFailure {
                conv_id: conv.conv_id.clone(),
                turn_id,
                phi,
                variant: gen_variant.as_str().to_string(),
                error: err.to_string(),
            }),
        }
    }

    let out = &config.paths.output_dir;
    fsio::create_dir_all(out)?;
    let queries_path = out.join("queries.jsonl");
    // Regeneration replaces exactly the (variant, phi) combinations it
    // covers; rows from other variants or budgets stay, so one output dir
    // can hold a baseline and a comparison.
    let new_count = sets.len();
    let gen_name = gen_variant.as_str();
    let mut all_sets: Vec<QuerySet> = if queries_path.exists() {
        read_query_sets(&queries_path)?
            .into_iter()
            .filter(|s| !(s.variant == gen_name && phis.contains(&s.phi)))
            .collect()
    } else {
        Vec::new()
    };
    all_sets.extend(sets);
    write_query_sets(&queries_path, &all_sets)?;

    let mut failure_lines = String::new();
    for failure in &failures {
        failure_lines.push_str(&serde_json::to_string(failure).expect("failure serializes"));
        failure_lines.push('\n');
    }
    fsio::atomic_write(
        &out.join("generation_failures.jsonl"),
        failure_lines.as_bytes(),
    )?;

    fsio::create_dir_all(&out.join("timings"))?;
    let timings_path = out.join("timings").join("generation.jsonl");
    let mut all_timings: Vec<GenerationTiming> = if timings_path.exists() {
        read_generation_timings(&timings_path)?
            .into_iter()
            .filter(|t| !(t.variant == gen_name && phis.contains(&t.phi)))
            .collect()
    } else {
        Vec::new()
    };
    all_timings.extend(timings);
    let mut timing_lines = String::new();
    for timing in &all_timings {
        timing_lines.push_str(&serde_json::to_string(timing).expect("timing serializes"));
        timing_lines.push('\n');
    }
    fsio::atomic_write(&timings_path, timing_lines.as_bytes())?;

    write_provenance(
        config,
        "generate",
        &[
            "queries.jsonl".to_string(),
            "generation_failures.jsonl".to_string(),
        ],
    )?;
    Ok(GenerateOutcome {
        query_sets: new_count,
        failures: failures.len(),
        queries_path,
    })
}

/// Run-file provenance: enough to tell the variant flows apart without
/// rerunning anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tag: String,
    pub variant: String,
    pub phi: u32,
    pub per_query_rerank: bool,
    pub fusion: String,
    pub reranker: String,
    pub first_stage_depth: usize,
    pub fusion_limit: usize,
    pub index_corpus_sha256: String,
    pub config_hash: String,
    /// Turns whose fused list made it into the run file.
    pub turns: usize,
    /// Dataset turns with no generated queries (generation failed).
    pub turns_without_queries: usize,
    pub queries_per_turn: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub tag: String,
    pub turns: usize,
    pub run_path: PathBuf,
}

fn run_tag(variant: Variant, phi: u32) -> String {
    format!("{variant}_phi{phi}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TurnTiming {
    turn_key: String,
    #[serde(flatten)]
    stages: StageTimings,
}

/// Loads the index, checking it was built from the configured corpus.
fn load_checked_index(config: &ExperimentConfig) -> Result<(InvertedIndex, crate::corpus::PassageCollection)> {
    fsio::require_exists("index", &config.paths.index_dir.join("index.bin"))?;
    fsio::require_exists("corpus", &config.paths.corpus)?;
    let index = InvertedIndex::load(&config.paths.index_dir)?;
    let collection = ingest_collection(&config.paths.corpus, config.corpus_format()?)?;
    if index.corpus_sha256() != collection.sha256() {
        return Err(Error::Config(format!(
            "index at {} was built from a different corpus (index {}, corpus {})",
            config.paths.index_dir.display(),
            index.corpus_sha256(),
            collection.sha256()
        )));
    }
    Ok((index, collection))
}

fn read_generation_timings(path: &Path) -> Result<Vec<GenerationTiming>> {
    let raw = fsio::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(line)
                .map_err(|e| Error::parse(path.display(), idx + 1, e.to_string()))?,
        );
    }
    Ok(rows)
}

fn generation_timings(config: &ExperimentConfig, variant: &str) -> BTreeMap<(String, u32), f64> {
    let path = config.paths.output_dir.join("timings").join("generation.jsonl");
    if !path.exists() {
        return BTreeMap::new();
    }
    read_generation_timings(&path)
        .unwrap_or_default()
        .into_iter()
        .filter(|t| t.variant == variant)
        .map(|t| ((t.turn_key, t.phi), t.generation_ms))
        .collect()
}

/// Retrieves, reranks, and fuses every turn at one budget, writing the
/// TREC run file plus its manifest and per-turn timings.
pub fn cmd_run(config: &ExperimentConfig, phi: u32) -> Result<RunOutcome> {
    let variant = config.variant()?;
    let pipeline = config.pipeline_config(phi)?;
    let (index, collection) = load_checked_index(config)?;
    let reranker = config.build_reranker()?;

    let queries_path = config.paths.output_dir.join("queries.jsonl");
    fsio::require_exists("queries file", &queries_path)?;
    let gen_name = variant.generation().as_str();
    let sets: Vec<QuerySet> = read_query_sets(&queries_path)?
        .into_iter()
        .filter(|set| set.variant == gen_name && set.phi == phi)
        .collect();
    if sets.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no query sets for variant {gen_name} at phi {phi} in {}",
            queries_path.display()
        )));
    }

    let dataset_turns: usize = load_dataset(&config.paths.dataset)
        .map(|convs| convs.iter().map(|c| c.turns.len()).sum())
        .unwrap_or(sets.len());

    let turn_runs = bounded_map(config.workers, sets, |set| {
        run_turn(&pipeline, &index, &reranker, set, &collection)
            .map(|run| (run, set.queries.len()))
    })?;

    let gen_times = generation_timings(config, gen_name);
    let mut fused = Vec::new();
    let mut queries_per_turn = BTreeMap::new();
    let mut timings = Vec::new();
    for result in turn_runs {
        let (run, query_count) = result?;
        queries_per_turn.insert(run.turn_key.clone(), query_count);
        let mut stages = run.timings;
        stages.generation_ms = gen_times
            .get(&(run.turn_key.clone(), phi))
            .copied()
            .unwrap_or(0.0);
        timings.push(TurnTiming {
            turn_key: run.turn_key.clone(),
            stages,
        });
        fused.push(run.fused);
    }

    let tag = run_tag(variant, phi);
    let run_file = run_from_fused(&tag, &fused)?;

    let out = &config.paths.output_dir;
    fsio::create_dir_all(&out.join("runs"))?;
    let run_path = out.join("runs").join(format!("{tag}.run"));
    run_file.write(&run_path)?;

    let manifest = RunManifest {
        tag: tag.clone(),
        variant: variant.as_str().to_string(),
        phi,
        per_query_rerank: variant.per_query_rerank(),
        fusion: variant.fusion().as_str().to_string(),
        reranker: config.reranker.kind.clone(),
        first_stage_depth: pipeline.first_stage_depth,
        fusion_limit: pipeline.fusion_limit,
        index_corpus_sha256: index.corpus_sha256().to_string(),
        config_hash: config.config_hash(),
        turns: run_file.num_turns(),
        turns_without_queries: dataset_turns.saturating_sub(queries_per_turn.len()),
        queries_per_turn,
    };
    write_json(&out.join("runs").join(format!("{tag}.manifest.json")), &manifest)?;

    fsio::create_dir_all(&out.join("timings"))?;
    let mut timing_lines = String::new();
    for timing in &timings {
        timing_lines.push_str(&serde_json::to_string(timing).expect("timing serializes"));
        timing_lines.push('\n');
    }
    fsio::atomic_write(
        &out.join("timings").join(format!("{tag}.jsonl")),
        timing_lines.as_bytes(),
    )?;

    write_provenance(
        config,
        "run",
        &[format!("runs/{tag}.run"), format!("runs/{tag}.manifest.json")],
    )?;
    Ok(RunOutcome {
        tag,
        turns: run_file.num_turns(),
        run_path,
    })
}

fn qrels_path(config: &ExperimentConfig) -> Result<&Path> {
    let path = config.paths.qrels.as_deref().ok_or_else(|| {
        Error::Config("this command needs paths.qrels in the config".to_string())
    })?;
    fsio::require_exists("qrels", path)?;
    Ok(path)
}

/// Scores one run file and writes a JSON and text report next to it.
///
/// With `run_path` unset, the run for the configured variant and phi is
/// evaluated. The report tag is the run file's stem.
pub fn cmd_eval(config: &ExperimentConfig, run_path: Option<&Path>) -> Result<MetricReport> {
    let default_path = config
        .paths
        .output_dir
        .join("runs")
        .join(format!("{}.run", run_tag(config.variant()?, config.pipeline.phi)));
    let run_path = run_path.unwrap_or(&default_path);
    fsio::require_exists("run file", run_path)?;
    let run = RunFile::load(run_path)?;
    let qrels = QrelSet::load(qrels_path(config)?)?;

    let report = evaluate_run(
        &run,
        &qrels,
        &config.metrics()?,
        config.eval.relevance_threshold,
    );

    let tag = run_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| report.tag.clone());
    let reports_dir = config.paths.output_dir.join("reports");
    fsio::create_dir_all(&reports_dir)?;
    write_json(&reports_dir.join(format!("{tag}.report.json")), &report)?;
    fsio::atomic_write(
        &reports_dir.join(format!("{tag}.report.txt")),
        render_text(&report).as_bytes(),
    )?;

    write_provenance(
        config,
        "eval",
        &[
            format!("reports/{tag}.report.json"),
            format!("reports/{tag}.report.txt"),
        ],
    )?;
    Ok(report)
}

/// Paired t-test between two runs on the selection metric.
pub fn cmd_compare(
    config: &ExperimentConfig,
    run_a: &Path,
    run_b: &Path,
) -> Result<TTestResult> {
    fsio::require_exists("run file", run_a)?;
    fsio::require_exists("run file", run_b)?;
    let qrels = QrelSet::load(qrels_path(config)?)?;
    let metric = config.selection_metric()?;
    let threshold = config.eval.relevance_threshold;
    let name = metric.to_string();

    let per_turn = |path: &Path| -> Result<BTreeMap<String, f64>> {
        let run = RunFile::load(path)?;
        let report = evaluate_run(&run, &qrels, &[metric], threshold);
        Ok(report
            .per_turn
            .iter()
            .filter_map(|(turn, values)| values.get(&name).map(|v| (turn.clone(), *v)))
            .collect())
    };
    let a = per_turn(run_a)?;
    let b = per_turn(run_b)?;
    // Compare on the turns both runs cover; uncovered turns would otherwise
    // make the pairing error out on every mismatched run pair.
    let shared: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
    let a_shared: BTreeMap<String, f64> =
        shared.iter().map(|&k| (k.clone(), a[k])).collect();
    let b_shared: BTreeMap<String, f64> =
        shared.iter().map(|&k| (k.clone(), b[k])).collect();
    paired_t_test(&a_shared, &b_shared)
}

/// What `oracle` writes.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub selection: OracleSelection,
    pub stats: PhiStats,
    pub report: MetricReport,
}

/// Per-group means for the oracle run, by difficulty and topic shift.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct GroupReport {
    difficulty: BTreeMap<String, GroupStats>,
    topic_shift: BTreeMap<String, GroupStats>,
}

/// Picks φ* per turn from the existing per-φ runs and writes the oracle
/// artifacts (run, selection, φ distribution, report, group breakdowns).
pub fn cmd_oracle(config: &ExperimentConfig) -> Result<OracleOutcome> {
    let variant = config.variant()?;
    let qrels = QrelSet::load(qrels_path(config)?)?;

    let mut runs_by_phi = BTreeMap::new();
    for &phi in &config.pipeline.phi_values {
        let path = config
            .paths
            .output_dir
            .join("runs")
            .join(format!("{}.run", run_tag(variant, phi)));
        fsio::require_exists("run file", &path)?;
        runs_by_phi.insert(phi, RunFile::load(&path)?);
    }

    let metric = config.selection_metric()?;
    let threshold = config.eval.relevance_threshold;
    let (selection, oracle_run) =
        oracle_select(&runs_by_phi, &qrels, metric, threshold, "oracle")?;
    let stats = phi_distribution(&selection);
    let report = evaluate_run(&oracle_run, &qrels, &config.metrics()?, threshold);

    let dir = config.paths.output_dir.join("oracle");
    fsio::create_dir_all(&dir)?;
    oracle_run.write(&dir.join("oracle.run"))?;
    write_json(&dir.join("selection.json"), &selection)?;
    write_json(&dir.join("phi_stats.json"), &stats)?;
    write_json(&dir.join("oracle.report.json"), &report)?;
    fsio::atomic_write(
        &dir.join("oracle.report.txt"),
        render_text(&report).as_bytes(),
    )?;

    let topic_flags = load_dataset(&config.paths.dataset)
        .map(|convs| topic_shift_groups(&convs))
        .unwrap_or_default();
    let groups = GroupReport {
        difficulty: split_groups(&report, &difficulty_groups(&selection)),
        topic_shift: split_groups(&report, &topic_flags),
    };
    write_json(&dir.join("groups.json"), &groups)?;

    write_provenance(
        config,
        "oracle",
        &[
            "oracle/oracle.run".to_string(),
            "oracle/selection.json".to_string(),
            "oracle/phi_stats.json".to_string(),
            "oracle/oracle.report.json".to_string(),
            "oracle/groups.json".to_string(),
        ],
    )?;
    Ok(OracleOutcome {
        selection,
        stats,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub generated: GenerateOutcome,
    pub runs: Vec<RunOutcome>,
    pub reports: Vec<MetricReport>,
    pub oracle: OracleOutcome,
}

/// Full experiment: generate queries for every φ, run and evaluate each
/// budget, then compute the oracle. Requires the index to exist.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    fsio::require_exists("index", &config.paths.index_dir.join("index.bin"))?;
    let phis = config.pipeline.phi_values.clone();
    let generated = cmd_generate(config, &phis)?;
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &phi in &phis {
        let run = cmd_run(config, phi)?;
        reports.push(cmd_eval(config, Some(&run.run_path))?);
        runs.push(run);
    }
    let oracle = cmd_oracle(config)?;

    let mut artifacts: Vec<String> = runs
        .iter()
        .map(|r| format!("runs/{}.run", r.tag))
        .collect();
    artifacts.push("oracle/oracle.run".to_string());
    write_provenance(config, "sweep", &artifacts)?;
    Ok(SweepOutcome {
        generated,
        runs,
        reports,
        oracle,
    })
}

/// Reads a run manifest back from `output_dir/runs`.
pub fn read_run_manifest(config: &ExperimentConfig, tag: &str) -> Result<RunManifest> {
    read_json(
        &config
            .paths
            .output_dir
            .join("runs")
            .join(format!("{tag}.manifest.json")),
    )
}
