//! Command-line entry point for the retrieval framework.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mq4cs::cli::{
    cmd_compare, cmd_eval, cmd_generate, cmd_index, cmd_oracle, cmd_run, cmd_sweep,
};
use mq4cs::config::{load_config, CliOverrides};
use mq4cs::metrics::render_text;

#[derive(Parser)]
#[command(
    name = "mq4cs",
    version,
    about = "Multi-aspect query generation and fusion for conversational passage retrieval"
)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(short, long, global = true, default_value = "config.toml")]
    config: PathBuf,
    /// Override pipeline.phi.
    #[arg(long, global = true)]
    phi: Option<u32>,
    /// Override pipeline.variant (qr, aq, mq4cs, mq4cs_ans, mq4cs_ans_rerank).
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Override eval.selection_metric (e.g. ndcg@3, recall@100, mrr, map).
    #[arg(long, global = true)]
    metric: Option<String>,
    /// Override the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Disable the prompt cache for this invocation.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the BM25 inverted index from the corpus.
    Index,
    /// Generate queries for every turn via the configured LLM.
    Generate {
        /// Budgets to generate for, comma separated; defaults to
        /// pipeline.phi_values.
        #[arg(long, value_delimiter = ',')]
        phis: Option<Vec<u32>>,
    },
    /// Retrieve, rerank, and fuse one run at the configured phi.
    Run,
    /// Score a run file against the qrels and write reports.
    Eval {
        /// Run file to score; defaults to the configured variant and phi.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Pick the best phi per turn from the per-phi runs.
    Oracle,
    /// Generate, run, and evaluate every phi, then compute the oracle.
    Sweep,
    /// Paired t-test between two runs on the selection metric.
    Compare { run_a: PathBuf, run_b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> mq4cs::Result<()> {
    let overrides = CliOverrides {
        phi: cli.phi,
        variant: cli.variant,
        metric: cli.metric,
        workers: cli.workers,
        no_cache: cli.no_cache,
    };
    let config = load_config(&cli.config, &overrides)?;

    match cli.command {
        Command::Index => {
            let summary = cmd_index(&config)?;
            println!(
                "indexed {} passages (avg length {:.2}) -> {}",
                summary.num_docs,
                summary.avg_doc_length,
                config.paths.index_dir.display()
            );
        }
        Command::Generate { phis } => {
            let phis = phis.unwrap_or_else(|| config.pipeline.phi_values.clone());
            let outcome = cmd_generate(&config, &phis)?;
            println!(
                "generated {} query sets ({} failures) -> {}",
                outcome.query_sets,
                outcome.failures,
                outcome.queries_path.display()
            );
        }
        Command::Run => {
            let outcome = cmd_run(&config, config.pipeline.phi)?;
            println!(
                "wrote {} with {} turns -> {}",
                outcome.tag,
                outcome.turns,
                outcome.run_path.display()
            );
        }
        Command::Eval { run } => {
            let report = cmd_eval(&config, run.as_deref())?;
            print!("{}", render_text(&report));
        }
        Command::Oracle => {
            let outcome = cmd_oracle(&config)?;
            println!(
                "oracle over {} turns: mean phi* {:.2}, {:.0}% need more than one query",
                outcome.stats.turns,
                outcome.stats.mean,
                outcome.stats.multi_query_fraction * 100.0
            );
            print!("{}", render_text(&outcome.report));
        }
        Command::Sweep => {
            let outcome = cmd_sweep(&config)?;
            let metric = config.eval.selection_metric.as_str();
            for (run, report) in outcome.runs.iter().zip(&outcome.reports) {
                println!(
                    "{}\t{}\t{:.4}",
                    run.tag,
                    metric,
                    report.means.get(metric).copied().unwrap_or(0.0)
                );
            }
            println!(
                "oracle\t{}\t{:.4}\t(mean phi* {:.2})",
                metric,
                outcome
                    .oracle
                    .report
                    .means
                    .get(metric)
                    .copied()
                    .unwrap_or(0.0),
                outcome.oracle.stats.mean
            );
        }
        Command::Compare { run_a, run_b } => {
            let result = cmd_compare(&config, &run_a, &run_b)?;
            println!(
                "t = {:.6}, df = {}, p = {:.6} over {} paired turns (mean diff {:+.6})",
                result.t, result.df, result.p, result.n, result.mean_diff
            );
        }
    }
    Ok(())
}
