use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use relabel_core::pipeline::{self, artifacts, DataSource, PipelineConfig, PipelineError, ReportInputs};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

/// Consensus relabeling of noisy Accept/Reject/Ignore review feedback.
#[derive(Parser, Debug)]
#[command(name = "relabel", version)]
struct Cli {
    /// Pipeline config (TOML). Defaults to <out>/config.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for artifacts; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic raw, anchor, and test corpora.
    Synth,
    /// Build the noise-doped training sets from the raw corpus.
    Dope,
    /// Train sub-models on the doped sets, or with --final the final model
    /// and the naive baseline.
    Train {
        #[arg(long)]
        r#final: bool,
    },
    /// Grid-search the cleaner on the anchor set.
    Search,
    /// Relabel the raw corpus with the selected cleaner and build the
    /// balanced training set.
    Relabel,
    /// Recompute every report metric from the run directory.
    Evaluate,
    /// Run every stage end to end.
    Run,
    /// Print a finished run's report.
    Report {
        /// Emit the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Failure { code: EXIT_USAGE, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: EXIT_DATA, error }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let stored = cli.out.as_ref().map(|o| o.join(artifacts::CONFIG)).filter(|p| p.exists());
    let mut config = match cli.config.as_ref().or(stored.as_ref()) {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(config: &PipelineConfig) -> Result<&Path, Failure> {
    config
        .out_dir
        .as_deref()
        .ok_or_else(|| Failure::usage(anyhow!("this command needs a run directory (--out or out_dir in the config)")))
}

fn infeasible_exit(feasible: bool) -> u8 {
    if feasible {
        0
    } else {
        eprintln!("warning: no cleaner reached the minimum intercept rate; the max-IR fallback was used");
        EXIT_INFEASIBLE
    }
}

fn execute(cli: &Cli) -> Result<u8, Failure> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth => {
            let dir = out_dir(&config)?;
            if !matches!(config.data, DataSource::Synthetic { .. }) {
                return Err(Failure::usage(anyhow!("synth needs a synthetic data source in the config")));
            }
            let corpora = pipeline::prepare_corpora(&config)?;
            pipeline::check_isolation(&corpora)?;
            artifacts::write_config(dir, &config)?;
            artifacts::write_corpora(dir, &corpora)?;
            let [a, r, i] = corpora.raw.feedback_counts();
            println!(
                "raw {} (accept {a}, reject {r}, ignore {i}), anchor {}, test {}",
                corpora.raw.len(),
                corpora.anchor.len(),
                corpora.test.len()
            );
        }
        Command::Dope => {
            let dir = out_dir(&config)?;
            let corpora = artifacts::load_corpora(dir)?;
            let (doped, manifests) = pipeline::dope(&config, &corpora.raw)?;
            artifacts::write_doped(dir, &doped, &manifests)?;
            for m in &manifests {
                println!(
                    "set {} alpha={:.2} negatives={} accept={} ignore={}",
                    m.index, m.alpha, m.negatives, m.accept_positives, m.ignore_positives
                );
            }
        }
        Command::Train { r#final: false } => {
            let dir = out_dir(&config)?;
            let doped = artifacts::load_doped(dir)?;
            let models = pipeline::train_sub_models(&config, &doped)?;
            artifacts::save_sub_models(
                &dir.join(artifacts::MODELS_DIR),
                &models,
                pipeline::keeps_all_checkpoints(&config),
            )?;
            for (k, m) in models.iter().enumerate() {
                println!("sub-model {k} alpha={:?} checkpoints={}", m.alpha(), m.checkpoints.len());
            }
        }
        Command::Train { r#final: true } => {
            let dir = out_dir(&config)?;
            let corpora = artifacts::load_corpora(dir)?;
            let (_, final_train) = artifacts::load_relabel(dir)?;
            let final_model = pipeline::train_final_model(&config, &final_train)?;
            let (naive_train, naive_model) = pipeline::train_naive_baseline(&config, &corpora.raw)?;
            artifacts::write_final_models(dir, &final_model, &naive_train, &naive_model)?;
            println!(
                "final model on {} samples, naive baseline on {} samples",
                final_train.len(),
                naive_train.len()
            );
        }
        Command::Search => {
            let dir = out_dir(&config)?;
            let corpora = artifacts::load_corpora(dir)?;
            let models = artifacts::load_sub_models(&dir.join(artifacts::MODELS_DIR))?;
            let result = pipeline::search_cleaner(&config, &models, &corpora.anchor)?;
            artifacts::write_search(dir, &result)?;
            println!(
                "best {} IR={:.4} FPR={:.4} PIE={} feasible={}",
                result.best.describe(),
                result.best_metrics.ir,
                result.best_metrics.fpr,
                result.best_metrics.pie_display(),
                result.feasible
            );
            return Ok(infeasible_exit(result.feasible));
        }
        Command::Relabel => {
            let dir = out_dir(&config)?;
            let corpora = artifacts::load_corpora(dir)?;
            let models = artifacts::load_sub_models(&dir.join(artifacts::MODELS_DIR))?;
            let search = artifacts::load_search(dir)?;
            let cleaner = pipeline::resolve_cleaner(&config, &models, &search.best);
            let (relabeled, final_train) = pipeline::relabel_and_balance(&config, &models, &cleaner, &corpora.raw)?;
            artifacts::write_relabel(dir, &relabeled, &final_train)?;
            print!(
                "{}",
                relabel_core::relabel::transition_matrix(&relabeled).table("Label transitions")
            );
            println!("balanced training set: {} samples", final_train.len());
        }
        Command::Evaluate => {
            let dir = out_dir(&config)?;
            let started_at = pipeline::timestamp();
            let corpora = artifacts::load_corpora(dir)?;
            let models = artifacts::load_sub_models(&dir.join(artifacts::MODELS_DIR))?;
            let search = artifacts::load_search(dir)?;
            let (relabeled, final_train) = artifacts::load_relabel(dir)?;
            let (final_model, naive_train, naive_model) = artifacts::load_final_models(dir)?;
            let report = pipeline::assemble_report(
                &config,
                &ReportInputs {
                    corpora: &corpora,
                    sub_models: &models,
                    search: &search,
                    relabeled: &relabeled,
                    final_train: &final_train,
                    naive_train: &naive_train,
                    final_model: &final_model,
                    naive_model: &naive_model,
                },
                started_at,
            )?;
            artifacts::write_report(dir, &report)?;
            print!("{}", report.render());
        }
        Command::Run => {
            let output = pipeline::run_end_to_end(&config)?;
            print!("{}", output.report.render());
            return Ok(infeasible_exit(output.report.search.feasible));
        }
        Command::Report { json } => {
            let dir = out_dir(&config)?;
            if *json {
                let path = dir.join(artifacts::REPORT_JSON);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                print!("{text}");
            } else {
                print!("{}", artifacts::load_report(dir)?.render());
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
