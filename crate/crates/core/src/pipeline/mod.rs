//! End-to-end orchestration: data, doping, sub-model training, cleaner
//! search, relabeling, final and baseline training, evaluation, report.

pub mod artifacts;
mod config;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{self, Model, TrainConfig};
use crate::corpus::{self, BinaryDataset, Corpus, CorpusRole};
use crate::doping::{self, DopingManifest, DopingSchedule};
use crate::ensemble::{evaluate_model, ConsensusConfig, SubModel};
use crate::relabel::{self, IgnorePolicy};
use crate::search::{self, SearchResult};
use crate::synth::{self, SynthConfig};

pub use config::{derive_seed, DataSource, PipelineConfig};
pub use report::{
    report_alpha_sweep, spearman, AlphaSweep, RunProvenance, RunReport, SearchSummary, SweepError,
    SweepRow,
};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data,
    LeakCheck,
    Doping,
    SubModels,
    Search,
    Relabel,
    FinalModel,
    Baseline,
    Evaluation,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Data => "data",
            Stage::LeakCheck => "leak-check",
            Stage::Doping => "doping",
            Stage::SubModels => "sub-models",
            Stage::Search => "search",
            Stage::Relabel => "relabel",
            Stage::FinalModel => "final-model",
            Stage::Baseline => "baseline",
            Stage::Evaluation => "evaluation",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("artifact i/o: {0}")]
    Artifact(String),
    #[error("{count} anchor/test ids overlap training data (e.g. {example:?})")]
    Leak { count: usize, example: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    /// The failing stage, when the error came from one.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Leak { .. } => Some(Stage::LeakCheck),
            _ => None,
        }
    }
}

fn at<E: Into<BoxError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

/// The three corpora a run operates on.
#[derive(Clone, Debug)]
pub struct Corpora {
    pub raw: Corpus,
    pub anchor: Corpus,
    pub test: Corpus,
}

/// Everything a run produced, in memory.
#[derive(Debug)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub corpora: Corpora,
    pub doped: Vec<BinaryDataset>,
    pub sub_models: Vec<SubModel>,
    pub search: SearchResult,
    pub relabeled: BinaryDataset,
    pub final_train: BinaryDataset,
    pub final_model: Model,
    pub naive_train: BinaryDataset,
    pub naive_model: Model,
}

/// Current UTC time, RFC 3339.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Every per-stage seed of a run, derived from the master seed.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSeeds {
    pub synth_raw: u64,
    pub synth_gold: u64,
    pub stratify: u64,
    pub split: u64,
    pub doping: u64,
    pub sub_models: Vec<u64>,
    pub balance: u64,
    pub final_model: u64,
    pub naive_model: u64,
}

impl StageSeeds {
    pub fn derive(master: u64, n_sub_models: usize) -> Self {
        let d = |stage: &str| derive_seed(master, stage, 0);
        StageSeeds {
            synth_raw: d("synth-raw"),
            synth_gold: d("synth-gold"),
            stratify: d("stratify"),
            split: d("split"),
            doping: d("doping"),
            sub_models: (0..n_sub_models as u64)
                .map(|k| derive_seed(master, "sub-model", k))
                .collect(),
            balance: d("balance"),
            final_model: d("final-model"),
            naive_model: d("naive-model"),
        }
    }

    pub fn for_config(config: &PipelineConfig) -> Self {
        Self::derive(config.seed, config.doping.ratios.len())
    }

    pub fn to_map(&self) -> BTreeMap<String, u64> {
        let mut map: BTreeMap<String, u64> = [
            ("synth-raw", self.synth_raw),
            ("synth-gold", self.synth_gold),
            ("stratify", self.stratify),
            ("split", self.split),
            ("doping", self.doping),
            ("balance", self.balance),
            ("final-model", self.final_model),
            ("naive-model", self.naive_model),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (k, s) in self.sub_models.iter().enumerate() {
            map.insert(format!("sub-model-{k}"), *s);
        }
        map
    }
}

/// Builds or loads the raw, anchor, and test corpora.
pub fn prepare_corpora(config: &PipelineConfig) -> Result<Corpora, PipelineError> {
    let seeds = StageSeeds::for_config(config);
    match &config.data {
        DataSource::Files { raw, anchor, test } => {
            let load = |p: &Path, role| Corpus::load(p, role).map_err(at(Stage::Data));
            Ok(Corpora {
                raw: load(raw, CorpusRole::Raw)?,
                anchor: load(anchor, CorpusRole::AnchorValidation)?,
                test: load(test, CorpusRole::Test)?,
            })
        }
        DataSource::Synthetic {
            synth: base,
            raw_pool,
            raw_per_class,
            gold_pool,
            n_val,
            n_test,
        } => {
            let raw_pool = synth::generate(&SynthConfig {
                n_samples: *raw_pool,
                seed: seeds.synth_raw,
                id_prefix: "raw".into(),
                ..base.clone()
            })
            .map_err(at(Stage::Data))?;
            let gold_pool = synth::generate(&SynthConfig {
                n_samples: *gold_pool,
                seed: seeds.synth_gold,
                id_prefix: "gold".into(),
                ..base.clone()
            })
            .map_err(at(Stage::Data))?;
            let raw =
                corpus::stratified_sample(&raw_pool, *raw_per_class, seeds.stratify).map_err(at(Stage::Data))?;
            let (anchor, test) =
                corpus::split_gold(&gold_pool, *n_val, *n_test, seeds.split).map_err(at(Stage::Data))?;
            Ok(Corpora { raw, anchor, test })
        }
    }
}

/// Anchor and test ids must not appear in the raw corpus (every training set
/// is drawn from it) nor in each other.
pub fn check_isolation(corpora: &Corpora) -> Result<(), PipelineError> {
    let raw: HashSet<&str> = corpora.raw.ids();
    let anchor = corpora.anchor.ids();
    let mut leaked: Vec<&str> = corpora
        .anchor
        .iter()
        .chain(corpora.test.iter())
        .map(|s| s.id.as_str())
        .filter(|id| raw.contains(id))
        .collect();
    leaked.extend(corpora.test.iter().map(|s| s.id.as_str()).filter(|id| anchor.contains(id)));
    match leaked.first() {
        None => Ok(()),
        Some(first) => Err(PipelineError::Leak {
            count: leaked.len(),
            example: first.to_string(),
        }),
    }
}

/// Every id in `dataset` must come from `raw`.
pub fn check_drawn_from(raw: &Corpus, dataset: &BinaryDataset) -> Result<(), PipelineError> {
    let ids = raw.ids();
    match dataset.items().iter().find(|it| !ids.contains(it.sample.id.as_str())) {
        None => Ok(()),
        Some(it) => Err(PipelineError::Leak {
            count: 1,
            example: it.sample.id.clone(),
        }),
    }
}

/// Doped training sets plus their composition manifests.
pub fn dope(config: &PipelineConfig, raw: &Corpus) -> Result<(Vec<BinaryDataset>, Vec<DopingManifest>), PipelineError> {
    let seed = StageSeeds::for_config(config).doping;
    let schedule = DopingSchedule {
        seed,
        ..config.doping.clone()
    };
    let doped = doping::build_perturbed_datasets(raw, &schedule).map_err(at(Stage::Doping))?;
    for set in &doped {
        check_drawn_from(raw, set)?;
    }
    let manifests = doped
        .iter()
        .enumerate()
        .map(|(k, d)| DopingManifest::describe(d, k, seed))
        .collect();
    Ok((doped, manifests))
}

/// Trains one sub-model per doped set, in parallel. Seeds come from the
/// master seed and the set index, so results do not depend on scheduling.
pub fn train_sub_models(config: &PipelineConfig, doped: &[BinaryDataset]) -> Result<Vec<SubModel>, PipelineError> {
    let seeds = StageSeeds::derive(config.seed, doped.len());
    doped
        .par_iter()
        .zip(seeds.sub_models.par_iter())
        .map(|(set, &seed)| {
            let train_config = TrainConfig {
                seed,
                ..config.sub_model.clone()
            };
            classifier::train(set, &train_config)
                .map(|run| SubModel::new(run.checkpoints))
                .map_err(at(Stage::SubModels))
        })
        .collect()
}

/// Whether sub-model artifacts must keep every checkpoint for the cleaner to
/// resolve after a reload.
pub fn keeps_all_checkpoints(config: &PipelineConfig) -> bool {
    config.save_all_checkpoints || config.search.include_checkpoints
}

pub fn search_cleaner(
    config: &PipelineConfig,
    models: &[SubModel],
    anchor: &Corpus,
) -> Result<SearchResult, PipelineError> {
    search::grid_search(models, anchor, &config.search).map_err(at(Stage::Search))
}

/// Re-targets a cleaner found over final checkpoints onto reloaded
/// sub-models, which may carry only their final checkpoint.
pub fn resolve_cleaner(config: &PipelineConfig, models: &[SubModel], cleaner: &ConsensusConfig) -> ConsensusConfig {
    if config.search.include_checkpoints {
        cleaner.clone()
    } else {
        ConsensusConfig::final_checkpoints(models, &cleaner.model_indices(), cleaner.strategy)
    }
}

/// The relabeled raw corpus and the balanced training set cut from it.
pub fn relabel_and_balance(
    config: &PipelineConfig,
    models: &[SubModel],
    cleaner: &ConsensusConfig,
    raw: &Corpus,
) -> Result<(BinaryDataset, BinaryDataset), PipelineError> {
    let relabeled = relabel::relabel_corpus(models, cleaner, raw).map_err(at(Stage::Relabel))?;
    let seed = StageSeeds::for_config(config).balance;
    let final_train = relabel::build_final_training_set(&relabeled, seed).map_err(at(Stage::Relabel))?;
    check_drawn_from(raw, &final_train)?;
    Ok((relabeled, final_train))
}

fn train_single(dataset: &BinaryDataset, base: &TrainConfig, seed: u64, stage: Stage) -> Result<Model, PipelineError> {
    let config = TrainConfig {
        seed,
        ..base.clone()
    };
    let run = classifier::train(dataset, &config).map_err(at(stage))?;
    Ok(run.final_model().clone())
}

pub fn train_final_model(config: &PipelineConfig, final_train: &BinaryDataset) -> Result<Model, PipelineError> {
    let seed = StageSeeds::for_config(config).final_model;
    train_single(final_train, &config.final_model, seed, Stage::FinalModel)
}

/// The naive training set and the baseline trained on it, with the final
/// model's hyperparameters.
pub fn train_naive_baseline(config: &PipelineConfig, raw: &Corpus) -> Result<(BinaryDataset, Model), PipelineError> {
    let naive_train = relabel::naive_mapping(raw, config.naive_ignore_policy).map_err(at(Stage::Baseline))?;
    let seed = StageSeeds::for_config(config).naive_model;
    let model = train_single(&naive_train, &config.final_model, seed, Stage::Baseline)?;
    Ok((naive_train, model))
}

/// Inputs to [`assemble_report`], all of which can be reloaded from a run
/// directory.
pub struct ReportInputs<'a> {
    pub corpora: &'a Corpora,
    pub sub_models: &'a [SubModel],
    pub search: &'a SearchResult,
    pub relabeled: &'a BinaryDataset,
    pub final_train: &'a BinaryDataset,
    pub naive_train: &'a BinaryDataset,
    pub final_model: &'a Model,
    pub naive_model: &'a Model,
}

/// Computes every metric of the report from the run's products.
pub fn assemble_report(config: &PipelineConfig, inputs: &ReportInputs, started_at: String) -> Result<RunReport, PipelineError> {
    let alpha_sweep = report_alpha_sweep(inputs.sub_models, &inputs.corpora.anchor).map_err(at(Stage::Report))?;
    let final_test = evaluate_model(inputs.final_model, &inputs.corpora.test).map_err(at(Stage::Evaluation))?;
    let naive_test = evaluate_model(inputs.naive_model, &inputs.corpora.test).map_err(at(Stage::Evaluation))?;
    // The gold-error reference always uses the Ignore→1 reading, whatever
    // policy trains the baseline.
    let raw_mapping =
        relabel::naive_mapping(&inputs.corpora.raw, IgnorePolicy::AsPositive).map_err(at(Stage::Report))?;
    let search = inputs.search;
    Ok(RunReport {
        alpha_sweep,
        search: SearchSummary {
            best: search.best.clone(),
            best_metrics: search.best_metrics,
            objective_value: search.objective_value,
            feasible: search.feasible,
            candidates: search.leaderboard.len(),
        },
        transition: relabel::transition_matrix(inputs.relabeled),
        relabel_gold_error: relabel::gold_error_rate(inputs.relabeled),
        naive_mapping_gold_error: relabel::gold_error_rate(&raw_mapping),
        final_train_size: inputs.final_train.len(),
        naive_train_size: inputs.naive_train.len(),
        final_test,
        naive_test,
        provenance: RunProvenance {
            master_seed: config.seed,
            config_hash: config.hash(),
            seeds: StageSeeds::derive(config.seed, inputs.sub_models.len()).to_map(),
            started_at,
            finished_at: timestamp(),
        },
    })
}

/// Runs every stage. With `out_dir` set, each stage's artifacts are written
/// as soon as it finishes, so a failed run leaves what it got through.
pub fn run_end_to_end(config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let started_at = timestamp();
    let out = config.out_dir.as_deref();
    if let Some(dir) = out {
        artifacts::write_config(dir, config)?;
    }

    let corpora = prepare_corpora(config)?;
    if let Some(dir) = out {
        artifacts::write_corpora(dir, &corpora)?;
    }
    check_isolation(&corpora)?;

    let (doped, manifests) = dope(config, &corpora.raw)?;
    if let Some(dir) = out {
        artifacts::write_doped(dir, &doped, &manifests)?;
    }

    let sub_models = train_sub_models(config, &doped)?;
    if let Some(dir) = out {
        artifacts::save_sub_models(&dir.join(artifacts::MODELS_DIR), &sub_models, keeps_all_checkpoints(config))?;
    }

    let search = search_cleaner(config, &sub_models, &corpora.anchor)?;
    if let Some(dir) = out {
        artifacts::write_search(dir, &search)?;
    }

    let (relabeled, final_train) = relabel_and_balance(config, &sub_models, &search.best, &corpora.raw)?;
    if let Some(dir) = out {
        artifacts::write_relabel(dir, &relabeled, &final_train)?;
    }

    let final_model = train_final_model(config, &final_train)?;
    let (naive_train, naive_model) = train_naive_baseline(config, &corpora.raw)?;
    if let Some(dir) = out {
        artifacts::write_final_models(dir, &final_model, &naive_train, &naive_model)?;
    }

    let report = assemble_report(
        config,
        &ReportInputs {
            corpora: &corpora,
            sub_models: &sub_models,
            search: &search,
            relabeled: &relabeled,
            final_train: &final_train,
            naive_train: &naive_train,
            final_model: &final_model,
            naive_model: &naive_model,
        },
        started_at,
    )?;
    if let Some(dir) = out {
        artifacts::write_report(dir, &report)?;
    }

    Ok(PipelineOutput {
        report,
        corpora,
        doped,
        sub_models,
        search,
        relabeled,
        final_train,
        final_model,
        naive_train,
        naive_model,
    })
}
