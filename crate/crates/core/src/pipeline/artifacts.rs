//! On-disk layout of a pipeline run.
//!
//! ```text
//! <out>/config.toml
//! <out>/corpora/{raw,anchor,test}.jsonl
//! <out>/doped/set_<k>.jsonl, doped/manifest.json
//! <out>/models/sub_<k>/epoch_<e>.bin, models/final.bin, models/naive.bin
//! <out>/search/{leaderboard.txt,result.json,cleaner.json}
//! <out>/relabel/{relabeled.jsonl,transition.txt,transition.json,final_train.jsonl}
//! <out>/naive/naive_train.jsonl
//! <out>/report.{json,txt}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::classifier::Model;
use crate::corpus::{BinaryDataset, Corpus, CorpusRole, Provenance};
use crate::doping::DopingManifest;
use crate::ensemble::SubModel;
use crate::search::SearchResult;

use super::{Corpora, PipelineConfig, PipelineError, RunReport};

pub const CONFIG: &str = "config.toml";
pub const RAW: &str = "corpora/raw.jsonl";
pub const ANCHOR: &str = "corpora/anchor.jsonl";
pub const TEST: &str = "corpora/test.jsonl";
pub const DOPED_DIR: &str = "doped";
pub const DOPING_MANIFEST: &str = "doped/manifest.json";
pub const MODELS_DIR: &str = "models";
pub const FINAL_MODEL: &str = "models/final.bin";
pub const NAIVE_MODEL: &str = "models/naive.bin";
pub const LEADERBOARD_TXT: &str = "search/leaderboard.txt";
pub const SEARCH_RESULT: &str = "search/result.json";
pub const CLEANER: &str = "search/cleaner.json";
pub const RELABELED: &str = "relabel/relabeled.jsonl";
pub const TRANSITION_TXT: &str = "relabel/transition.txt";
pub const TRANSITION_JSON: &str = "relabel/transition.json";
pub const FINAL_TRAIN: &str = "relabel/final_train.jsonl";
pub const NAIVE_TRAIN: &str = "naive/naive_train.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

pub fn doped_set(index: usize) -> String {
    format!("{DOPED_DIR}/set_{index}.jsonl")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Artifact(format!("{}: {e}", path.display()))
}

/// Creates parent directories and returns the full path.
pub fn prepare(root: &Path, rel: &str) -> Result<PathBuf, PipelineError> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(path)
}

pub fn write_text(root: &Path, rel: &str, text: &str) -> Result<(), PipelineError> {
    let path = prepare(root, rel)?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn write_json(root: &Path, rel: &str, value: &impl Serialize) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    write_text(root, rel, &(text + "\n"))
}

fn sub_model_dir(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("sub_{index}"))
}

/// Writes each sub-model's checkpoints as `sub_<k>/epoch_<e>.bin`; with
/// `all == false` only final checkpoints are kept.
pub fn save_sub_models(dir: &Path, models: &[SubModel], all: bool) -> Result<(), PipelineError> {
    for (k, sub) in models.iter().enumerate() {
        let sub_dir = sub_model_dir(dir, k);
        fs::create_dir_all(&sub_dir).map_err(|e| io_err(&sub_dir, e))?;
        let chosen: Vec<&Model> = if all {
            sub.checkpoints.iter().collect()
        } else {
            vec![sub.final_model()]
        };
        for m in chosen {
            let path = sub_dir.join(format!("epoch_{}.bin", m.checkpoint_epoch));
            m.save(&path).map_err(|e| io_err(&path, e))?;
        }
    }
    Ok(())
}

fn numbered(entry: &Path, prefix: &str, suffix: &str) -> Option<usize> {
    entry
        .file_name()?
        .to_str()?
        .strip_prefix(prefix)?
        .strip_suffix(suffix)?
        .parse()
        .ok()
}

/// Reads back what [`save_sub_models`] wrote, ordered by sub-model index and
/// epoch. Indices must be contiguous from 0.
pub fn load_sub_models(dir: &Path) -> Result<Vec<SubModel>, PipelineError> {
    let mut subs: Vec<(usize, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter_map(|p| numbered(&p, "sub_", "").map(|k| (k, p)))
        .collect();
    subs.sort();
    if subs.is_empty() {
        return Err(io_err(dir, "no sub_<k> model directories"));
    }
    let mut out = Vec::with_capacity(subs.len());
    for (expected, (k, path)) in subs.into_iter().enumerate() {
        if k != expected {
            return Err(io_err(dir, format!("sub-model index {expected} missing")));
        }
        let mut epochs: Vec<(usize, PathBuf)> = fs::read_dir(&path)
            .map_err(|e| io_err(&path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| numbered(&p, "epoch_", ".bin").map(|n| (n, p)))
            .collect();
        epochs.sort();
        if epochs.is_empty() {
            return Err(io_err(&path, "no checkpoints"));
        }
        let checkpoints = epochs
            .iter()
            .map(|(_, p)| Model::load(p).map_err(|e| io_err(p, e)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SubModel::new(checkpoints));
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(root: &Path, rel: &str) -> Result<T, PipelineError> {
    let path = root.join(rel);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&path, e))
}

pub fn write_config(root: &Path, config: &PipelineConfig) -> Result<(), PipelineError> {
    write_text(root, CONFIG, &config.to_toml_string())
}

fn save_corpus(root: &Path, rel: &str, corpus: &Corpus) -> Result<(), PipelineError> {
    let path = prepare(root, rel)?;
    corpus.save(&path).map_err(|e| io_err(&path, e))
}

fn save_dataset(root: &Path, rel: &str, dataset: &BinaryDataset) -> Result<(), PipelineError> {
    let path = prepare(root, rel)?;
    dataset.save(&path).map_err(|e| io_err(&path, e))
}

fn load_dataset(root: &Path, rel: &str, provenance: Provenance) -> Result<BinaryDataset, PipelineError> {
    let path = root.join(rel);
    BinaryDataset::load(&path, provenance).map_err(|e| io_err(&path, e))
}

pub fn write_corpora(root: &Path, corpora: &Corpora) -> Result<(), PipelineError> {
    save_corpus(root, RAW, &corpora.raw)?;
    save_corpus(root, ANCHOR, &corpora.anchor)?;
    save_corpus(root, TEST, &corpora.test)
}

pub fn load_corpora(root: &Path) -> Result<Corpora, PipelineError> {
    let load = |rel: &str, role| {
        let path = root.join(rel);
        Corpus::load(&path, role).map_err(|e| io_err(&path, e))
    };
    Ok(Corpora {
        raw: load(RAW, CorpusRole::Raw)?,
        anchor: load(ANCHOR, CorpusRole::AnchorValidation)?,
        test: load(TEST, CorpusRole::Test)?,
    })
}

pub fn write_doped(root: &Path, doped: &[BinaryDataset], manifests: &[DopingManifest]) -> Result<(), PipelineError> {
    for (k, d) in doped.iter().enumerate() {
        save_dataset(root, &doped_set(k), d)?;
    }
    write_json(root, DOPING_MANIFEST, &manifests)
}

/// Doped sets in index order; α comes from the manifest.
pub fn load_doped(root: &Path) -> Result<Vec<BinaryDataset>, PipelineError> {
    let manifests: Vec<DopingManifest> = read_json(root, DOPING_MANIFEST)?;
    manifests
        .iter()
        .map(|m| load_dataset(root, &doped_set(m.index), Provenance::DopedPerturbation { alpha: m.alpha }))
        .collect()
}

pub fn write_search(root: &Path, result: &SearchResult) -> Result<(), PipelineError> {
    write_text(root, LEADERBOARD_TXT, &result.leaderboard_table())?;
    write_json(root, SEARCH_RESULT, result)?;
    write_json(root, CLEANER, &result.best)
}

pub fn load_search(root: &Path) -> Result<SearchResult, PipelineError> {
    read_json(root, SEARCH_RESULT)
}

pub fn write_relabel(root: &Path, relabeled: &BinaryDataset, final_train: &BinaryDataset) -> Result<(), PipelineError> {
    save_dataset(root, RELABELED, relabeled)?;
    let transition = crate::relabel::transition_matrix(relabeled);
    write_text(
        root,
        TRANSITION_TXT,
        &transition.table("Label transitions: original feedback vs relabeled"),
    )?;
    write_json(root, TRANSITION_JSON, &transition)?;
    save_dataset(root, FINAL_TRAIN, final_train)
}

/// The relabeled corpus and the balanced final training set.
pub fn load_relabel(root: &Path) -> Result<(BinaryDataset, BinaryDataset), PipelineError> {
    Ok((
        load_dataset(root, RELABELED, Provenance::RelabeledClean)?,
        load_dataset(root, FINAL_TRAIN, Provenance::RelabeledClean)?,
    ))
}

pub fn write_final_models(
    root: &Path,
    final_model: &Model,
    naive_train: &BinaryDataset,
    naive_model: &Model,
) -> Result<(), PipelineError> {
    for (rel, m) in [(FINAL_MODEL, final_model), (NAIVE_MODEL, naive_model)] {
        let path = prepare(root, rel)?;
        m.save(&path).map_err(|e| io_err(&path, e))?;
    }
    save_dataset(root, NAIVE_TRAIN, naive_train)
}

/// Final model, naive training set, naive model.
pub fn load_final_models(root: &Path) -> Result<(Model, BinaryDataset, Model), PipelineError> {
    let load = |rel: &str| {
        let path = root.join(rel);
        Model::load(&path).map_err(|e| io_err(&path, e))
    };
    Ok((
        load(FINAL_MODEL)?,
        load_dataset(root, NAIVE_TRAIN, Provenance::NaiveMapping)?,
        load(NAIVE_MODEL)?,
    ))
}

pub fn write_report(root: &Path, report: &RunReport) -> Result<(), PipelineError> {
    write_json(root, REPORT_JSON, report)?;
    write_text(root, REPORT_TXT, &report.render())
}

pub fn load_report(root: &Path) -> Result<RunReport, PipelineError> {
    read_json(root, REPORT_JSON)
}
