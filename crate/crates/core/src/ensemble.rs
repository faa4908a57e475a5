//! Consensus over sub-model subsets, and the interception metrics.
//!
//! Label 0 means "intercept". A true positive is a low-quality comment that
//! got intercepted, so IR is recall on the negative class and FPR is the share
//! of high-quality comments wrongly intercepted.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::classifier::{featurize, ClassifierError, FeatureVector, Model};
use crate::corpus::{Corpus, FeedbackSample, Label};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("consensus member set is empty")]
    EmptyMembers,
    #[error("member refers to model {index}, but only {available} models exist")]
    UnknownModel { index: usize, available: usize },
    #[error("model {model} has no checkpoint {checkpoint}")]
    UnknownCheckpoint { model: usize, checkpoint: usize },
    #[error("model {0} appears twice in the member set")]
    DuplicateMember(usize),
    #[error("{predictions} predictions but {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("cannot compute metrics on an empty set")]
    EmptyInput,
    #[error("gold labels contain no {0:?} samples, so rates are undefined")]
    MissingClass(Label),
    #[error("sample `{0}` has no gold label")]
    MissingGold(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// One trained sub-model and its saved checkpoints, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct SubModel {
    pub checkpoints: Vec<Model>,
}

impl SubModel {
    pub fn new(checkpoints: Vec<Model>) -> Self {
        assert!(!checkpoints.is_empty(), "a sub-model needs at least one checkpoint");
        SubModel { checkpoints }
    }

    pub fn final_index(&self) -> usize {
        self.checkpoints.len() - 1
    }

    pub fn final_model(&self) -> &Model {
        &self.checkpoints[self.final_index()]
    }

    pub fn alpha(&self) -> Option<f64> {
        self.final_model().alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Intercept only when every member intercepts.
    #[serde(rename = "sc")]
    StrictConsensus,
    /// Intercept when strictly more members intercept than retain.
    #[serde(rename = "mv")]
    MajorityVote,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::StrictConsensus, Strategy::MajorityVote];

    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::StrictConsensus => "SC",
            Strategy::MajorityVote => "MV",
        }
    }

    pub fn fuse(self, votes: impl IntoIterator<Item = Label>) -> Label {
        let (mut intercept, mut retain) = (0usize, 0usize);
        for v in votes {
            match v {
                Label::Intercept => intercept += 1,
                Label::Retain => retain += 1,
            }
        }
        let intercepts = match self {
            Strategy::StrictConsensus => intercept > 0 && retain == 0,
            Strategy::MajorityVote => intercept > retain,
        };
        if intercepts {
            Label::Intercept
        } else {
            Label::Retain
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// A sub-model at a specific checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Member {
    pub model: usize,
    pub checkpoint: usize,
}

/// A member subset plus a fusion strategy: one candidate data cleaner.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub members: Vec<Member>,
    pub strategy: Strategy,
}

impl ConsensusConfig {
    /// Members at their final checkpoints.
    pub fn final_checkpoints(models: &[SubModel], indices: &[usize], strategy: Strategy) -> Self {
        ConsensusConfig {
            members: indices
                .iter()
                .map(|&m| Member {
                    model: m,
                    checkpoint: models[m].final_index(),
                })
                .collect(),
            strategy,
        }
    }

    pub fn validate(&self, models: &[SubModel]) -> Result<(), EnsembleError> {
        if self.members.is_empty() {
            return Err(EnsembleError::EmptyMembers);
        }
        let mut seen = HashSet::new();
        for m in &self.members {
            let sub = models.get(m.model).ok_or(EnsembleError::UnknownModel {
                index: m.model,
                available: models.len(),
            })?;
            if m.checkpoint >= sub.checkpoints.len() {
                return Err(EnsembleError::UnknownCheckpoint {
                    model: m.model,
                    checkpoint: m.checkpoint,
                });
            }
            if !seen.insert(m.model) {
                return Err(EnsembleError::DuplicateMember(m.model));
            }
        }
        Ok(())
    }

    pub fn model_indices(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.model).collect()
    }

    pub fn describe(&self) -> String {
        let members: Vec<String> = self
            .members
            .iter()
            .map(|m| format!("M{}@{}", m.model, m.checkpoint))
            .collect();
        format!("{}{{{}}}", self.strategy, members.join(","))
    }
}

fn member_model(models: &[SubModel], m: Member) -> &Model {
    &models[m.model].checkpoints[m.checkpoint]
}

/// Fused label for a single sample.
pub fn consensus_predict(
    models: &[SubModel],
    config: &ConsensusConfig,
    sample: &FeedbackSample,
) -> Result<Label, EnsembleError> {
    config.validate(models)?;
    let votes = config
        .members
        .iter()
        .map(|&m| member_model(models, m).predict(sample).0);
    Ok(config.strategy.fuse(votes))
}

/// Features for a sample list, computed once per distinct model dimension.
pub struct FeatureCache<'a> {
    samples: &'a [Arc<FeedbackSample>],
    by_dimension: HashMap<usize, Vec<FeatureVector>>,
}

impl<'a> FeatureCache<'a> {
    pub fn new(samples: &'a [Arc<FeedbackSample>]) -> Self {
        FeatureCache {
            samples,
            by_dimension: HashMap::new(),
        }
    }

    pub fn get(&mut self, dimension: usize) -> &[FeatureVector] {
        let samples = self.samples;
        self.by_dimension.entry(dimension).or_insert_with(|| {
            samples.par_iter().map(|s| featurize(s, dimension)).collect()
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-sample labels from one model.
pub fn model_votes(model: &Model, features: &[FeatureVector]) -> Result<Vec<Label>, EnsembleError> {
    features
        .iter()
        .map(|x| Ok(model.predict_features(x)?.0))
        .collect()
}

/// Votes of every listed member over the cached samples, keyed by member.
pub fn member_votes(
    models: &[SubModel],
    members: &[Member],
    cache: &mut FeatureCache<'_>,
) -> Result<HashMap<Member, Vec<Label>>, EnsembleError> {
    let mut out = HashMap::with_capacity(members.len());
    for &m in members {
        if out.contains_key(&m) {
            continue;
        }
        let model = member_model(models, m);
        out.insert(m, model_votes(model, cache.get(model.dimension()))?);
    }
    Ok(out)
}

/// Fuses per-member vote columns sample by sample.
pub fn fuse_columns(strategy: Strategy, columns: &[&[Label]]) -> Vec<Label> {
    let n = columns.first().map_or(0, |c| c.len());
    (0..n)
        .map(|i| strategy.fuse(columns.iter().map(|c| c[i])))
        .collect()
}

/// Consensus labels for every sample, in input order.
pub fn consensus_labels(
    models: &[SubModel],
    config: &ConsensusConfig,
    samples: &[Arc<FeedbackSample>],
) -> Result<Vec<Label>, EnsembleError> {
    config.validate(models)?;
    let mut cache = FeatureCache::new(samples);
    let votes = member_votes(models, &config.members, &mut cache)?;
    let columns: Vec<&[Label]> = config.members.iter().map(|m| votes[m].as_slice()).collect();
    Ok(fuse_columns(config.strategy, &columns))
}

pub fn gold_labels(corpus: &Corpus) -> Result<Vec<Label>, EnsembleError> {
    corpus
        .iter()
        .map(|s| s.gold.ok_or_else(|| EnsembleError::MissingGold(s.id.clone())))
        .collect()
}

/// Confusion counts with derived rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub ir: f64,
    pub fpr: f64,
    /// IR/FPR; `f64::INFINITY` when FPR is 0 and IR is positive.
    #[serde(serialize_with = "ser_pie", deserialize_with = "de_pie")]
    pub pie: f64,
}

fn ser_pie<S: Serializer>(pie: &f64, s: S) -> Result<S::Ok, S::Error> {
    if pie.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*pie)
    }
}

fn de_pie<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid pie value `{t}`"))),
    }
}

/// PIE from its two rates; the infinity sentinel marks a perfect-purity cleaner.
pub fn pie(ir: f64, fpr: f64) -> f64 {
    if fpr > 0.0 {
        ir / fpr
    } else if ir > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

impl Metrics {
    /// Requires both gold classes to be present.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Result<Self, EnsembleError> {
        if tp + fn_ == 0 {
            return Err(EnsembleError::MissingClass(Label::Intercept));
        }
        if fp + tn == 0 {
            return Err(EnsembleError::MissingClass(Label::Retain));
        }
        let ir = tp as f64 / (tp + fn_) as f64;
        let fpr = fp as f64 / (fp + tn) as f64;
        Ok(Metrics {
            tp,
            fp,
            fn_,
            tn,
            ir,
            fpr,
            pie: pie(ir, fpr),
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn pie_display(&self) -> String {
        if self.pie.is_infinite() {
            "inf".into()
        } else {
            format!("{:.2}", self.pie)
        }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} fp={} fn={} tn={} ir={:.4} fpr={:.4} pie={}",
            self.tp,
            self.fp,
            self.fn_,
            self.tn,
            self.ir,
            self.fpr,
            self.pie_display()
        )
    }
}

pub fn compute_metrics(predictions: &[Label], gold: &[Label]) -> Result<Metrics, EnsembleError> {
    if predictions.len() != gold.len() {
        return Err(EnsembleError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, g) in predictions.iter().zip(gold) {
        match (p, g) {
            (Label::Intercept, Label::Intercept) => tp += 1,
            (Label::Intercept, Label::Retain) => fp += 1,
            (Label::Retain, Label::Intercept) => fn_ += 1,
            (Label::Retain, Label::Retain) => tn += 1,
        }
    }
    Metrics::from_counts(tp, fp, fn_, tn)
}

/// Consensus metrics of `config` on a gold-labeled corpus.
pub fn evaluate(models: &[SubModel], config: &ConsensusConfig, corpus: &Corpus) -> Result<Metrics, EnsembleError> {
    let gold = gold_labels(corpus)?;
    let predictions = consensus_labels(models, config, corpus.samples())?;
    compute_metrics(&predictions, &gold)
}

/// Metrics of a single model on a gold-labeled corpus.
pub fn evaluate_model(model: &Model, corpus: &Corpus) -> Result<Metrics, EnsembleError> {
    let gold = gold_labels(corpus)?;
    let features: Vec<FeatureVector> = corpus
        .samples()
        .par_iter()
        .map(|s| featurize(s, model.dimension()))
        .collect();
    compute_metrics(&model_votes(model, &features)?, &gold)
}
