//! Relabeling the raw corpus with the selected cleaner, transition reporting,
//! and the balanced final training set.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BinaryDataset, Corpus, Feedback, Label, LabeledSample, Provenance};
use crate::ensemble::{consensus_labels, ConsensusConfig, EnsembleError, SubModel};

#[derive(Debug, Error)]
pub enum RelabelError {
    #[error("raw corpus is empty")]
    EmptyCorpus,
    #[error("relabeled data contains only label {0}; the cleaner is degenerate")]
    SingleLabel(u8),
    #[error("naive mapping with ignore policy {0:?} produced no samples")]
    EmptyMapping(IgnorePolicy),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// Every raw sample receives the cleaner's consensus label, in input order.
pub fn relabel_corpus(
    models: &[SubModel],
    cleaner: &ConsensusConfig,
    raw: &Corpus,
) -> Result<BinaryDataset, RelabelError> {
    if raw.is_empty() {
        return Err(RelabelError::EmptyCorpus);
    }
    let labels = consensus_labels(models, cleaner, raw.samples())?;
    let items = raw
        .samples()
        .iter()
        .zip(labels)
        .map(|(s, label)| LabeledSample {
            sample: s.clone(),
            label,
        })
        .collect();
    Ok(BinaryDataset::new(items, Provenance::RelabeledClean))
}

/// Origin feedback × new label counts. Rows follow [`Feedback::ALL`], columns
/// are (intercept, retain).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[usize; 2]; 3],
}

impl TransitionMatrix {
    pub fn from_counts(counts: [[usize; 2]; 3]) -> Self {
        TransitionMatrix { counts }
    }

    pub fn row_total(&self, origin: Feedback) -> usize {
        self.counts[origin.index()].iter().sum()
    }

    pub fn total(&self) -> usize {
        Feedback::ALL.iter().map(|&f| self.row_total(f)).sum()
    }

    pub fn count(&self, origin: Feedback, label: Label) -> usize {
        self.counts[origin.index()][label.as_u8() as usize]
    }

    /// Row-normalized percentages; an empty row stays at zero.
    pub fn percentages(&self) -> [[f64; 2]; 3] {
        self.counts.map(|row| {
            let total = (row[0] + row[1]) as f64;
            if total == 0.0 {
                [0.0, 0.0]
            } else {
                row.map(|c| 100.0 * c as f64 / total)
            }
        })
    }

    pub fn table(&self, title: &str) -> String {
        let pct = self.percentages();
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let _ = writeln!(out, "{:<8} {:>20} {:>20}", "Origin", "Negative Label", "Positive Label");
        for f in Feedback::ALL {
            let r = f.index();
            let cell = |c: usize, p: f64| format!("{c} ({p:.2}%)");
            let name = match f {
                Feedback::Accept => "Accept",
                Feedback::Reject => "Reject",
                Feedback::Ignore => "Ignore",
            };
            let _ = writeln!(
                out,
                "{:<8} {:>20} {:>20}",
                name,
                cell(self.counts[r][0], pct[r][0]),
                cell(self.counts[r][1], pct[r][1])
            );
        }
        out
    }
}

pub fn transition_matrix(relabeled: &BinaryDataset) -> TransitionMatrix {
    let mut counts = [[0usize; 2]; 3];
    for it in relabeled.items() {
        counts[it.sample.feedback.index()][it.label.as_u8() as usize] += 1;
    }
    TransitionMatrix { counts }
}

/// Undersamples the majority label to exact 1:1 balance. Kept items retain
/// their input order.
pub fn build_final_training_set(relabeled: &BinaryDataset, seed: u64) -> Result<BinaryDataset, RelabelError> {
    let mut by_label: [Vec<usize>; 2] = Default::default();
    for (i, it) in relabeled.items().iter().enumerate() {
        by_label[it.label.as_u8() as usize].push(i);
    }
    if by_label[0].is_empty() {
        return Err(RelabelError::SingleLabel(1));
    }
    if by_label[1].is_empty() {
        return Err(RelabelError::SingleLabel(0));
    }
    let n = by_label[0].len().min(by_label[1].len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::with_capacity(2 * n);
    for pool in &by_label {
        if pool.len() == n {
            keep.extend_from_slice(pool);
        } else {
            keep.extend(index::sample(&mut rng, pool.len(), n).into_iter().map(|j| pool[j]));
        }
    }
    keep.sort_unstable();
    let items = keep.into_iter().map(|i| relabeled.items()[i].clone()).collect();
    Ok(BinaryDataset::new(items, relabeled.provenance()))
}

/// How the naive baseline labels Ignore feedback.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgnorePolicy {
    #[default]
    Exclude,
    AsPositive,
    AsNegative,
}

/// Accept → 1, Reject → 0, Ignore per `policy`.
pub fn naive_mapping(raw: &Corpus, policy: IgnorePolicy) -> Result<BinaryDataset, RelabelError> {
    if raw.is_empty() {
        return Err(RelabelError::EmptyCorpus);
    }
    let items: Vec<LabeledSample> = raw
        .samples()
        .iter()
        .filter_map(|s| {
            let label = match (s.feedback, policy) {
                (Feedback::Accept, _) => Label::Retain,
                (Feedback::Reject, _) => Label::Intercept,
                (Feedback::Ignore, IgnorePolicy::Exclude) => return None,
                (Feedback::Ignore, IgnorePolicy::AsPositive) => Label::Retain,
                (Feedback::Ignore, IgnorePolicy::AsNegative) => Label::Intercept,
            };
            Some(LabeledSample {
                sample: s.clone(),
                label,
            })
        })
        .collect();
    if items.is_empty() {
        return Err(RelabelError::EmptyMapping(policy));
    }
    Ok(BinaryDataset::new(items, Provenance::NaiveMapping))
}

/// Fraction of gold-labeled items whose assigned label disagrees with gold;
/// `None` when no item carries gold.
pub fn gold_error_rate(dataset: &BinaryDataset) -> Option<f64> {
    let (wrong, total) = dataset
        .items()
        .iter()
        .filter_map(|it| it.sample.gold.map(|g| g != it.label))
        .fold((0usize, 0usize), |(w, t), bad| (w + bad as usize, t + 1));
    (total > 0).then(|| wrong as f64 / total as f64)
}
