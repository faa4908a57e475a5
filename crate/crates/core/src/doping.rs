//! Noise-doped training sets.
//!
//! Every set pairs `n` Reject samples (label 0) with `n` positives, of which a
//! fraction α are Ignore samples and the rest Accept samples. Raising α drags
//! ambiguous samples into the positive class and moves the learned boundary
//! toward retaining.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BinaryDataset, Corpus, Feedback, Label, LabeledSample, Provenance};

/// Cap on negatives per doped set when the schedule leaves it unset.
pub const DEFAULT_MAX_NEGATIVES: usize = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum DopingError {
    #[error("invalid doping schedule: {0}")]
    InvalidSchedule(String),
    #[error("not enough {class} samples for alpha={alpha}: need {needed}, have {available} (short by {shortfall})")]
    Insufficient {
        class: Feedback,
        alpha: f64,
        needed: usize,
        available: usize,
        shortfall: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DopingSchedule {
    /// Ignore mixture ratios, strictly increasing, each in [0, 1).
    pub ratios: Vec<f64>,
    /// Negatives (and positives) per set; `None` means
    /// `min(available rejects, DEFAULT_MAX_NEGATIVES)`.
    pub n_negatives_per_set: Option<usize>,
    pub seed: u64,
}

impl Default for DopingSchedule {
    fn default() -> Self {
        DopingSchedule {
            ratios: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            n_negatives_per_set: None,
            seed: 0,
        }
    }
}

impl DopingSchedule {
    pub fn validate(&self) -> Result<(), DopingError> {
        let invalid = |m: String| Err(DopingError::InvalidSchedule(m));
        if self.ratios.is_empty() {
            return invalid("at least one ratio is required".into());
        }
        if let Some(a) = self.ratios.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return invalid(format!("ratio {a} outside [0, 1)"));
        }
        if self.ratios.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("ratios must be strictly increasing".into());
        }
        if self.n_negatives_per_set == Some(0) {
            return invalid("n_negatives_per_set must be positive".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }
}

/// Number of Ignore positives in a set of `n` positives: α·n rounded to
/// nearest, ties up.
pub fn ignore_count(alpha: f64, n: usize) -> usize {
    (alpha * n as f64 + 0.5).floor() as usize
}

/// Per-set composition written next to each doped dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DopingManifest {
    pub index: usize,
    pub alpha: f64,
    pub negatives: usize,
    pub accept_positives: usize,
    pub ignore_positives: usize,
    pub seed: u64,
}

impl DopingManifest {
    pub fn describe(dataset: &BinaryDataset, index: usize, seed: u64) -> Self {
        let alpha = match dataset.provenance() {
            Provenance::DopedPerturbation { alpha } => alpha,
            _ => f64::NAN,
        };
        let count = |label: Label, feedback: Feedback| {
            dataset
                .items()
                .iter()
                .filter(|it| it.label == label && it.sample.feedback == feedback)
                .count()
        };
        DopingManifest {
            index,
            alpha,
            negatives: dataset.count(Label::Intercept),
            accept_positives: count(Label::Retain, Feedback::Accept),
            ignore_positives: count(Label::Retain, Feedback::Ignore),
            seed,
        }
    }
}

/// Builds one balanced dataset per ratio in `schedule`. Sets are sampled
/// independently (each from its own RNG stream), so they may overlap.
pub fn build_perturbed_datasets(
    corpus: &Corpus,
    schedule: &DopingSchedule,
) -> Result<Vec<BinaryDataset>, DopingError> {
    schedule.validate()?;
    let mut pools: [Vec<usize>; 3] = Default::default();
    for (i, s) in corpus.samples().iter().enumerate() {
        pools[s.feedback.index()].push(i);
    }
    let rejects = pools[Feedback::Reject.index()].len();
    let n = schedule
        .n_negatives_per_set
        .unwrap_or_else(|| rejects.min(DEFAULT_MAX_NEGATIVES));

    let check = |class: Feedback, alpha: f64, needed: usize| {
        let available = pools[class.index()].len();
        if available < needed {
            Err(DopingError::Insufficient {
                class,
                alpha,
                needed,
                available,
                shortfall: needed - available,
            })
        } else {
            Ok(())
        }
    };
    if n == 0 {
        // no rejects at all: every set would be empty
        return check(Feedback::Reject, schedule.ratios[0], 1).map(|_| Vec::new());
    }
    for &alpha in &schedule.ratios {
        let ignores = ignore_count(alpha, n);
        check(Feedback::Reject, alpha, n)?;
        check(Feedback::Accept, alpha, n - ignores)?;
        check(Feedback::Ignore, alpha, ignores)?;
    }

    let datasets = schedule
        .ratios
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
            rng.set_stream(k as u64);
            let ignores = ignore_count(alpha, n);
            let mut picked: Vec<(usize, Label)> = Vec::with_capacity(2 * n);
            for (class, count, label) in [
                (Feedback::Reject, n, Label::Intercept),
                (Feedback::Accept, n - ignores, Label::Retain),
                (Feedback::Ignore, ignores, Label::Retain),
            ] {
                let pool = &pools[class.index()];
                picked.extend(
                    index::sample(&mut rng, pool.len(), count)
                        .into_iter()
                        .map(|j| (pool[j], label)),
                );
            }
            picked.sort_unstable_by_key(|&(i, _)| i);
            let items = picked
                .into_iter()
                .map(|(i, label)| LabeledSample {
                    sample: corpus.samples()[i].clone(),
                    label,
                })
                .collect();
            BinaryDataset::new(items, Provenance::DopedPerturbation { alpha })
        })
        .collect();
    Ok(datasets)
}
