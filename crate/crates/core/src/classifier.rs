//! Hashed bag-of-words features and an L2-regularized logistic regression
//! trained by mini-batch SGD.
//!
//! Tokens are lowercased alphanumeric runs, tagged `d:` (diff) or `c:`
//! (comment) and hashed with 64-bit FNV-1a into `dimension` buckets. Counts
//! are L2-normalized.
//!
//! The training objective over a batch `B` is
//!
//! ```text
//! L(w, b) = 1/|B| Σ [log(1 + e^z) − y·z] + (l2 / 2)·‖w‖²,   z = w·x + b
//! ```
//!
//! The bias is not regularized.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BinaryDataset, FeedbackSample, Label, Provenance};

const MODEL_MAGIC: &[u8; 4] = b"RLBM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains only label {0}")]
    SingleClass(u8),
    #[error("loss became non-finite in epoch {epoch} (learning rate too high?)")]
    NonFiniteLoss { epoch: usize },
    #[error("feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

/// Sparse feature vector; entries are sorted by index with no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    dimension: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Builds a vector from raw entries, summing duplicate indices.
    pub fn from_entries(dimension: usize, mut entries: Vec<(u32, f64)>) -> Self {
        assert!(entries.iter().all(|&(i, v)| (i as usize) < dimension && v.is_finite()));
        entries.sort_unstable_by_key(|&(i, _)| i);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        FeatureVector {
            dimension,
            entries: merged,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| dense[i as usize] * v).sum()
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn bucket(tag: &str, token: &str, mask: u64) -> u32 {
    let mut h = FnvHasher::default();
    h.write(tag.as_bytes());
    h.write(token.as_bytes());
    (h.finish() & mask) as u32
}

/// Hashed, L2-normalized bag of tagged tokens.
pub fn featurize(sample: &FeedbackSample, dimension: usize) -> FeatureVector {
    assert!(dimension.is_power_of_two(), "dimension must be a power of two");
    let mask = dimension as u64 - 1;
    let mut counts: Vec<u32> = tokens(&sample.diff)
        .map(|t| bucket("d:", &t, mask))
        .chain(tokens(&sample.comment).map(|t| bucket("c:", &t, mask)))
        .collect();
    counts.sort_unstable();

    let mut entries: Vec<(u32, f64)> = Vec::new();
    for idx in counts {
        match entries.last_mut() {
            Some(last) if last.0 == idx => last.1 += 1.0,
            _ => entries.push((idx, 1.0)),
        }
    }
    let norm = entries.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    FeatureVector { dimension, entries }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dimension: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dimension: 1 << 18,
            epochs: 5,
            batch_size: 256,
            learning_rate: 0.1,
            l2: 1e-6,
            seed: 0,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let invalid = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if !self.dimension.is_power_of_two() || self.dimension > u32::MAX as usize {
            return invalid("dimension must be a power of two that fits in 32 bits");
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return invalid("l2 must be non-negative");
        }
        if self.checkpoint_every == 0 {
            return invalid("checkpoint_every must be at least 1");
        }
        Ok(())
    }
}

/// A trained linear classifier snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Ignore mixture ratio of the doped set this model was trained on.
    pub alpha: Option<f64>,
    pub checkpoint_epoch: usize,
    pub config: TrainConfig,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Model {
    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn score_features(&self, x: &FeatureVector) -> Result<f64, ClassifierError> {
        if x.dimension() != self.dimension() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dimension(),
                got: x.dimension(),
            });
        }
        Ok(sigmoid(x.dot(&self.weights) + self.bias))
    }

    /// Label and retain-probability. A score of exactly 0.5 retains.
    pub fn predict_features(&self, x: &FeatureVector) -> Result<(Label, f64), ClassifierError> {
        let score = self.score_features(x)?;
        let label = if score >= 0.5 { Label::Retain } else { Label::Intercept };
        Ok((label, score))
    }

    pub fn predict(&self, sample: &FeedbackSample) -> (Label, f64) {
        self.predict_features(&featurize(sample, self.dimension()))
            .expect("featurized at model dimension")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Binary layout (little-endian):
    /// `"RLBM"` · u32 version · u64 header length · JSON header · f64 × dimension weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            dimension: self.dimension(),
            bias_bits: self.bias.to_bits(),
            alpha_bits: self.alpha.map(f64::to_bits),
            checkpoint_epoch: self.checkpoint_epoch,
            config: self.config.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.weights.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let corrupt = |m: &str| ClassifierError::Corrupt(m.to_string());
        if bytes.len() < 16 {
            return Err(corrupt("file shorter than the fixed preamble"));
        }
        if &bytes[..4] != MODEL_MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::VersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < header_len {
            return Err(corrupt("truncated header"));
        }
        let header: ModelHeader = serde_json::from_slice(&body[..header_len])
            .map_err(|e| ClassifierError::Corrupt(format!("header: {e}")))?;
        let weights = &body[header_len..];
        if weights.len() != 8 * header.dimension {
            return Err(corrupt(&format!(
                "expected {} weight bytes, found {}",
                8 * header.dimension,
                weights.len()
            )));
        }
        let weights: Vec<f64> = weights
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(corrupt("non-finite weight"));
        }
        Ok(Model {
            weights,
            bias: f64::from_bits(header.bias_bits),
            alpha: header.alpha_bits.map(f64::from_bits),
            checkpoint_epoch: header.checkpoint_epoch,
            config: header.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    dimension: usize,
    bias_bits: u64,
    alpha_bits: Option<u64>,
    checkpoint_epoch: usize,
    config: TrainConfig,
}

/// Regularized logistic loss averaged over `batch`.
pub fn objective(weights: &[f64], bias: f64, batch: &[(&FeatureVector, f64)], l2: f64) -> f64 {
    let data: f64 = batch
        .iter()
        .map(|(x, y)| {
            let z = x.dot(weights) + bias;
            softplus(z) - y * z
        })
        .sum();
    let reg: f64 = weights.iter().map(|w| w * w).sum();
    data / batch.len() as f64 + 0.5 * l2 * reg
}

/// Analytic gradient of [`objective`] as (dense weight gradient, bias gradient).
pub fn gradient(weights: &[f64], bias: f64, batch: &[(&FeatureVector, f64)], l2: f64) -> (Vec<f64>, f64) {
    let scale = 1.0 / batch.len() as f64;
    let mut grad: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    let mut grad_bias = 0.0;
    for (x, y) in batch {
        let r = (sigmoid(x.dot(weights) + bias) - y) * scale;
        for &(i, v) in x.entries() {
            grad[i as usize] += r * v;
        }
        grad_bias += r;
    }
    (grad, grad_bias)
}

/// Checkpoints (in epoch order, last one is the final model) and the full
/// training objective after each epoch.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoints: Vec<Model>,
    pub epoch_losses: Vec<f64>,
}

impl TrainRun {
    pub fn final_model(&self) -> &Model {
        self.checkpoints.last().expect("at least one checkpoint")
    }
}

/// Trains on `dataset`; a pure function of its inputs.
pub fn train(dataset: &BinaryDataset, config: &TrainConfig) -> Result<TrainRun, ClassifierError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    for label in [Label::Intercept, Label::Retain] {
        if dataset.count(label) == dataset.len() {
            return Err(ClassifierError::SingleClass(label.as_u8()));
        }
    }
    let alpha = match dataset.provenance() {
        Provenance::DopedPerturbation { alpha } => Some(alpha),
        _ => None,
    };

    let features: Vec<FeatureVector> = dataset
        .items()
        .iter()
        .map(|it| featurize(&it.sample, config.dimension))
        .collect();
    let targets: Vec<f64> = dataset.items().iter().map(|it| it.label.as_f64()).collect();
    let full: Vec<(&FeatureVector, f64)> = features.iter().zip(targets.iter().copied()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut weights = vec![0.0; config.dimension];
    let mut bias = 0.0;
    let mut residuals = Vec::with_capacity(config.batch_size);
    let lr = config.learning_rate;
    let decay = 1.0 - lr * config.l2;

    let mut checkpoints = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let step = lr / batch.len() as f64;
            // residuals use the pre-step weights so this is an exact batch gradient step
            residuals.clear();
            residuals.extend(
                batch
                    .iter()
                    .map(|&i| sigmoid(features[i].dot(&weights) + bias) - targets[i]),
            );
            if config.l2 > 0.0 {
                weights.iter_mut().for_each(|w| *w *= decay);
            }
            for (&i, &r) in batch.iter().zip(&residuals) {
                for &(j, v) in features[i].entries() {
                    weights[j as usize] -= step * r * v;
                }
            }
            bias -= step * residuals.iter().sum::<f64>();
        }

        let loss = objective(&weights, bias, &full, config.l2);
        if !loss.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch });
        }
        epoch_losses.push(loss);
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            checkpoints.push(Model {
                weights: weights.clone(),
                bias,
                alpha,
                checkpoint_epoch: epoch,
                config: config.clone(),
            });
        }
    }
    Ok(TrainRun {
        checkpoints,
        epoch_losses,
    })
}
