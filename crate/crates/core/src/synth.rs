//! Synthetic feedback corpora with known ground truth.
//!
//! Each sample draws a gold label, then token text whose class signal is
//! controlled by `class_signal_strength`, then a feedback tag through a noisy
//! channel conditioned on gold. Because gold is kept on every sample, every
//! denoising claim downstream can be checked against the truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusRole, Feedback, FeedbackSample, Label};

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("channel row for gold={gold} is invalid: {reason}")]
    DegenerateChannel { gold: u8, reason: String },
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

/// Feedback distribution conditioned on the gold label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseChannel {
    pub p_accept_given_pos: f64,
    pub p_reject_given_pos: f64,
    pub p_ignore_given_pos: f64,
    pub p_accept_given_neg: f64,
    pub p_reject_given_neg: f64,
    pub p_ignore_given_neg: f64,
}

impl Default for NoiseChannel {
    fn default() -> Self {
        default_channel()
    }
}

/// Ignore leans slightly negative and Reject carries some gold-positive
/// contamination, so raw feedback is noisy in both directions.
pub fn default_channel() -> NoiseChannel {
    NoiseChannel {
        p_accept_given_pos: 0.55,
        p_reject_given_pos: 0.10,
        p_ignore_given_pos: 0.35,
        p_accept_given_neg: 0.05,
        p_reject_given_neg: 0.55,
        p_ignore_given_neg: 0.40,
    }
}

impl NoiseChannel {
    /// Probabilities (accept, reject, ignore) for a gold label.
    pub fn row(&self, gold: Label) -> [f64; 3] {
        match gold {
            Label::Retain => [
                self.p_accept_given_pos,
                self.p_reject_given_pos,
                self.p_ignore_given_pos,
            ],
            Label::Intercept => [
                self.p_accept_given_neg,
                self.p_reject_given_neg,
                self.p_ignore_given_neg,
            ],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for gold in [Label::Retain, Label::Intercept] {
            let row = self.row(gold);
            let bad = |reason: String| SynthError::DegenerateChannel {
                gold: gold.as_u8(),
                reason,
            };
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(bad(format!("probability {p} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(bad(format!("probabilities sum to {sum}, not 1")));
            }
        }
        Ok(())
    }

    /// P(gold = 1 | feedback) under a prior `p_positive` on gold.
    pub fn posterior_positive(&self, feedback: Feedback, p_positive: f64) -> f64 {
        let pos = self.row(Label::Retain)[feedback.index()] * p_positive;
        let neg = self.row(Label::Intercept)[feedback.index()] * (1.0 - p_positive);
        pos / (pos + neg)
    }

    fn draw(&self, gold: Label, rng: &mut impl Rng) -> Feedback {
        let row = self.row(gold);
        let u: f64 = rng.gen();
        if u < row[0] {
            Feedback::Accept
        } else if u < row[0] + row[1] {
            Feedback::Reject
        } else {
            Feedback::Ignore
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub p_positive: f64,
    pub channel: NoiseChannel,
    pub vocab_size: usize,
    pub tokens_per_field: usize,
    /// Fraction of tokens drawn from the class-specific half of the vocabulary.
    pub class_signal_strength: f64,
    pub seed: u64,
    /// Prefix for generated sample ids; distinct prefixes keep corpora disjoint.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 10_000,
            p_positive: 0.5,
            channel: default_channel(),
            vocab_size: 20,
            tokens_per_field: 20,
            class_signal_strength: 0.15,
            seed: 0,
            id_prefix: "s".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.channel.validate()?;
        let invalid = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_samples == 0 {
            return invalid("n_samples must be positive");
        }
        if !(self.p_positive > 0.0 && self.p_positive < 1.0) {
            return invalid("p_positive must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.class_signal_strength) {
            return invalid("class_signal_strength must lie in [0, 1]");
        }
        if self.vocab_size < 2 {
            return invalid("vocab_size must be at least 2");
        }
        if self.tokens_per_field == 0 {
            return invalid("tokens_per_field must be positive");
        }
        Ok(())
    }
}

/// Generates a raw corpus. A pure function of `config`.
pub fn generate(config: &SynthConfig) -> Result<Corpus, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let signal = (config.class_signal_strength * config.tokens_per_field as f64).round() as usize;
    let half = config.vocab_size / 2;

    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let gold = if rng.gen_bool(config.p_positive) {
            Label::Retain
        } else {
            Label::Intercept
        };
        let class_range = match gold {
            Label::Retain => 0..half,
            Label::Intercept => half..config.vocab_size,
        };
        let field = |rng: &mut ChaCha8Rng| {
            let tokens: Vec<String> = (0..config.tokens_per_field)
                .map(|t| {
                    let id = if t < signal {
                        rng.gen_range(class_range.clone())
                    } else {
                        rng.gen_range(0..config.vocab_size)
                    };
                    format!("w{id}")
                })
                .collect();
            tokens.join(" ")
        };
        let diff = format!("+ {}", field(&mut rng));
        let comment = field(&mut rng);
        let feedback = config.channel.draw(gold, &mut rng);
        samples.push(FeedbackSample {
            id: format!("{}-{i:06}", config.id_prefix),
            diff,
            comment,
            feedback,
            gold: Some(gold),
        });
    }
    Ok(Corpus::new(samples, CorpusRole::Raw).expect("generated ids are unique"))
}
