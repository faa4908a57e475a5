//! Exhaustive constrained search for the best data cleaner.
//!
//! Every non-empty member subset is paired with every candidate strategy and
//! scored by `IR / (FPR + ε)` on the anchor set. Only candidates with
//! `IR ≥ γ` are eligible.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label};
use crate::ensemble::{
    compute_metrics, fuse_columns, gold_labels, member_votes, ConsensusConfig, EnsembleError,
    FeatureCache, Member, Metrics, Strategy, SubModel,
};

/// Hard cap on evaluated candidates; the search is exhaustive by design.
pub const MAX_CANDIDATES: usize = 4_000_000;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no models to search over")]
    NoModels,
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("search space has {0} candidates, more than the supported {MAX_CANDIDATES}")]
    TooManyCandidates(u128),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Minimum IR a candidate must reach.
    pub gamma: f64,
    /// Smoothing added to FPR in the objective.
    pub epsilon: f64,
    /// Search over every checkpoint of every member, not just final ones.
    pub include_checkpoints: bool,
    pub strategies: Vec<Strategy>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            gamma: 0.40,
            epsilon: 1e-4,
            include_checkpoints: false,
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SearchError::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(SearchError::InvalidConfig("epsilon must be positive".into()));
        }
        if self.strategies.is_empty() {
            return Err(SearchError::InvalidConfig("at least one strategy is required".into()));
        }
        Ok(())
    }

    pub fn objective(&self, metrics: &Metrics) -> f64 {
        metrics.ir / (metrics.fpr + self.epsilon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: ConsensusConfig,
    pub metrics: Metrics,
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ConsensusConfig,
    pub best_metrics: Metrics,
    pub objective_value: f64,
    /// False when no candidate met γ; `best` is then the max-IR candidate.
    pub feasible: bool,
    /// Every candidate, best first.
    pub leaderboard: Vec<Candidate>,
}

/// Tie-break chain after the primary key: higher IR, fewer members,
/// lexicographically smaller member list, SC before MV.
fn tie_break(a: &Candidate, b: &Candidate) -> Ordering {
    b.metrics
        .ir
        .total_cmp(&a.metrics.ir)
        .then_with(|| a.config.members.len().cmp(&b.config.members.len()))
        .then_with(|| a.config.members.cmp(&b.config.members))
        .then_with(|| a.config.strategy.cmp(&b.config.strategy))
}

/// Leaderboard order: objective descending, then the tie-break chain.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.objective.total_cmp(&a.objective).then_with(|| tie_break(a, b))
}

/// Every non-empty subset of `0..k`, as ascending index lists, in bitmask order.
pub fn subsets(k: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u64..(1u64 << k)).map(move |mask| (0..k).filter(|i| mask & (1 << i) != 0).collect())
}

fn member_choices(models: &[SubModel], subset: &[usize], include_checkpoints: bool) -> Vec<Vec<Member>> {
    if !include_checkpoints {
        return vec![subset
            .iter()
            .map(|&m| Member {
                model: m,
                checkpoint: models[m].final_index(),
            })
            .collect()];
    }
    let mut out: Vec<Vec<Member>> = vec![Vec::new()];
    for &m in subset {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..models[m].checkpoints.len()).map(move |c| {
                    let mut next = prefix.clone();
                    next.push(Member { model: m, checkpoint: c });
                    next
                })
            })
            .collect();
    }
    out
}

fn space_size(models: &[SubModel], config: &SearchConfig) -> u128 {
    let per_model: Vec<u128> = models
        .iter()
        .map(|m| if config.include_checkpoints { m.checkpoints.len() as u128 } else { 1 })
        .collect();
    // Π(1 + c_i) − 1 member assignments
    let assignments = per_model.iter().fold(1u128, |acc, &c| acc.saturating_mul(1 + c)) - 1;
    assignments.saturating_mul(config.strategies.len() as u128)
}

pub fn grid_search(models: &[SubModel], val: &Corpus, config: &SearchConfig) -> Result<SearchResult, SearchError> {
    config.validate()?;
    if models.is_empty() {
        return Err(SearchError::NoModels);
    }
    let size = space_size(models, config);
    if models.len() >= 64 || size > MAX_CANDIDATES as u128 {
        return Err(SearchError::TooManyCandidates(size));
    }
    let gold = gold_labels(val)?;

    let all_members: Vec<Member> = models
        .iter()
        .enumerate()
        .flat_map(|(i, m)| {
            let range = if config.include_checkpoints { 0..m.checkpoints.len() } else { m.final_index()..m.final_index() + 1 };
            range.map(move |c| Member { model: i, checkpoint: c })
        })
        .collect();
    let mut cache = FeatureCache::new(val.samples());
    let votes = member_votes(models, &all_members, &mut cache)?;

    let mut configs = Vec::new();
    for subset in subsets(models.len()) {
        for members in member_choices(models, &subset, config.include_checkpoints) {
            for &strategy in &config.strategies {
                configs.push(ConsensusConfig {
                    members: members.clone(),
                    strategy,
                });
            }
        }
    }

    let mut leaderboard = configs
        .into_par_iter()
        .map(|cfg| {
            let columns: Vec<&[Label]> = cfg.members.iter().map(|m| votes[m].as_slice()).collect();
            let predictions = fuse_columns(cfg.strategy, &columns);
            let metrics = compute_metrics(&predictions, &gold)?;
            Ok(Candidate {
                objective: config.objective(&metrics),
                feasible: metrics.ir >= config.gamma,
                config: cfg,
                metrics,
            })
        })
        .collect::<Result<Vec<_>, EnsembleError>>()?;
    leaderboard.sort_by(rank);

    let (best, feasible) = match leaderboard.iter().find(|c| c.feasible) {
        Some(c) => (c.clone(), true),
        None => {
            let fallback = leaderboard
                .iter()
                .min_by(|a, b| {
                    b.metrics
                        .ir
                        .total_cmp(&a.metrics.ir)
                        .then_with(|| rank(a, b))
                })
                .expect("leaderboard is non-empty");
            (fallback.clone(), false)
        }
    };
    Ok(SearchResult {
        best: best.config,
        best_metrics: best.metrics,
        objective_value: best.objective,
        feasible,
        leaderboard,
    })
}

impl SearchResult {
    /// Aligned text table of the leaderboard.
    pub fn leaderboard_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>5}  {:<28} {:>8} {:>8} {:>8} {:>12}  feasible",
            "rank", "cleaner", "IR", "FPR", "PIE", "objective"
        );
        for (i, c) in self.leaderboard.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>5}  {:<28} {:>8.4} {:>8.4} {:>8} {:>12.4}  {}",
                i + 1,
                c.config.describe(),
                c.metrics.ir,
                c.metrics.fpr,
                c.metrics.pie_display(),
                c.objective,
                if c.feasible { "yes" } else { "no" }
            );
        }
        out
    }
}
