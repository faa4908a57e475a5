#![allow(dead_code)]

use rand::Rng;
use relabel_core::classifier::{Model, TrainConfig};
use relabel_core::corpus::{Corpus, CorpusRole, Feedback, FeedbackSample, Label};
use relabel_core::ensemble::SubModel;
use relabel_core::pipeline::{DataSource, PipelineConfig};
use relabel_core::synth::SynthConfig;

pub const SMALL_DIM: usize = 64;

pub fn random_model(rng: &mut impl Rng, dimension: usize, epoch: usize) -> Model {
    Model {
        weights: (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        bias: rng.gen_range(-0.3..0.3),
        alpha: None,
        checkpoint_epoch: epoch,
        config: TrainConfig {
            dimension,
            ..Default::default()
        },
    }
}

pub fn random_sub_model(rng: &mut impl Rng, dimension: usize, checkpoints: usize) -> SubModel {
    SubModel::new((1..=checkpoints).map(|e| random_model(rng, dimension, e)).collect())
}

fn random_text(rng: &mut impl Rng, len: usize) -> String {
    (0..len)
        .map(|_| format!("t{}", rng.gen_range(0..40)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random gold-labeled corpus with both gold classes present.
pub fn random_gold_corpus(rng: &mut impl Rng, n: usize) -> Corpus {
    assert!(n >= 2);
    let samples = (0..n)
        .map(|i| {
            let gold = match i {
                0 => Label::Intercept,
                1 => Label::Retain,
                _ if rng.gen_bool(0.5) => Label::Retain,
                _ => Label::Intercept,
            };
            FeedbackSample {
                id: format!("g{i}"),
                diff: random_text(rng, 6),
                comment: random_text(rng, 6),
                feedback: Feedback::ALL[rng.gen_range(0..3)],
                gold: Some(gold),
            }
        })
        .collect();
    Corpus::new(samples, CorpusRole::AnchorValidation).unwrap()
}

/// A scaled-down synthetic run that still exercises every stage.
pub fn small_config(seed: u64) -> PipelineConfig {
    let mut config = PipelineConfig {
        seed,
        data: DataSource::Synthetic {
            synth: SynthConfig::default(),
            raw_pool: 3_000,
            raw_per_class: 600,
            gold_pool: 800,
            n_val: 100,
            n_test: 200,
        },
        ..Default::default()
    };
    config.sub_model.dimension = 1 << 12;
    config.final_model.dimension = 1 << 12;
    config
}

/// Relative error between the analytic directional derivative of the
/// training objective and a central difference, at a random point along a
/// random unit direction over (weights, bias).
pub fn gradient_probe(rng: &mut impl Rng) -> f64 {
    use relabel_core::classifier::{gradient, objective, FeatureVector};

    let dim = 32;
    let n = rng.gen_range(1..=24);
    let xs: Vec<FeatureVector> = (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=8);
            let entries = (0..k)
                .map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(-2.0..2.0)))
                .collect();
            FeatureVector::from_entries(dim, entries)
        })
        .collect();
    let batch: Vec<(&FeatureVector, f64)> = xs
        .iter()
        .map(|x| (x, if rng.gen_bool(0.5) { 1.0 } else { 0.0 }))
        .collect();
    let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let b: f64 = rng.gen_range(-1.0..1.0);
    let l2 = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..0.1) };

    let mut dir: Vec<f64> = (0..=dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| *d /= norm);

    let (gw, gb) = gradient(&w, b, &batch, l2);
    let analytic: f64 = gw.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>() + gb * dir[dim];

    let h = 1e-5;
    let at = |t: f64| {
        let wt: Vec<f64> = w.iter().zip(&dir).map(|(wi, d)| wi + t * d).collect();
        objective(&wt, b + t * dir[dim], &batch, l2)
    };
    let numeric = (at(h) - at(-h)) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Independent brute-force cleaner search. Returns the winning
/// `(model, checkpoint)` list, the strategy, and whether γ was met.
pub fn brute_force_search(
    models: &[SubModel],
    val: &Corpus,
    gamma: f64,
    epsilon: f64,
    include_checkpoints: bool,
) -> (Vec<(usize, usize)>, relabel_core::ensemble::Strategy, bool) {
    use relabel_core::ensemble::Strategy;
    use std::cmp::Ordering;

    let gold: Vec<bool> = val.iter().map(|s| s.gold.unwrap() == Label::Intercept).collect();
    // intercepts[m][c][i]: does checkpoint c of model m intercept sample i?
    let intercepts: Vec<Vec<Vec<bool>>> = models
        .iter()
        .map(|sub| {
            sub.checkpoints
                .iter()
                .map(|m| {
                    val.iter()
                        .map(|s| m.predict(s).0 == Label::Intercept)
                        .collect()
                })
                .collect()
        })
        .collect();

    struct Cand {
        members: Vec<(usize, usize)>,
        sc: bool,
        ir: f64,
        objective: f64,
    }
    let mut cands = Vec::new();
    let k = models.len();
    let mut stack: Vec<(usize, Vec<(usize, usize)>)> = vec![(0, Vec::new())];
    while let Some((next, members)) = stack.pop() {
        if next == k {
            if members.is_empty() {
                continue;
            }
            for sc in [true, false] {
                let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
                for (i, &neg) in gold.iter().enumerate() {
                    let votes = members.iter().filter(|&&(m, c)| intercepts[m][c][i]).count();
                    let intercept = if sc { votes == members.len() } else { 2 * votes > members.len() };
                    match (intercept, neg) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => tn += 1,
                    }
                }
                let ir = tp as f64 / (tp + fn_) as f64;
                let fpr = fp as f64 / (fp + tn) as f64;
                cands.push(Cand {
                    members: members.clone(),
                    sc,
                    ir,
                    objective: ir / (fpr + epsilon),
                });
            }
            continue;
        }
        stack.push((next + 1, members.clone()));
        let last = models[next].checkpoints.len() - 1;
        let choices: Vec<usize> = if include_checkpoints { (0..=last).collect() } else { vec![last] };
        for c in choices {
            let mut with = members.clone();
            with.push((next, c));
            stack.push((next + 1, with));
        }
    }

    let chain = |a: &Cand, b: &Cand| -> Ordering {
        b.objective
            .partial_cmp(&a.objective)
            .unwrap()
            .then(b.ir.partial_cmp(&a.ir).unwrap())
            .then(a.members.len().cmp(&b.members.len()))
            .then(a.members.cmp(&b.members))
            .then(b.sc.cmp(&a.sc))
    };
    let feasible: Vec<&Cand> = cands.iter().filter(|c| c.ir >= gamma).collect();
    let (best, ok) = if feasible.is_empty() {
        let best = cands
            .iter()
            .min_by(|a, b| b.ir.partial_cmp(&a.ir).unwrap().then(chain(a, b)))
            .unwrap();
        (best, false)
    } else {
        (*feasible.iter().min_by(|a, b| chain(a, b)).unwrap(), true)
    };
    let strategy = if best.sc { Strategy::StrictConsensus } else { Strategy::MajorityVote };
    (best.members.clone(), strategy, ok)
}
