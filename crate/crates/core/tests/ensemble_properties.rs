mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relabel_core::corpus::{Corpus, Label};
use relabel_core::ensemble::{compute_metrics, evaluate, ConsensusConfig, Metrics, Strategy, SubModel};

fn instance(seed: u64) -> (Vec<SubModel>, Corpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=5);
    let models = (0..k).map(|_| common::random_sub_model(&mut rng, 32, 1)).collect();
    let n = rng.gen_range(20..80);
    (models, common::random_gold_corpus(&mut rng, n))
}

fn metrics(models: &[SubModel], idx: &[usize], strategy: Strategy, val: &Corpus) -> Metrics {
    evaluate(models, &ConsensusConfig::final_checkpoints(models, idx, strategy), val).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn strict_consensus_never_exceeds_majority(seed in any::<u64>(), mask in 1u8..32) {
        let (models, val) = instance(seed);
        let idx: Vec<usize> = (0..models.len()).filter(|i| mask & (1 << i) != 0).collect();
        prop_assume!(!idx.is_empty());
        let sc = metrics(&models, &idx, Strategy::StrictConsensus, &val);
        let mv = metrics(&models, &idx, Strategy::MajorityVote, &val);
        prop_assert!(sc.ir <= mv.ir);
        prop_assert!(sc.fpr <= mv.fpr);
        prop_assert!(sc.tp <= mv.tp && sc.fp <= mv.fp);
    }

    #[test]
    fn strict_consensus_shrinks_as_members_join(seed in any::<u64>(), mask in 1u8..32, extra in 0usize..5) {
        let (models, val) = instance(seed);
        let idx: Vec<usize> = (0..models.len()).filter(|i| mask & (1 << i) != 0).collect();
        let extra = extra % models.len();
        prop_assume!(!idx.is_empty() && !idx.contains(&extra));
        let mut bigger = idx.clone();
        bigger.push(extra);
        bigger.sort_unstable();
        let small = metrics(&models, &idx, Strategy::StrictConsensus, &val);
        let large = metrics(&models, &bigger, Strategy::StrictConsensus, &val);
        prop_assert!(large.ir <= small.ir);
        prop_assert!(large.fpr <= small.fpr);
    }

    #[test]
    fn single_member_strategies_agree(seed in any::<u64>()) {
        let (models, val) = instance(seed);
        let sc = metrics(&models, &[0], Strategy::StrictConsensus, &val);
        let mv = metrics(&models, &[0], Strategy::MajorityVote, &val);
        prop_assert_eq!(sc, mv);
    }

    #[test]
    fn counts_partition_the_corpus(preds in proptest::collection::vec(any::<bool>(), 2..200), golds in proptest::collection::vec(any::<bool>(), 2..200)) {
        let n = preds.len().min(golds.len());
        let label = |b: bool| if b { Label::Retain } else { Label::Intercept };
        let p: Vec<Label> = preds[..n].iter().map(|&b| label(b)).collect();
        let g: Vec<Label> = golds[..n].iter().map(|&b| label(b)).collect();
        let both = g.contains(&Label::Retain) && g.contains(&Label::Intercept);
        match compute_metrics(&p, &g) {
            Ok(m) => {
                prop_assert!(both);
                prop_assert_eq!(m.total(), n);
                prop_assert!((0.0..=1.0).contains(&m.ir) && (0.0..=1.0).contains(&m.fpr));
            }
            Err(_) => prop_assert!(!both),
        }
    }
}

#[test]
fn majority_tie_retains() {
    let votes = [Label::Intercept, Label::Retain];
    assert_eq!(Strategy::MajorityVote.fuse(votes), Label::Retain);
    assert_eq!(Strategy::StrictConsensus.fuse(votes), Label::Retain);
    let three = [Label::Intercept, Label::Intercept, Label::Retain];
    assert_eq!(Strategy::MajorityVote.fuse(three), Label::Intercept);
    assert_eq!(Strategy::StrictConsensus.fuse(three), Label::Retain);
}

#[test]
fn pie_edge_cases() {
    // FPR = 0 with interceptions gives +inf; nothing intercepted gives 0
    let perfect = Metrics::from_counts(5, 0, 5, 10).unwrap();
    assert!(perfect.pie.is_infinite() && perfect.pie > 0.0);
    assert_eq!(perfect.pie_display(), "inf");
    let idle = Metrics::from_counts(0, 0, 10, 10).unwrap();
    assert_eq!(idle.pie, 0.0);
    let json = serde_json::to_string(&perfect).unwrap();
    assert!(json.contains("\"inf\""));
    let back: Metrics = serde_json::from_str(&json).unwrap();
    assert_eq!(back, perfect);
}
