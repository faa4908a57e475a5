mod common;

use std::collections::HashSet;

use relabel_core::corpus::Corpus;
use relabel_core::pipeline::{
    artifacts, assemble_report, check_isolation, derive_seed, run_end_to_end, Corpora, DataSource, PipelineConfig,
    PipelineError, ReportInputs, Stage,
};

#[test]
fn run_reports_one_row_per_ratio_and_keeps_sets_isolated() {
    let config = common::small_config(3);
    let out = run_end_to_end(&config).unwrap();
    let r = &out.report;
    assert_eq!(r.alpha_sweep.rows.len(), config.doping.ratios.len());
    let alphas: Vec<f64> = r.alpha_sweep.rows.iter().map(|row| row.alpha).collect();
    assert_eq!(alphas, config.doping.ratios);
    assert!(r.alpha_sweep.rho_alpha_fpr.is_some());

    let held_out: HashSet<&str> = out.corpora.anchor.ids().union(&out.corpora.test.ids()).copied().collect();
    let training = out
        .doped
        .iter()
        .chain([&out.final_train, &out.naive_train, &out.relabeled]);
    for set in training {
        assert!(set.ids().is_disjoint(&held_out));
    }
    assert_eq!(r.transition.total(), out.corpora.raw.len());
    assert_eq!(r.final_train_size, out.final_train.len());
    assert_eq!(r.provenance.seeds.len(), 8 + config.doping.ratios.len());
}

#[test]
fn equal_configs_give_identical_runs() {
    let config = common::small_config(5);
    let a = run_end_to_end(&config).unwrap();
    let b = run_end_to_end(&config).unwrap();
    assert_eq!(a.relabeled, b.relabeled);
    assert_eq!(a.report.metrics_fingerprint(), b.report.metrics_fingerprint());
    let c = run_end_to_end(&PipelineConfig { seed: 6, ..config }).unwrap();
    assert_ne!(a.relabeled, c.relabeled);
}

#[test]
fn report_is_recomputable_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig {
        out_dir: Some(dir.path().to_path_buf()),
        ..common::small_config(8)
    };
    let out = run_end_to_end(&config).unwrap();
    let root = dir.path();
    for rel in [
        artifacts::CONFIG,
        artifacts::DOPING_MANIFEST,
        artifacts::LEADERBOARD_TXT,
        artifacts::CLEANER,
        artifacts::TRANSITION_TXT,
        artifacts::TRANSITION_JSON,
        artifacts::REPORT_TXT,
    ] {
        assert!(root.join(rel).is_file(), "{rel} missing");
    }

    let stored = PipelineConfig::load(root.join(artifacts::CONFIG)).unwrap();
    assert_eq!(stored.hash(), config.hash());
    let corpora = artifacts::load_corpora(root).unwrap();
    let models = artifacts::load_sub_models(&root.join(artifacts::MODELS_DIR)).unwrap();
    let search = artifacts::load_search(root).unwrap();
    let (relabeled, final_train) = artifacts::load_relabel(root).unwrap();
    let (final_model, naive_train, naive_model) = artifacts::load_final_models(root).unwrap();
    assert_eq!(relabeled, out.relabeled);
    assert_eq!(artifacts::load_doped(root).unwrap(), out.doped);

    let again = assemble_report(
        &stored,
        &ReportInputs {
            corpora: &corpora,
            sub_models: &models,
            search: &search,
            relabeled: &relabeled,
            final_train: &final_train,
            naive_train: &naive_train,
            final_model: &final_model,
            naive_model: &naive_model,
        },
        String::new(),
    )
    .unwrap();
    assert_eq!(again.metrics_fingerprint(), out.report.metrics_fingerprint());
    assert_eq!(artifacts::load_report(root).unwrap(), out.report);
}

#[test]
fn file_sources_reproduce_the_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig {
        out_dir: Some(dir.path().join("synthetic")),
        ..common::small_config(2)
    };
    let synthetic = run_end_to_end(&config).unwrap();
    let corpora = dir.path().join("synthetic");
    let from_files = run_end_to_end(&PipelineConfig {
        out_dir: None,
        data: DataSource::Files {
            raw: corpora.join(artifacts::RAW),
            anchor: corpora.join(artifacts::ANCHOR),
            test: corpora.join(artifacts::TEST),
        },
        ..config
    })
    .unwrap();
    assert_eq!(synthetic.relabeled, from_files.relabeled);
    assert_eq!(synthetic.report.final_test, from_files.report.final_test);
}

#[test]
fn leaked_anchor_ids_abort_the_run() {
    let out = run_end_to_end(&common::small_config(1)).unwrap();
    let mut leaked = out.corpora.anchor.samples().to_vec();
    leaked.push(out.corpora.test.samples()[0].clone());
    let corpora = Corpora {
        anchor: Corpus::from_shared(leaked, relabel_core::corpus::CorpusRole::AnchorValidation).unwrap(),
        ..out.corpora.clone()
    };
    let clean = check_isolation(&out.corpora);
    assert!(clean.is_ok());
    let err = check_isolation(&corpora).unwrap_err();
    assert!(matches!(err, PipelineError::Leak { .. }));
    assert_eq!(err.stage(), Some(Stage::LeakCheck));
}

#[test]
fn failing_stage_is_named_and_earlier_artifacts_remain() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig {
        out_dir: Some(dir.path().to_path_buf()),
        ..common::small_config(4)
    };
    config.doping.n_negatives_per_set = Some(10_000);
    let err = run_end_to_end(&config).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Doping));
    assert!(err.to_string().contains("doping"), "{err}");
    assert!(dir.path().join(artifacts::RAW).is_file());
    assert!(!dir.path().join(artifacts::DOPING_MANIFEST).exists());
}

#[test]
fn unreachable_gamma_completes_but_is_flagged() {
    let mut config = common::small_config(9);
    config.search.gamma = 1.0;
    let out = run_end_to_end(&config).unwrap();
    assert!(!out.report.search.feasible);
    let max_ir = out.search.leaderboard.iter().map(|c| c.metrics.ir).fold(0.0, f64::max);
    assert_eq!(out.report.search.best_metrics.ir, max_ir);
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let config = common::small_config(12);
    let text = config.to_toml_string();
    assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), config);
    assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    let bad = PipelineConfig::from_toml_str("seed = 1\nbogus = 2\n").unwrap_err();
    assert!(matches!(bad, PipelineError::Config(_)));
    let partial = PipelineConfig::from_toml_str("seed = 4\n[search]\ngamma = 0.5\n").unwrap();
    assert_eq!(partial.seed, 4);
    assert_eq!(partial.search.gamma, 0.5);
    assert_eq!(partial.search.epsilon, 1e-4);
    let invalid = PipelineConfig::from_toml_str("[sub_model]\ndimension = 1000\n").unwrap_err();
    assert!(matches!(invalid, PipelineError::Config(_)));
}

#[test]
fn stage_seeds_are_distinct() {
    let seeds: HashSet<u64> = ["synth-raw", "synth-gold", "doping", "balance"]
        .iter()
        .flat_map(|s| (0..3).map(move |i| derive_seed(42, s, i)))
        .collect();
    assert_eq!(seeds.len(), 12);
    assert_ne!(derive_seed(1, "doping", 0), derive_seed(2, "doping", 0));
}
