use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::ensemble::{evaluate, ConsensusConfig, EnsembleError, Metrics, Strategy, SubModel};
use crate::relabel::TransitionMatrix;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sub-model {0} carries no doping ratio")]
    MissingAlpha(usize),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: usize,
    pub alpha: f64,
    pub metrics: Metrics,
}

/// Per-sub-model validation metrics ordered by α, with rank correlations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub rows: Vec<SweepRow>,
    /// Spearman ρ(α, FPR); absent when undefined.
    pub rho_alpha_fpr: Option<f64>,
    /// Spearman ρ(α, IR); absent when undefined.
    pub rho_alpha_ir: Option<f64>,
}

/// Fractional ranks (ties share their mean rank), 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = mean;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a constant
/// input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Validation metrics of each sub-model's final checkpoint, sorted by α.
pub fn report_alpha_sweep(models: &[SubModel], val: &Corpus) -> Result<AlphaSweep, SweepError> {
    let mut rows = Vec::with_capacity(models.len());
    for (i, sub) in models.iter().enumerate() {
        let alpha = sub.alpha().ok_or(SweepError::MissingAlpha(i))?;
        let single = ConsensusConfig::final_checkpoints(models, &[i], Strategy::StrictConsensus);
        rows.push(SweepRow {
            model: i,
            alpha,
            metrics: evaluate(models, &single, val)?,
        });
    }
    rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.model.cmp(&b.model)));
    let alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    let fprs: Vec<f64> = rows.iter().map(|r| r.metrics.fpr).collect();
    let irs: Vec<f64> = rows.iter().map(|r| r.metrics.ir).collect();
    Ok(AlphaSweep {
        rho_alpha_fpr: spearman(&alphas, &fprs),
        rho_alpha_ir: spearman(&alphas, &irs),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub best: ConsensusConfig,
    pub best_metrics: Metrics,
    pub objective_value: f64,
    pub feasible: bool,
    pub candidates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub master_seed: u64,
    pub config_hash: String,
    /// Derived per-stage seeds, by stage name.
    pub seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Sub-model validation metrics on the anchor set, sorted by α.
    pub alpha_sweep: AlphaSweep,
    pub search: SearchSummary,
    pub transition: TransitionMatrix,
    /// Relabeled-label disagreement with gold over the raw corpus, when the
    /// raw corpus carries gold.
    pub relabel_gold_error: Option<f64>,
    /// Same for the naive feedback mapping (Accept→1, Reject→0, Ignore→1).
    pub naive_mapping_gold_error: Option<f64>,
    pub final_train_size: usize,
    pub naive_train_size: usize,
    pub final_test: Metrics,
    pub naive_test: Metrics,
    pub provenance: RunProvenance,
}

impl RunReport {
    /// The report minus provenance timestamps, for reproducibility checks.
    pub fn metrics_fingerprint(&self) -> String {
        let mut copy = self.clone();
        copy.provenance.started_at.clear();
        copy.provenance.finished_at.clear();
        serde_json::to_string(&copy).expect("report serializes")
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== Sub-models on anchor set ==");
        let _ = writeln!(out, "{:>5} {:>6} {:>8} {:>8} {:>8}", "model", "alpha", "IR", "FPR", "PIE");
        for r in &self.alpha_sweep.rows {
            let _ = writeln!(
                out,
                "{:>5} {:>6.2} {:>8.4} {:>8.4} {:>8}",
                r.model,
                r.alpha,
                r.metrics.ir,
                r.metrics.fpr,
                r.metrics.pie_display()
            );
        }
        let rho = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.3}"));
        let _ = writeln!(
            out,
            "spearman(alpha, FPR) = {}   spearman(alpha, IR) = {}",
            rho(self.alpha_sweep.rho_alpha_fpr),
            rho(self.alpha_sweep.rho_alpha_ir)
        );

        let _ = writeln!(out, "\n== Selected cleaner ==");
        let s = &self.search;
        let _ = writeln!(
            out,
            "{}  IR={:.4} FPR={:.4} PIE={} objective={:.4} feasible={} ({} candidates)",
            s.best.describe(),
            s.best_metrics.ir,
            s.best_metrics.fpr,
            s.best_metrics.pie_display(),
            s.objective_value,
            s.feasible,
            s.candidates
        );

        let _ = writeln!(out);
        out.push_str(&self.transition.table("== Label transitions (raw corpus) =="));
        let err = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            out,
            "gold disagreement: relabeled={}  naive mapping={}",
            err(self.relabel_gold_error),
            err(self.naive_mapping_gold_error)
        );

        let _ = writeln!(out, "\n== Test set ==");
        let _ = writeln!(out, "{:<22} {:>8} {:>8} {:>8} {:>8}", "method", "IR", "FPR", "PIE", "train n");
        for (name, m, n) in [
            ("naive baseline", &self.naive_test, self.naive_train_size),
            ("consensus-cleaned", &self.final_test, self.final_train_size),
        ] {
            let _ = writeln!(
                out,
                "{:<22} {:>8.4} {:>8.4} {:>8} {:>8}",
                name,
                m.ir,
                m.fpr,
                m.pie_display(),
                n
            );
        }

        let p = &self.provenance;
        let _ = writeln!(out, "\nseed={} config={} started={} finished={}", p.master_seed, p.config_hash, p.started_at, p.finished_at);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Model, TrainConfig};
    use crate::corpus::{CorpusRole, Feedback, FeedbackSample, Label};

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0], &[2.0]), None);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
        // ties share ranks: x ranks (1,2,3,4), y ranks (1.5,1.5,3,4)
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 2.0]).unwrap();
        assert!((rho - 0.9486832980505138).abs() < 1e-12, "{rho}");
    }

    fn sub(alpha: Option<f64>, bias: f64) -> SubModel {
        SubModel::new(vec![Model {
            weights: vec![0.0; 8],
            bias,
            alpha,
            checkpoint_epoch: 1,
            config: TrainConfig { dimension: 8, ..Default::default() },
        }])
    }

    fn val() -> Corpus {
        let samples = (0..4)
            .map(|i| FeedbackSample {
                id: format!("v{i}"),
                diff: "d".into(),
                comment: "c".into(),
                feedback: Feedback::Accept,
                gold: Some(if i < 2 { Label::Retain } else { Label::Intercept }),
            })
            .collect();
        Corpus::new(samples, CorpusRole::AnchorValidation).unwrap()
    }

    #[test]
    fn single_model_sweep_has_no_correlation() {
        let sweep = report_alpha_sweep(&[sub(Some(0.1), -1.0)], &val()).unwrap();
        assert_eq!(sweep.rows.len(), 1);
        assert_eq!(sweep.rho_alpha_fpr, None);
        assert_eq!(sweep.rho_alpha_ir, None);
    }

    #[test]
    fn identical_models_give_identical_rows() {
        let models = [sub(Some(0.3), -1.0), sub(Some(0.0), -1.0)];
        let sweep = report_alpha_sweep(&models, &val()).unwrap();
        assert_eq!(sweep.rows[0].alpha, 0.0);
        assert_eq!(sweep.rows[0].metrics, sweep.rows[1].metrics);
    }

    #[test]
    fn sweep_requires_alpha() {
        let err = report_alpha_sweep(&[sub(Some(0.0), 1.0), sub(None, 1.0)], &val()).unwrap_err();
        assert!(matches!(err, SweepError::MissingAlpha(1)));
    }
}
