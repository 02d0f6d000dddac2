//! Outer evaluation: repeated stratified k-fold CV of the kernel SVM,
//! optional nested feature selection, and label-permutation baselines.

pub mod cv;
pub mod metrics;
pub mod report;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::kernels::{apply_spectrum_fix, KernelSource, PabsKernelParams, SpectrumFix};
use crate::matrix::MatrixF64;
use crate::seeds::derive_seed;
use crate::selection::{ssfs, ScoringContext, SsfsConfig};
use crate::svm::{argmax_rows, predict_scores, train_multiclass, SvmConfig};

pub use metrics::{average_precision, f1_macro, macro_pr_auc, per_class_ap};
pub use report::{BoxStats, ExperimentReport, ReportRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub outer_folds: usize,
    pub repeats: usize,
    pub class_set: Vec<String>,
    pub permutation_rounds: usize,
    /// Draw a fresh fold assignment for every repeat; when false all repeats
    /// share one split and differ only in the SVM seed.
    pub resplit_each_repeat: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            outer_folds: 5,
            repeats: 50,
            class_set: vec!["AD".into(), "MS".into(), "NR".into()],
            permutation_rounds: 100,
            resplit_each_repeat: true,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 {
            return Err(Error::Config("eval.outer_folds must be >= 2".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("eval.repeats must be >= 1".into()));
        }
        if self.class_set.len() < 2 {
            return Err(Error::Config("eval.class_set needs at least two classes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitScore {
    pub per_class_ap: Vec<f64>,
    pub macro_pr_auc: f64,
    pub macro_f1: f64,
    /// `test.len() × n_classes` decision values.
    pub scores: MatrixF64,
}

/// Train on `train`, score `test`. `raw` is the unfixed kernel over the same
/// index space as `labels`; the spectrum fix touches the training block only.
pub fn evaluate_split(
    raw: &MatrixF64,
    labels: &[usize],
    classes: &[String],
    train: &[usize],
    test: &[usize],
    fix: SpectrumFix,
    svm: &SvmConfig,
) -> Result<SplitScore> {
    let k_train = apply_spectrum_fix(&raw.submatrix(train, train), fix);
    let k_test = raw.submatrix(test, train);
    let l_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let l_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let model = train_multiclass(&k_train, &l_train, classes, svm)?;
    let scores = predict_scores(&model, &k_test)?;
    let ap = per_class_ap(&l_test, &scores)?;
    Ok(SplitScore {
        macro_pr_auc: ap.iter().sum::<f64>() / ap.len() as f64,
        per_class_ap: ap,
        macro_f1: f1_macro(&l_test, &argmax_rows(&scores), classes.len())?,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSelection {
    Fixed(Vec<usize>),
    /// Nested beam search on each outer training set.
    Search(SsfsConfig),
}

pub struct Experiment<'a> {
    pub source: &'a KernelSource<'a>,
    /// Class index per subject of `source`.
    pub labels: &'a [usize],
    pub classes: &'a [String],
    pub domains: &'a [(String, Vec<usize>)],
    pub kernel: &'a PabsKernelParams,
    pub use_fnc: bool,
    pub svm: &'a SvmConfig,
    pub eval: &'a EvalConfig,
    pub selection: &'a FeatureSelection,
    /// Short configuration name used in reports.
    pub label: String,
}

/// One outer (fold, repeat) outcome including holdout scores.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub repeat: usize,
    pub selected: Vec<usize>,
    pub test: Vec<usize>,
    pub score: SplitScore,
}

impl Experiment<'_> {
    fn check(&self) -> Result<()> {
        self.eval.validate()?;
        self.svm.validate()?;
        self.kernel.validate()?;
        if self.labels.len() != self.source.n_subjects() {
            return Err(Error::Shape(format!(
                "{} labels for {} subjects",
                self.labels.len(),
                self.source.n_subjects()
            )));
        }
        for (c, name) in self.classes.iter().enumerate() {
            let size = self.labels.iter().filter(|&&l| l == c).count();
            if size < self.eval.outer_folds {
                return Err(Error::ClassTooSmall {
                    class: name.clone(),
                    size,
                    k: self.eval.outer_folds,
                });
            }
        }
        Ok(())
    }

    fn fold_assignments(&self, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
        (0..self.eval.repeats)
            .map(|r| {
                let stream = if self.eval.resplit_each_repeat { r as u64 } else { 0 };
                cv::stratified_kfold(labels, self.eval.outer_folds, derive_seed(self.eval.seed, &[stream]))
            })
            .collect()
    }

    /// All (fold, repeat) outcomes for the given labels, fold-major.
    pub fn run_grid(&self, labels: &[usize]) -> Result<Vec<FoldOutcome>> {
        self.check()?;
        let assignments = self.fold_assignments(labels)?;
        let all: Vec<usize> = (0..labels.len()).collect();
        let grid: Vec<(usize, usize)> = (0..self.eval.outer_folds)
            .flat_map(|f| (0..self.eval.repeats).map(move |r| (f, r)))
            .collect();

        // Selected set per distinct training set.
        let mut selections: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        match self.selection {
            FeatureSelection::Fixed(sel) => {
                if sel.is_empty() {
                    return Err(Error::Config("fixed selection is empty".into()));
                }
            }
            FeatureSelection::Search(cfg) => {
                let mut trains: Vec<Vec<usize>> = grid.iter().map(|&(f, r)| cv::split(&assignments[r], f).0).collect();
                trains.sort();
                trains.dedup();
                let ctx = ScoringContext {
                    source: self.source,
                    labels,
                    classes: self.classes,
                    kernel: self.kernel,
                    use_fnc: self.use_fnc,
                    svm: self.svm,
                };
                let found: Vec<Vec<usize>> = trains
                    .par_iter()
                    .map(|t| ssfs(&ctx, t, self.domains, cfg).map(|r| r.best_set))
                    .collect::<Result<_>>()
                    .context(|| "nested selection")?;
                selections.extend(trains.into_iter().zip(found));
            }
        }
        let mut distinct: Vec<Vec<usize>> = match self.selection {
            FeatureSelection::Fixed(sel) => vec![sel.clone()],
            FeatureSelection::Search(_) => selections.values().cloned().collect(),
        };
        distinct.sort();
        distinct.dedup();
        let kernels: BTreeMap<Vec<usize>, MatrixF64> = distinct
            .iter()
            .map(|s| Ok((s.clone(), self.source.raw(&all, s, self.kernel, self.use_fnc)?)))
            .collect::<Result<_>>()?;

        grid.par_iter()
            .map(|&(f, r)| {
                let (train, test) = cv::split(&assignments[r], f);
                let selected = match self.selection {
                    FeatureSelection::Fixed(sel) => sel.clone(),
                    FeatureSelection::Search(_) => selections[&train].clone(),
                };
                let svm = SvmConfig {
                    seed: derive_seed(self.svm.seed, &[r as u64, f as u64]),
                    ..self.svm.clone()
                };
                let score = evaluate_split(&kernels[&selected], labels, self.classes, &train, &test, self.kernel.spectrum_fix, &svm)
                    .context(|| format!("fold {f}, repeat {r}"))?;
                Ok(FoldOutcome {
                    fold: f,
                    repeat: r,
                    selected,
                    test,
                    score,
                })
            })
            .collect()
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::json!({
            "eval": self.eval,
            "svm": self.svm,
            "kernel": self.kernel,
            "use_fnc": self.use_fnc,
            "selection": self.selection,
        })
    }
}

pub fn run_experiment(e: &Experiment) -> Result<ExperimentReport> {
    let rows = e
        .run_grid(e.labels)?
        .into_iter()
        .map(|o| ReportRow {
            fold: o.fold,
            repeat: o.repeat,
            macro_pr_auc: o.score.macro_pr_auc,
            macro_f1: o.score.macro_f1,
            per_class_ap: o.score.per_class_ap,
            selected: o.selected,
        })
        .collect();
    ExperimentReport::new(e.label.clone(), e.classes.to_vec(), e.eval.seed, rows, e.config_echo())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub rounds: usize,
    /// Mean per-fold macro PR-AUC of each permutation round.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub p95: f64,
    /// Macro AP of pooled out-of-fold scores, averaged over rounds.
    pub pooled_mean: f64,
    /// Expected per-fold macro AP of a random ranking on the same fold layout.
    pub chance: f64,
    /// Mean class prevalence, `1 / n_classes`.
    pub prevalence: f64,
}

/// Macro PR-AUC under `rounds` random label permutations, one repeat each.
pub fn permutation_baseline(e: &Experiment, rounds: usize, seed: u64) -> Result<BaselineStats> {
    if rounds == 0 {
        return Err(Error::Config("permutation rounds must be >= 1".into()));
    }
    let eval = EvalConfig {
        repeats: 1,
        ..e.eval.clone()
    };
    let single = Experiment {
        eval: &eval,
        label: e.label.clone(),
        ..*e
    };
    let per_round: Vec<(f64, f64)> = (0..rounds)
        .into_par_iter()
        .map(|i| {
            let mut labels = e.labels.to_vec();
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64])));
            let outcomes = single.run_grid(&labels).context(|| format!("permutation round {i}"))?;
            let mean = outcomes.iter().map(|o| o.score.macro_pr_auc).sum::<f64>() / outcomes.len() as f64;
            let mut pooled = MatrixF64::zeros(labels.len(), e.classes.len());
            for o in &outcomes {
                for (row, &s) in o.test.iter().enumerate() {
                    for c in 0..e.classes.len() {
                        pooled.set(s, c, o.score.scores.get(row, c));
                    }
                }
            }
            Ok((mean, macro_pr_auc(&labels, &pooled)?))
        })
        .collect::<Result<_>>()?;

    let folds = cv::stratified_kfold(e.labels, eval.outer_folds, derive_seed(eval.seed, &[0]))?;
    let chance = (0..eval.outer_folds)
        .map(|f| {
            let (_, test) = cv::split(&folds, f);
            let counts: Vec<usize> = (0..e.classes.len())
                .map(|c| test.iter().filter(|&&i| e.labels[i] == c).count())
                .collect();
            metrics::expected_random_macro_ap(&counts)
        })
        .sum::<f64>()
        / eval.outer_folds as f64;

    let scores: Vec<f64> = per_round.iter().map(|p| p.0).collect();
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = sorted[((0.95 * (rounds - 1) as f64).round() as usize).min(rounds - 1)];
    Ok(BaselineStats {
        rounds,
        mean: scores.iter().sum::<f64>() / rounds as f64,
        pooled_mean: per_round.iter().map(|p| p.1).sum::<f64>() / rounds as f64,
        scores,
        p95,
        chance,
        prevalence: 1.0 / e.classes.len() as f64,
    })
}
