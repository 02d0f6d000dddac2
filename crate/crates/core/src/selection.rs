//! Soft sequential forward selection: a beam search over functional domains
//! that picks one component per domain, scoring each candidate set by inner
//! stratified cross-validation.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::eval::{cv, evaluate_split};
use crate::kernels::{KernelSource, PabsKernelParams};
use crate::seeds::derive_seed;
use crate::svm::SvmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    #[default]
    MacroPrAuc,
    MacroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsfsConfig {
    pub beam_width: usize,
    pub scorer: Scorer,
    pub inner_folds: usize,
    pub inner_repeats: usize,
    /// Overrides the template's domain order.
    pub domain_order: Option<Vec<String>>,
    /// Extra stages after the domain pass; each may add any unchosen component.
    pub extra_passes: usize,
    /// Keep the best child of the greedy lineage in the beam even when it
    /// falls outside the top `beam_width`.
    pub keep_greedy_path: bool,
    pub seed: u64,
}

impl Default for SsfsConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            scorer: Scorer::MacroPrAuc,
            inner_folds: 5,
            inner_repeats: 10,
            domain_order: None,
            extra_passes: 0,
            keep_greedy_path: true,
            seed: 0,
        }
    }
}

impl SsfsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("selection.beam_width must be >= 1".into()));
        }
        if self.inner_folds < 2 {
            return Err(Error::Config("selection.inner_folds must be >= 2".into()));
        }
        if self.inner_repeats == 0 {
            return Err(Error::Config("selection.inner_repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// What a candidate set is scored against.
pub struct ScoringContext<'a> {
    pub source: &'a KernelSource<'a>,
    /// Class index of every subject in `source`.
    pub labels: &'a [usize],
    pub classes: &'a [String],
    pub kernel: &'a PabsKernelParams,
    pub use_fnc: bool,
    pub svm: &'a SvmConfig,
}

/// Mean inner-CV score of `selected` over `subjects` (indices into the
/// context's cohort). The split seed does not depend on the candidate.
pub fn score_feature_set(
    ctx: &ScoringContext,
    subjects: &[usize],
    selected: &[usize],
    cfg: &SsfsConfig,
    seed: u64,
) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::InvalidInput("empty candidate set".into()));
    }
    let mut sel = selected.to_vec();
    sel.sort_unstable();
    let inner = || -> Result<f64> {
        let raw = ctx.source.raw(subjects, &sel, ctx.kernel, ctx.use_fnc)?;
        let labels: Vec<usize> = subjects.iter().map(|&s| ctx.labels[s]).collect();
        let mut total = 0.0;
        for r in 0..cfg.inner_repeats {
            let folds = cv::stratified_kfold(&labels, cfg.inner_folds, derive_seed(seed, &[r as u64]))?;
            for f in 0..cfg.inner_folds {
                let (train, test) = cv::split(&folds, f);
                let svm = SvmConfig {
                    seed: derive_seed(ctx.svm.seed, &[r as u64, f as u64]),
                    ..ctx.svm.clone()
                };
                let s = evaluate_split(&raw, &labels, ctx.classes, &train, &test, ctx.kernel.spectrum_fix, &svm)?;
                total += match cfg.scorer {
                    Scorer::MacroPrAuc => s.macro_pr_auc,
                    Scorer::MacroF1 => s.macro_f1,
                };
            }
        }
        Ok(total / (cfg.inner_repeats * cfg.inner_folds) as f64)
    };
    inner().context(|| format!("scoring components {sel:?}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: usize,
    pub domain: String,
    /// Sorted component indices.
    pub set: Vec<usize>,
    pub score: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub best_set: Vec<usize>,
    pub best_score: f64,
    pub beam_trace: Vec<TraceEntry>,
    /// `(set, score)` ranked best first.
    pub final_beam: Vec<(Vec<usize>, f64)>,
}

impl SelectionResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("stage,domain,candidate,score,kept\n");
        for t in &self.beam_trace {
            let set: Vec<String> = t.set.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{},{},{},{},{}", t.stage, t.domain, set.join(";"), t.score, t.kept);
        }
        out
    }
}

fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1).expect("finite scores").then_with(|| a.0.cmp(&b.0))
}

/// Stages as `(name, candidate components)`: the domains in visiting order,
/// then one "any" stage per extra pass.
fn stages(domains: &[(String, Vec<usize>)], cfg: &SsfsConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    match &cfg.domain_order {
        Some(order) => {
            for name in order {
                let d = domains
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| Error::Config(format!("domain_order names unknown domain {name:?}")))?;
                out.push(d.clone());
            }
        }
        None => out.extend(domains.iter().cloned()),
    }
    if let Some((name, _)) = out.iter().find(|(_, c)| c.is_empty()) {
        return Err(Error::InvalidInput(format!("domain {name:?} has no components")));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no domains to search".into()));
    }
    let all: Vec<usize> = {
        let mut v: Vec<usize> = domains.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    for _ in 0..cfg.extra_passes {
        out.push(("any".to_string(), all.clone()));
    }
    Ok(out)
}

/// Beam search over `domains` using the training `subjects` only.
pub fn ssfs(
    ctx: &ScoringContext,
    subjects: &[usize],
    domains: &[(String, Vec<usize>)],
    cfg: &SsfsConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let stages = stages(domains, cfg)?;
    // Members carry components in pick order; keys are sorted.
    let mut beam: Vec<Vec<usize>> = vec![Vec::new()];
    let mut greedy: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut last_ranked: Vec<(Vec<usize>, f64)> = Vec::new();

    for (stage, (domain, comps)) in stages.iter().enumerate() {
        let mut seen = HashSet::new();
        let mut candidates: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for member in &beam {
            for &c in comps {
                if member.contains(&c) {
                    continue;
                }
                let mut picked = member.clone();
                picked.push(c);
                let mut key = picked.clone();
                key.sort_unstable();
                if seen.insert(key.clone()) {
                    candidates.push((picked, key));
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let scores: Vec<f64> = candidates
            .par_iter()
            .map(|(_, key)| score_feature_set(ctx, subjects, key, cfg, cfg.seed))
            .collect::<Result<_>>()?;

        let mut ranked: Vec<(usize, (Vec<usize>, f64))> = candidates
            .iter()
            .zip(&scores)
            .enumerate()
            .map(|(i, ((_, key), &s))| (i, (key.clone(), s)))
            .collect();
        ranked.sort_by(|a, b| rank(&a.1, &b.1));

        // Best child of the greedy lineage, located by sorted key since its
        // pick order may have been deduplicated away.
        let mut greedy_child: Option<(usize, usize)> = None;
        for &c in comps {
            if greedy.contains(&c) {
                continue;
            }
            let mut key = greedy.clone();
            key.push(c);
            key.sort_unstable();
            // Absent once the lineage has left the beam (keep_greedy_path off).
            let Some(i) = candidates.iter().position(|(_, k)| *k == key) else {
                continue;
            };
            let better = match greedy_child {
                None => true,
                Some((g, _)) => {
                    rank(&(key, scores[i]), &(candidates[g].1.clone(), scores[g])) == std::cmp::Ordering::Less
                }
            };
            if better {
                greedy_child = Some((i, c));
            }
        }

        let mut kept: Vec<usize> = ranked.iter().take(cfg.beam_width).map(|(i, _)| *i).collect();
        if cfg.keep_greedy_path {
            if let Some((g, _)) = greedy_child {
                if !kept.contains(&g) {
                    kept.pop();
                    kept.push(g);
                }
            }
        }
        if let Some((_, c)) = greedy_child {
            greedy.push(c);
        }
        for (i, (_, key)) in candidates.iter().enumerate() {
            trace.push(TraceEntry {
                stage,
                domain: domain.clone(),
                set: key.clone(),
                score: scores[i],
                kept: kept.contains(&i),
            });
        }
        let mut next: Vec<(usize, (Vec<usize>, f64))> =
            kept.iter().map(|&i| (i, (candidates[i].1.clone(), scores[i]))).collect();
        next.sort_by(|a, b| rank(&a.1, &b.1));
        beam = next.iter().map(|(i, _)| candidates[*i].0.clone()).collect();
        last_ranked = next.into_iter().map(|(_, r)| r).collect();
    }

    let (best_set, best_score) = last_ranked[0].clone();
    Ok(SelectionResult {
        best_set,
        best_score,
        beam_trace: trace,
        final_beam: last_ranked,
    })
}
