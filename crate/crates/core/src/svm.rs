//! Kernel SVM on precomputed kernels: an SMO dual solver with maximal
//! violating pair / second-order working-set selection, one-vs-rest
//! multiclass wrapping and KKT instrumentation.
//!
//! Dual problem (per-sample upper bounds `C_i`):
//!
//! ```text
//! max  Σ α_i − ½ Σ_ij α_i α_j y_i y_j K_ij
//! s.t. 0 ≤ α_i ≤ C_i,  Σ α_i y_i = 0
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MatrixF64;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    #[serde(rename = "C")]
    pub c: f64,
    /// Scale each class's bound by `N / (2 · n_class)`.
    pub class_weighted: bool,
    pub smo_tol: f64,
    /// Maximum number of SMO pair updates.
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            class_weighted: true,
            smo_tol: 1e-3,
            max_passes: 10_000,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config("svm.C must be > 0".into()));
        }
        if !(self.smo_tol > 0.0) {
            return Err(Error::Config("svm.smo_tol must be > 0".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("svm.max_passes must be >= 1".into()));
        }
        Ok(())
    }

    /// Per-sample box bounds for labels `y ∈ {−1, +1}`.
    pub fn bounds(&self, y: &[f64]) -> Vec<f64> {
        if !self.class_weighted {
            return vec![self.c; y.len()];
        }
        let n = y.len() as f64;
        let pos = y.iter().filter(|&&v| v > 0.0).count() as f64;
        let neg = n - pos;
        y.iter()
            .map(|&v| {
                let count = if v > 0.0 { pos } else { neg };
                self.c * n / (2.0 * count)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub train_labels: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    /// `Σ α_i − ½ αᵀQα` for the training kernel `k`.
    pub fn dual_objective(&self, k: &MatrixF64) -> f64 {
        dual_objective(&self.alphas, &self.train_labels, k)
    }
}

pub fn dual_objective(alpha: &[f64], y: &[f64], k: &MatrixF64) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k.get(i, j);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// State after one accepted SMO update.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoStep {
    pub objective: f64,
    pub equality_residual: f64,
    /// Largest excursion outside `[0, C_i]`; zero when feasible.
    pub box_violation: f64,
}

fn check_problem(k: &MatrixF64, y: &[f64]) -> Result<()> {
    let n = y.len();
    if k.shape() != (n, n) {
        return Err(Error::Shape(format!("kernel is {:?}, labels have length {n}", k.shape())));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidInput("labels must be +1 or -1".into()));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::InvalidInput("binary SVM needs both classes".into()));
    }
    k.ensure_finite()
}

pub fn solve_binary_smo(k: &MatrixF64, y: &[f64], cfg: &SvmConfig) -> Result<SvmModel> {
    cfg.validate()?;
    check_problem(k, y)?;
    Ok(smo(k, y, &cfg.bounds(y), cfg, None))
}

/// [`solve_binary_smo`] that also records every accepted update.
pub fn solve_binary_smo_traced(k: &MatrixF64, y: &[f64], cfg: &SvmConfig) -> Result<(SvmModel, Vec<SmoStep>)> {
    cfg.validate()?;
    check_problem(k, y)?;
    let mut trace = Vec::new();
    let m = smo(k, y, &cfg.bounds(y), cfg, Some(&mut trace));
    Ok((m, trace))
}

fn smo(k: &MatrixF64, y: &[f64], ub: &[f64], cfg: &SvmConfig, mut trace: Option<&mut Vec<SmoStep>>) -> SvmModel {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − eᵀα.
    let mut grad = vec![-1.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let q = |i: usize, j: usize| y[i] * y[j] * k.get(i, j);
    let in_up = |a: &[f64], t: usize| if y[t] > 0.0 { a[t] < ub[t] } else { a[t] > 0.0 };
    let in_low = |a: &[f64], t: usize| if y[t] > 0.0 { a[t] > 0.0 } else { a[t] < ub[t] };

    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for &t in &order {
            if in_up(&alpha, t) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmin = f64::INFINITY;
        for &t in &order {
            if in_low(&alpha, t) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        if gmax - gmin < cfg.smo_tol || i_sel.is_none() {
            converged = true;
            break;
        }
        if iterations >= cfg.max_passes {
            break;
        }
        let i = i_sel.unwrap();
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for &t in &order {
            if !in_low(&alpha, t) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let mut a = k.get(i, i) + k.get(t, t) - 2.0 * k.get(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else {
            converged = true;
            break;
        };
        iterations += 1;

        let (ci, cj) = (ub[i], ub[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = k.get(i, i) + k.get(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = k.get(i, i) + k.get(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
        if let Some(tr) = trace.as_deref_mut() {
            let objective = 0.5 * (alpha.iter().sum::<f64>() - alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>());
            let equality_residual = alpha.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().abs();
            let box_violation = alpha
                .iter()
                .zip(ub)
                .map(|(&a, &c)| (-a).max(a - c).max(0.0))
                .fold(0.0, f64::max);
            tr.push(SmoStep {
                objective,
                equality_residual,
                box_violation,
            });
        }
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let (mut ubound, mut lbound) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= ub[t] {
            if y[t] < 0.0 {
                ubound = ubound.min(yg);
            } else {
                lbound = lbound.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ubound = ubound.min(yg);
            } else {
                lbound = lbound.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        0.5 * (ubound + lbound)
    };
    SvmModel {
        support_indices: (0..n).filter(|&t| alpha[t] > 0.0).collect(),
        alphas: alpha,
        bias: -rho,
        train_labels: y.to_vec(),
        upper_bounds: ub.to_vec(),
        iterations,
        converged,
    }
}

/// `f(x) = Σ α_i y_i K(x, x_i) + b` for each row of `k_test_train`.
pub fn decision_values(m: &SvmModel, k_test_train: &MatrixF64) -> Result<Vec<f64>> {
    if k_test_train.cols() != m.alphas.len() {
        return Err(Error::Shape(format!(
            "test kernel has {} columns, model was trained on {} subjects",
            k_test_train.cols(),
            m.alphas.len()
        )));
    }
    Ok((0..k_test_train.rows())
        .map(|r| {
            let row = k_test_train.row(r);
            m.support_indices
                .iter()
                .map(|&i| m.alphas[i] * m.train_labels[i] * row[i])
                .sum::<f64>()
                + m.bias
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub max_violation: f64,
    pub worst_index: Option<usize>,
    pub equality_residual: f64,
    pub box_violation: f64,
}

/// Per-point KKT violation of `(α, b)` on its training kernel:
/// `max(0, 1 − y f)` at `α = 0`, `max(0, y f − 1)` at `α = C_i`, and
/// `|y f − 1|` in between.
pub fn check_kkt(m: &SvmModel, k_train: &MatrixF64) -> Result<KktReport> {
    let f = decision_values(m, k_train)?;
    let mut worst = 0.0;
    let mut worst_index = None;
    for (t, ft) in f.iter().enumerate() {
        let margin = m.train_labels[t] * ft;
        let a = m.alphas[t];
        let v = if a <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if a >= m.upper_bounds[t] {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        if v > worst {
            worst = v;
            worst_index = Some(t);
        }
    }
    Ok(KktReport {
        max_violation: worst,
        worst_index,
        equality_residual: m.alphas.iter().zip(&m.train_labels).map(|(a, y)| a * y).sum::<f64>().abs(),
        box_violation: m
            .alphas
            .iter()
            .zip(&m.upper_bounds)
            .map(|(&a, &c)| (-a).max(a - c).max(0.0))
            .fold(0.0, f64::max),
    })
}

/// One-vs-rest models, one per class in class-set order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub classes: Vec<String>,
    pub models: Vec<SvmModel>,
}

/// `labels[i]` indexes into `classes`.
pub fn train_multiclass(k_train: &MatrixF64, labels: &[usize], classes: &[String], cfg: &SvmConfig) -> Result<MulticlassModel> {
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::InvalidInput(format!("label index {bad} out of range")));
    }
    let mut models = Vec::with_capacity(classes.len());
    for (c, name) in classes.iter().enumerate() {
        if !labels.contains(&c) {
            return Err(Error::MissingClass(name.clone()));
        }
        let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        let sub = SvmConfig {
            seed: cfg.seed.wrapping_add(c as u64),
            ..cfg.clone()
        };
        models.push(solve_binary_smo(k_train, &y, &sub)?);
    }
    Ok(MulticlassModel {
        classes: classes.to_vec(),
        models,
    })
}

/// `N_test × n_classes` decision values.
pub fn predict_scores(m: &MulticlassModel, k_test_train: &MatrixF64) -> Result<MatrixF64> {
    let cols: Vec<Vec<f64>> = m
        .models
        .iter()
        .map(|b| decision_values(b, k_test_train))
        .collect::<Result<_>>()?;
    Ok(MatrixF64::from_fn(k_test_train.rows(), cols.len(), |i, c| cols[c][i]))
}

/// Row-wise argmax (first maximum wins).
pub fn argmax_rows(scores: &MatrixF64) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
