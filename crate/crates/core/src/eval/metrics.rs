//! Ranking and classification metrics.

use crate::error::{Error, Result};
use crate::matrix::MatrixF64;

/// Step-wise average precision, `Σ (R_n − R_{n−1}) · P_n` over the
/// descending-score ranking. Ties keep their original order.
pub fn average_precision(y: &[bool], scores: &[f64]) -> Result<f64> {
    if y.len() != scores.len() {
        return Err(Error::Shape(format!("{} labels, {} scores", y.len(), scores.len())));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::InvalidInput("average precision needs both positives and negatives".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { index: i });
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if y[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// One-vs-rest AP per class; `scores` is `N × n_classes`.
pub fn per_class_ap(labels: &[usize], scores: &MatrixF64) -> Result<Vec<f64>> {
    if scores.rows() != labels.len() {
        return Err(Error::Shape(format!("{} labels, {} score rows", labels.len(), scores.rows())));
    }
    (0..scores.cols())
        .map(|c| {
            if !labels.contains(&c) {
                return Err(Error::MissingClass(format!("class index {c}")));
            }
            let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            average_precision(&y, &scores.column(c))
        })
        .collect()
}

pub fn macro_pr_auc(labels: &[usize], scores: &MatrixF64) -> Result<f64> {
    let ap = per_class_ap(labels, scores)?;
    Ok(ap.iter().sum::<f64>() / ap.len() as f64)
}

/// Unweighted mean F1 over `n_classes`; a class with no true and no
/// predicted members scores 0.
pub fn f1_macro(labels: &[usize], predictions: &[usize], n_classes: usize) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::Shape(format!("{} labels, {} predictions", labels.len(), predictions.len())));
    }
    if n_classes == 0 {
        return Err(Error::InvalidInput("no classes".into()));
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (&l, &p) in labels.iter().zip(predictions) {
            match (l == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        if tp > 0 {
            let prec = tp as f64 / (tp + fp) as f64;
            let rec = tp as f64 / (tp + fneg) as f64;
            total += 2.0 * prec * rec / (prec + rec);
        }
    }
    Ok(total / n_classes as f64)
}

/// Expected AP of a uniformly random ranking with `p` positives among `n`:
/// `(1/n) · (H_n + (p−1)/(n−1) · (n − H_n))`.
pub fn expected_random_ap(p: usize, n: usize) -> f64 {
    assert!(p >= 1 && p <= n);
    if n == 1 {
        return 1.0;
    }
    let h: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    let nf = n as f64;
    (h + (p as f64 - 1.0) / (nf - 1.0) * (nf - h)) / nf
}

/// Chance macro AP for one test set with the given per-class counts.
pub fn expected_random_macro_ap(class_counts: &[usize]) -> f64 {
    let n: usize = class_counts.iter().sum();
    class_counts.iter().map(|&p| expected_random_ap(p, n)).sum::<f64>() / class_counts.len() as f64
}
