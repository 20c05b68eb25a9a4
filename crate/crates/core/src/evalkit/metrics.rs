//! Ranking metrics. Higher scores mean "more anomalous"; labels are `true`
//! for anomalies.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::config("scores must be finite"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, with equal scores grouped.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve: Mann-Whitney `U / (n+ n-)` with mid-ranks for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision, `sum_k (R_k - R_{k-1}) P_k`, over the thresholds given by
/// the distinct score values in descending order.
///
/// Tied scores enter together, so the result does not depend on input order
/// and an all-equal ranking scores exactly the prevalence.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive"));
    }
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for g in tie_groups(scores) {
        let gp = g.iter().filter(|&&k| labels[k]).count();
        tp += gp;
        seen += g.len();
        if gp > 0 {
            ap += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Largest TPR among thresholds whose FPR does not exceed `fpr_cap`.
///
/// Thresholds are the distinct scores (predict anomalous when `score >= thr`)
/// plus one above the maximum; there is no interpolation between them.
pub fn tpr_at_fpr(scores: &[f64], labels: &[bool], fpr_cap: f64) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("TPR@FPR needs both classes"));
    }
    let (mut tp, mut fp, mut best) = (0usize, 0usize, 0.0f64);
    for g in tie_groups(scores) {
        for &k in &g {
            if labels[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        if (fp as f64 / neg as f64).partial_cmp(&fpr_cap) != Some(Ordering::Greater) {
            best = best.max(tp as f64 / pos as f64);
        } else {
            break;
        }
    }
    Ok(best)
}

/// Metric triple for one scored set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub auprc: f64,
    pub auroc: f64,
    pub tpr_at_1fpr: f64,
}

pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<Metrics> {
    Ok(Metrics {
        auprc: auprc(scores, labels)?,
        auroc: auroc(scores, labels)?,
        tpr_at_1fpr: tpr_at_fpr(scores, labels, 0.01)?,
    })
}
