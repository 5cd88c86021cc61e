//! Evaluation metrics: accuracy, rank-based AUC (macro one-vs-rest for more
//! than two classes), adjusted Rand index, η² effect size and confusion counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "accuracy needs equal non-empty inputs, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Average ranks (1-based) with ties sharing the mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUC of `scores` for the positive set. `None` when either
/// class is missing.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// AUC from per-class probability rows. Two classes use the class-1 column;
/// more classes are macro-averaged one-vs-rest over the classes present.
pub fn auc(scores: &Matrix, labels: &[usize]) -> Result<f64> {
    let (n, classes) = scores.shape();
    if n == 0 || n != labels.len() {
        return Err(Error::contract("auc needs one probability row per label"));
    }
    if classes < 2 {
        return Err(Error::contract("auc needs at least two classes"));
    }
    for (i, row) in scores.row_iter().enumerate() {
        let total = row.sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!("probability row {i} sums to {total}")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {bad} outside {classes} classes")));
    }
    let column = |c: usize| scores.column(c).iter().copied().collect::<Vec<f64>>();
    if classes == 2 {
        let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return binary_auc(&column(1), &positive)
            .ok_or_else(|| Error::contract("binary auc needs both classes present"));
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..classes {
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match binary_auc(&column(c), &positive) {
            Some(a) => {
                total += a;
                used += 1;
            }
            None => log::warn!("class {c} has no positive or no negative samples; excluded from macro AUC"),
        }
    }
    if used == 0 {
        return Err(Error::contract("no class has both positive and negative samples"));
    }
    Ok(total / used as f64)
}

/// One point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve of `scores` against `positive`, thresholds descending.
pub fn roc_points(scores: &[f64], positive: &[bool]) -> Vec<RocPoint> {
    let n_pos = positive.iter().filter(|&&p| p).count().max(1) as f64;
    let n_neg = positive.iter().filter(|&&p| !p).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp / n_neg,
            tpr: tp / n_pos,
        });
    }
    points
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract("partitions must label the same number of items"));
    }
    let n = a.len();
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both partitions trivial (all singletons or one block): agreement is perfect iff identical structure
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Share of total variance explained by the grouping, `SS_between / SS_total`.
pub fn eta_squared(values: &[f64], groups: &[usize]) -> Result<f64> {
    if values.len() != groups.len() || values.is_empty() {
        return Err(Error::contract("eta squared needs one group label per value"));
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&v, &g) in values.iter().zip(groups) {
        let e = sums.entry(g).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    if sums.len() < 2 {
        return Err(Error::contract("eta squared needs at least two groups"));
    }
    let grand = values.iter().sum::<f64>() / values.len() as f64;
    let ss_total: f64 = values.iter().map(|v| (v - grand).powi(2)).sum();
    if ss_total == 0.0 {
        return Ok(0.0);
    }
    let ss_between: f64 = sums
        .values()
        .map(|&(s, c)| c as f64 * (s / c as f64 - grand).powi(2))
        .sum();
    Ok((ss_between / ss_total).clamp(0.0, 1.0))
}

/// `counts[actual][predicted]`.
pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != labels.len() {
        return Err(Error::contract("confusion needs equal-length inputs"));
    }
    let mut counts = vec![vec![0; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::contract(format!("class id outside 0..{classes}")));
        }
        counts[l][p] += 1;
    }
    Ok(counts)
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auc_macro_ovr: f64,
    pub confusion: Vec<Vec<usize>>,
    /// Fraction of instances whose assigned role matches the generator's role.
    pub role_accuracy: Option<f64>,
    /// Mean ARI between cluster assignments and generator roles.
    pub role_ari: Option<f64>,
    /// Mean η² of instance-to-prior distances grouped by assigned role.
    pub eta_squared: Option<f64>,
}
