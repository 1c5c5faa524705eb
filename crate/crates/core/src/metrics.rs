//! ROC-AUC and probability averaging across models.

use std::fmt;

use crate::error::{Error, Result};

/// Exact ROC-AUC from the rank-sum statistic, with tied scores sharing
/// their average rank (a tie between a positive and a negative counts 1/2).
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        positive_rank_sum += avg_rank * tied_pos as f64;
        i = j;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Elementwise mean of several score vectors.
pub fn ensemble_average(score_sets: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = score_sets
        .first()
        .ok_or_else(|| Error::Shape("need at least one score vector".into()))?;
    if let Some(bad) = score_sets.iter().find(|s| s.len() != first.len()) {
        return Err(Error::Shape(format!(
            "score vectors differ in length ({} vs {})",
            first.len(),
            bad.len()
        )));
    }
    let k = score_sets.len() as f64;
    Ok((0..first.len())
        .map(|i| score_sets.iter().map(|s| s[i]).sum::<f64>() / k)
        .collect())
}

/// Summary written by the evaluate stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub n: usize,
    pub positives: usize,
}

impl EvalReport {
    pub fn compute(labels: &[bool], scores: &[f64]) -> Result<Self> {
        Ok(EvalReport {
            auc: roc_auc(labels, scores)?,
            n: labels.len(),
            positives: labels.iter().filter(|l| **l).count(),
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "auc={:.6}", self.auc)?;
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "positives={}", self.positives)
    }
}
