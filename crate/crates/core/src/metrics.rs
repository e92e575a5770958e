//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    /// Rows evaluated (pairs for AUC: positives times negatives).
    pub n: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(validation(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(validation("empty input"));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks,
/// so tied scores count one half.
pub fn auc(labels: &[f64], scores: &[f64]) -> Result<MetricValue> {
    check_lengths(labels.len(), scores.len())?;
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(validation("AUC labels must be 0 or 1"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(MetricValue {
        name: "auc".into(),
        value: u / (p * n_neg as f64),
        n: n_pos * n_neg,
    })
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<MetricValue> {
    check_lengths(y.len(), yhat.len())?;
    let value = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    Ok(MetricValue {
        name: "mae".into(),
        value,
        n: y.len(),
    })
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<MetricValue> {
    check_lengths(y.len(), yhat.len())?;
    let value = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    Ok(MetricValue {
        name: "mse".into(),
        value,
        n: y.len(),
    })
}

/// Coefficient of determination `1 - SSE/SST`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<MetricValue> {
    check_lengths(y.len(), yhat.len())?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("R2 of a constant target".into()));
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(MetricValue {
        name: "r2".into(),
        value: 1.0 - sse / sst,
        n: y.len(),
    })
}
