//! How well a per-sample score ranks the true per-sample losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::spearman;

/// Percentages at which recall is reported.
pub const RECALL_PERCENTS: [f64; 6] = [5.0, 10.0, 20.0, 30.0, 40.0, 50.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub spearman_rho: f64,
    /// Mean true loss in each tenth of the samples ordered by descending score.
    pub decile_mean_losses: Vec<f64>,
    /// Mean score in the same bands.
    pub decile_mean_scores: Vec<f64>,
    /// `(p, recall)` pairs: share of the top-p% true-loss samples found in
    /// the top-p% by score.
    pub recall_at_p: Vec<(f64, f64)>,
}

/// Indices sorted by descending value, ties by ascending index.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Bounds of band `k` out of `bands` over `n` ordered items.
pub(crate) fn band(n: usize, bands: usize, k: usize) -> std::ops::Range<usize> {
    (k * n / bands)..((k + 1) * n / bands)
}

pub fn loss_estimation_quality(scores: &[f64], losses: &[f64]) -> Result<QualityReport> {
    if scores.len() != losses.len() {
        return Err(Error::invalid(format!(
            "{} scores vs {} losses",
            scores.len(),
            losses.len()
        )));
    }
    let n = scores.len();
    if n < 10 {
        return Err(Error::invalid("need at least 10 samples"));
    }
    let by_score = descending_order(scores);
    let mut decile_mean_losses = Vec::with_capacity(10);
    let mut decile_mean_scores = Vec::with_capacity(10);
    for k in 0..10 {
        let idx = &by_score[band(n, 10, k)];
        let m = idx.len() as f64;
        decile_mean_losses.push(idx.iter().map(|&i| losses[i]).sum::<f64>() / m);
        decile_mean_scores.push(idx.iter().map(|&i| scores[i]).sum::<f64>() / m);
    }
    let by_loss = descending_order(losses);
    let recall_at_p = RECALL_PERCENTS
        .iter()
        .map(|&p| {
            let m = ((n as f64 * p / 100.0).round() as usize).max(1);
            let mut top_loss = vec![false; n];
            for &i in &by_loss[..m] {
                top_loss[i] = true;
            }
            let hits = by_score[..m].iter().filter(|&&i| top_loss[i]).count();
            (p, hits as f64 / m as f64)
        })
        .collect();
    Ok(QualityReport {
        spearman_rho: spearman(scores, losses),
        decile_mean_losses,
        decile_mean_scores,
        recall_at_p,
    })
}
