use crate::stats::{spearman, StatsError};

/// Spearman rank correlation between predictions and ground truth
/// (average ranks for ties).
pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<f64, StatsError> {
    spearman(pred, gt)
}

/// Fraction of pairs with distinct ground truth whose predicted order
/// agrees. Pairs tied in prediction only count as wrong.
pub fn rank_accuracy(pred: &[f64], gt: &[f64]) -> Result<f64, StatsError> {
    if pred.len() != gt.len() {
        return Err(StatsError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: pred.len() });
    }
    let (mut correct, mut total) = (0u64, 0u64);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let g = gt[i].total_cmp(&gt[j]);
            if g.is_eq() {
                continue;
            }
            total += 1;
            if pred[i].total_cmp(&pred[j]) == g {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(StatsError::NoValidPairs);
    }
    Ok(correct as f64 / total as f64)
}
