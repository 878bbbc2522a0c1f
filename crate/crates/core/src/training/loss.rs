use crate::data::HOURS;
use crate::tensor::{Graph, Tensor, Var};

use super::{Result, TrainError};

/// Mean squared error of one day.
pub fn mse_day_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(TrainError::Length(pred.len(), truth.len()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Mean of the per-day losses over a batch.
pub fn batch_loss(preds: &[[f64; HOURS]], truths: &[[f64; HOURS]]) -> Result<f64> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(TrainError::Length(preds.len(), truths.len()));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        total += mse_day_loss(p, t)?;
    }
    Ok(total / preds.len() as f64)
}

/// Batch loss on the tape for a `[24, B]` prediction. Every day has the same
/// 24 terms, so the mean of all entries equals the mean of per-day means.
pub fn loss_graph(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq)?)
}

/// `[24, B]` matrix from per-day rows.
pub(crate) fn day_columns(rows: &[[f64; HOURS]]) -> Tensor {
    let b = rows.len();
    Tensor::from_fn([HOURS, b], |k| rows[k % b][k / b])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_offset() {
        let y = [0.5; HOURS];
        assert_eq!(mse_day_loss(&y, &y).unwrap(), 0.0);
        let shifted = y.map(|v| v + 0.25);
        assert_eq!(mse_day_loss(&shifted, &y).unwrap(), 0.0625);
        assert!(mse_day_loss(&y[..23], &y).is_err());
    }

    #[test]
    fn graph_loss_matches_batch_loss() {
        let preds = [[0.1; HOURS], std::array::from_fn(|h| h as f64 / 24.0)];
        let truths = [[0.4; HOURS], [0.2; HOURS]];
        let mut g = Graph::new();
        let p = g.constant(day_columns(&preds));
        let l = loss_graph(&mut g, p, &day_columns(&truths)).unwrap();
        let direct = batch_loss(&preds, &truths).unwrap();
        assert!((g.value(l).item().unwrap() - direct).abs() < 1e-15);
    }
}
