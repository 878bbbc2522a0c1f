use super::{EvalError, Result};

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(EvalError::Length(pred.len(), truth.len()));
    }
    Ok(())
}

/// Daily accuracy in percent: `(1 - RMS((pred - actual) / actual)) * 100`.
pub fn daily_accuracy(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    if let Some(hour) = truth.iter().position(|&t| t == 0.0) {
        return Err(EvalError::ZeroActual { hour: hour + 1 });
    }
    let ms = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| ((t - p) / t).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok((1.0 - ms.sqrt()) * 100.0)
}

/// Mean absolute error in load units.
pub fn daily_mean_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (t - p).abs()).sum::<f64>() / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_uniform_overprediction() {
        let t = [500.0; 24];
        assert_eq!(daily_accuracy(&t, &t).unwrap(), 100.0);
        assert_eq!(daily_mean_error(&t, &t).unwrap(), 0.0);
        let over = t.map(|v| v * 1.1);
        assert!((daily_accuracy(&over, &t).unwrap() - 90.0).abs() < 1e-12);
        let plus5 = t.map(|v| v + 5.0);
        assert_eq!(daily_mean_error(&plus5, &t).unwrap(), 5.0);
    }

    #[test]
    fn zero_actual_is_an_error() {
        let mut t = [500.0; 24];
        t[3] = 0.0;
        assert!(matches!(daily_accuracy(&[1.0; 24], &t), Err(EvalError::ZeroActual { hour: 4 })));
        assert!(daily_mean_error(&[1.0; 23], &t).is_err());
    }
}
