use std::io::Write;

use chrono::NaiveDate;

use crate::data::HOURS;

use super::{EvalError, Result};

/// Points beyond this many standard deviations count as outliers.
pub const OUTLIER_Z: f64 = 2.0;
/// The window passes when fewer than this fraction of points are outliers.
pub const OUTLIER_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualAnalysis {
    /// `actual - forecast`, day-major.
    pub residuals: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub z: Vec<f64>,
    /// Flat indices with `|z| > 2`.
    pub outliers: Vec<usize>,
    /// `0.05 * N`.
    pub threshold: f64,
    pub passes: bool,
}

/// `count < 0.05 * n`, strictly.
pub fn outlier_rule_passes(count: usize, n: usize) -> bool {
    (count as f64) < OUTLIER_FRACTION * n as f64
}

/// Pool every hour of the window, standardize with the pooled mean and
/// standard deviation, and count `|z| > 2`.
pub fn residual_analysis(forecasts: &[[f64; HOURS]], actuals: &[[f64; HOURS]]) -> Result<ResidualAnalysis> {
    if forecasts.len() != actuals.len() || forecasts.is_empty() {
        return Err(EvalError::Length(forecasts.len(), actuals.len()));
    }
    let residuals: Vec<f64> = forecasts
        .iter()
        .zip(actuals)
        .flat_map(|(f, a)| (0..HOURS).map(move |h| a[h] - f[h]))
        .collect();
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0 && std.is_finite()) || residuals.iter().all(|&e| e == residuals[0]) {
        return Err(EvalError::ZeroVariance);
    }
    let z: Vec<f64> = residuals.iter().map(|e| (e - mean) / std).collect();
    let outliers: Vec<usize> = (0..z.len()).filter(|&i| z[i].abs() > OUTLIER_Z).collect();
    Ok(ResidualAnalysis {
        passes: outlier_rule_passes(outliers.len(), z.len()),
        threshold: OUTLIER_FRACTION * n,
        residuals,
        mean,
        std,
        z,
        outliers,
    })
}

/// `day,hour,z,flagged` rows for external plotting.
pub fn write_residual_csv<W: Write>(analysis: &ResidualAnalysis, dates: &[NaiveDate], writer: W) -> Result<()> {
    if dates.len() * HOURS != analysis.z.len() {
        return Err(EvalError::Length(dates.len() * HOURS, analysis.z.len()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["day", "hour", "z", "flagged"])?;
    for (i, z) in analysis.z.iter().enumerate() {
        w.write_record([
            dates[i / HOURS].to_string(),
            (i % HOURS + 1).to_string(),
            z.to_string(),
            u8::from(z.abs() > OUTLIER_Z).to_string(),
        ])?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: "<residual csv>".into(),
        source,
    })
}
