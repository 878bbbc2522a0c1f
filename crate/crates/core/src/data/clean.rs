//! Anomalous-day detection and outlier replacement.
//!
//! A day is anomalous when the population standard deviation of its hourly
//! loads exceeds a threshold. Within an anomalous day, every hour whose
//! distance from the daily mean exceeds one standard deviation is flagged and
//! replaced by the mean of its nearest unflagged neighbours.

use chrono::NaiveDate;

use super::record::{DailyRecord, HOURS};
use super::{DataError, Result};

/// Default threshold on the daily standard deviation. Only meaningful for
/// kW-scale data; MW datasets must supply their own value.
pub const DEFAULT_SIGMA_THRESHOLD_KW: f64 = 140.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyCheck {
    pub mean: f64,
    pub sigma: f64,
    pub anomalous: bool,
}

/// Mean and population (divisor h) standard deviation.
pub fn day_statistics(loads: &[f64]) -> (f64, f64) {
    let h = loads.len() as f64;
    let mean = loads.iter().sum::<f64>() / h;
    let var = loads.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h;
    (mean, var.sqrt())
}

pub fn detect_anomalous_day(rec: &DailyRecord, threshold: f64) -> AnomalyCheck {
    let (mean, sigma) = day_statistics(&rec.loads);
    AnomalyCheck {
        mean,
        sigma,
        anomalous: sigma > threshold,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replacement {
    pub date: NaiveDate,
    /// 1-based hour.
    pub hour: usize,
    pub original: f64,
    pub replacement: f64,
}

/// Flag `|x - mean| / sigma > 1` and replace each flagged hour by the mean of
/// the nearest unflagged hour on either side (a single side at the edges).
pub fn locate_and_replace_outliers(rec: &DailyRecord) -> Result<(DailyRecord, Vec<Replacement>)> {
    let (mean, sigma) = day_statistics(&rec.loads);
    let flagged: [bool; HOURS] = std::array::from_fn(|a| sigma > 0.0 && (rec.loads[a] - mean).abs() / sigma > 1.0);
    if flagged.iter().all(|&f| f) {
        return Err(DataError::UnrecoverableDay { date: rec.date });
    }
    let mut out = rec.clone();
    let mut log = Vec::new();
    for a in (0..HOURS).filter(|&a| flagged[a]) {
        let left = (0..a).rev().find(|&i| !flagged[i]).map(|i| rec.loads[i]);
        let right = (a + 1..HOURS).find(|&i| !flagged[i]).map(|i| rec.loads[i]);
        let value = match (left, right) {
            (Some(l), Some(r)) => (l + r) / 2.0,
            (Some(v), None) | (None, Some(v)) => v,
            (None, None) => unreachable!("at least one hour is unflagged"),
        };
        out.loads[a] = value;
        out.replaced[a] = true;
        log.push(Replacement {
            date: rec.date,
            hour: a + 1,
            original: rec.loads[a],
            replacement: value,
        });
    }
    Ok((out, log))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CleaningReport {
    pub records: Vec<DailyRecord>,
    pub anomalous_days: Vec<(NaiveDate, f64)>,
    pub replacements: Vec<Replacement>,
    /// Days where every hour was flagged; removed from `records`.
    pub dropped: Vec<NaiveDate>,
}

/// Detect and repair every record.
pub fn clean_records(records: &[DailyRecord], threshold: f64) -> CleaningReport {
    let mut report = CleaningReport::default();
    for rec in records {
        let check = detect_anomalous_day(rec, threshold);
        if !check.anomalous {
            report.records.push(rec.clone());
            continue;
        }
        report.anomalous_days.push((rec.date, check.sigma));
        match locate_and_replace_outliers(rec) {
            Ok((cleaned, log)) => {
                report.records.push(cleaned);
                report.replacements.extend(log);
            }
            Err(_) => report.dropped.push(rec.date),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(loads: [f64; HOURS]) -> DailyRecord {
        DailyRecord::new(NaiveDate::from_ymd_opt(2008, 6, 23).unwrap(), loads, [20.0; HOURS])
    }

    #[test]
    fn constant_day_is_clean() {
        let c = detect_anomalous_day(&day([500.0; HOURS]), 140.0);
        assert_eq!(c.sigma, 0.0);
        assert!(!c.anomalous);
        let (same, log) = locate_and_replace_outliers(&day([500.0; HOURS])).unwrap();
        assert!(log.is_empty());
        assert_eq!(same.loads, [500.0; HOURS]);
    }

    #[test]
    fn sinusoid_sigma_is_amplitude_over_root_two() {
        let loads = std::array::from_fn(|h| 500.0 + 100.0 * (2.0 * std::f64::consts::PI * h as f64 / 24.0).sin());
        let c = detect_anomalous_day(&day(loads), 140.0);
        assert!((c.sigma - 100.0 / 2f64.sqrt()).abs() < 1e-9);
        assert!(!c.anomalous);
    }

    #[test]
    fn spike_at_last_hour_takes_left_neighbour() {
        let mut loads = [500.0; HOURS];
        loads[22] = 480.0;
        loads[23] = 1500.0;
        let (out, log) = locate_and_replace_outliers(&day(loads)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].hour, 24);
        assert_eq!(out.loads[23], 480.0);
        assert!(out.replaced[23]);
    }

    #[test]
    fn adjacent_spikes_use_flanking_values() {
        let mut loads = [500.0; HOURS];
        loads[9] = 520.0;
        loads[10] = 1500.0;
        loads[11] = 1600.0;
        loads[12] = 440.0;
        // brute-force flag set from the literal rule
        let mean = loads.iter().sum::<f64>() / 24.0;
        let sigma = (loads.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 24.0).sqrt();
        let flags: Vec<usize> = (0..24).filter(|&a| (loads[a] - mean).abs() / sigma > 1.0).collect();
        assert_eq!(flags, vec![10, 11]);
        let (out, log) = locate_and_replace_outliers(&day(loads)).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(out.loads[10], 480.0);
        assert_eq!(out.loads[11], 480.0);
    }

    #[test]
    fn mean_square_of_scores_is_one_so_some_hour_survives() {
        // population sigma forces mean(m_a^2) == 1; a two-level day puts every hour at exactly 1
        let loads = std::array::from_fn(|h| if h % 2 == 0 { 0.0 } else { 1000.0 });
        let r = day(loads);
        let (mean, sigma) = day_statistics(&r.loads);
        assert!(r.loads.iter().all(|x| ((x - mean).abs() / sigma - 1.0).abs() < 1e-12));
        // exactly one sigma is not flagged
        assert!(locate_and_replace_outliers(&r).unwrap().1.is_empty());
    }
}
