//! The 9 x 24 model input for one target day.
//!
//! Row layout (0-based):
//!
//! | row | content                                                        |
//! |-----|----------------------------------------------------------------|
//! | 0   | month one-hot, columns 0..12 (12..24 zero)                      |
//! | 1-2 | day-of-month one-hot over a 48-slot band, slots 0..31 used      |
//! | 3   | weekday one-hot, Monday = column 0 (7..24 zero)                 |
//! | 4   | rest-day flag broadcast over all 24 columns                     |
//! | 5   | hour ramp `h / 24`, h = 1..=24                                  |
//! | 6   | hourly temperature, normalized                                  |
//! | 7   | most recent prior same-type day loads, normalized               |
//! | 8   | second most recent prior same-type day loads, normalized        |

use std::collections::HashMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::normalize::NormStats;
use super::record::{DailyRecord, DayType, HOURS};
use super::{DataError, Result};
use crate::tensor::Tensor;

pub const FEATURE_ROWS: usize = 9;

pub(crate) const ROW_MONTH: usize = 0;
pub(crate) const ROW_DAY_A: usize = 1;
pub(crate) const ROW_WEEKDAY: usize = 3;
pub(crate) const ROW_REST: usize = 4;
pub(crate) const ROW_HOUR: usize = 5;
pub(crate) const ROW_TEMP: usize = 6;
pub(crate) const ROW_SIMILAR_1: usize = 7;
pub(crate) const ROW_SIMILAR_2: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub target_date: NaiveDate,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_values(target_date: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_ROWS * HOURS {
            return Err(DataError::Invalid(format!(
                "feature matrix needs {} values, got {}",
                FEATURE_ROWS * HOURS,
                values.len()
            )));
        }
        Ok(FeatureMatrix { target_date, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * HOURS + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * HOURS..(row + 1) * HOURS]
    }

    /// All nine features of hour slot `col`.
    pub fn column(&self, col: usize) -> [f64; FEATURE_ROWS] {
        std::array::from_fn(|r| self.get(r, col))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `[1, 9, 24]` single-channel image.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, FEATURE_ROWS, HOURS], self.values.clone()).expect("fixed shape")
    }
}

/// One supervised example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: FeatureMatrix,
    /// Normalized next-day loads.
    pub target: [f64; HOURS],
    /// Raw next-day loads in dataset units.
    pub target_raw: [f64; HOURS],
    pub day_type: DayType,
}

/// Date-indexed view over sorted records.
pub struct History<'a> {
    records: &'a [DailyRecord],
    index: HashMap<NaiveDate, usize>,
}

impl<'a> History<'a> {
    pub fn new(records: &'a [DailyRecord]) -> Result<Self> {
        if records.windows(2).any(|w| w[0].date >= w[1].date) {
            return Err(DataError::Chronology("records must be strictly sorted by date".into()));
        }
        let index = records.iter().enumerate().map(|(i, r)| (r.date, i)).collect();
        Ok(History { records, index })
    }

    pub fn get(&self, date: NaiveDate) -> Option<&'a DailyRecord> {
        self.index.get(&date).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &'a [DailyRecord] {
        self.records
    }

    /// The `n` most recent records strictly before `date` with the given day type.
    pub fn similar_days(&self, date: NaiveDate, kind: DayType, n: usize) -> Vec<&'a DailyRecord> {
        let end = self.records.partition_point(|r| r.date < date);
        self.records[..end]
            .iter()
            .rev()
            .filter(|r| r.day_type() == kind)
            .take(n)
            .collect()
    }
}

/// Build the input grid and normalized target for `target_date`.
///
/// Temperatures are the recorded values of the target day, standing in for a
/// day-ahead weather forecast. Returns [`DataError::SkipDay`] when the target
/// day or its two prior similar days are missing.
pub fn build_feature_matrix(target_date: NaiveDate, history: &History<'_>, stats: &NormStats) -> Result<Sample> {
    let target = history.get(target_date).ok_or_else(|| DataError::SkipDay {
        date: target_date,
        reason: "no record for target day".into(),
    })?;
    let kind = target.day_type();
    let similar = history.similar_days(target_date, kind, 2);
    if similar.len() < 2 {
        return Err(DataError::SkipDay {
            date: target_date,
            reason: format!("fewer than two prior {kind:?} days"),
        });
    }

    let mut v = vec![0.0; FEATURE_ROWS * HOURS];
    let mut set = |row: usize, col: usize, x: f64| v[row * HOURS + col] = x;
    set(ROW_MONTH, target_date.month0() as usize, 1.0);
    let day_slot = target_date.day0() as usize;
    set(ROW_DAY_A + day_slot / HOURS, day_slot % HOURS, 1.0);
    set(ROW_WEEKDAY, target_date.weekday().num_days_from_monday() as usize, 1.0);
    let rest = if kind == DayType::RestDay { 1.0 } else { 0.0 };
    for h in 0..HOURS {
        set(ROW_REST, h, rest);
        set(ROW_HOUR, h, (h + 1) as f64 / HOURS as f64);
        set(ROW_TEMP, h, stats.temperature.normalize(target.temps[h]));
        set(ROW_SIMILAR_1, h, stats.load.normalize(similar[0].loads[h]));
        set(ROW_SIMILAR_2, h, stats.load.normalize(similar[1].loads[h]));
    }
    Ok(Sample {
        features: FeatureMatrix {
            target_date,
            values: v,
        },
        target: std::array::from_fn(|h| stats.load.normalize(target.loads[h])),
        target_raw: target.loads,
        day_type: kind,
    })
}
