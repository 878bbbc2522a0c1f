use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::features::{build_feature_matrix, History, Sample};
use super::normalize::{MinMax, NormStats};
use super::record::DailyRecord;
use super::{DataError, Result};

/// Chronological train/test boundaries. `train_end` defaults to the day
/// before `test_start`; `train_start` defaults to the first record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_start: Option<NaiveDate>,
    pub train_end: Option<NaiveDate>,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl SplitSpec {
    pub fn test_window(test_start: NaiveDate, test_end: NaiveDate) -> Self {
        SplitSpec {
            train_start: None,
            train_end: None,
            test_start,
            test_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: NormStats,
    pub train_range: (NaiveDate, NaiveDate),
    pub test_range: (NaiveDate, NaiveDate),
    /// Target days dropped for lack of similar-day history.
    pub skipped: Vec<NaiveDate>,
}

/// Split records into train and test samples. Normalization statistics come
/// from the training days only and are applied to both sides.
pub fn split_train_test(records: &[DailyRecord], spec: &SplitSpec) -> Result<DatasetSplit> {
    let history = History::new(records)?;
    let first = records
        .first()
        .ok_or_else(|| DataError::Invalid("no records".into()))?
        .date;
    if spec.test_end < spec.test_start {
        return Err(DataError::EmptyTestWindow {
            start: spec.test_start,
            end: spec.test_end,
        });
    }
    let train_start = spec.train_start.unwrap_or(first);
    let train_end = match spec.train_end {
        Some(end) => {
            if spec.test_start <= end {
                return Err(DataError::Chronology(format!(
                    "test window starts {} on or before the last training day {end}",
                    spec.test_start
                )));
            }
            end
        }
        None => spec
            .test_start
            .pred_opt()
            .ok_or_else(|| DataError::Invalid("test_start has no predecessor".into()))?,
    };
    if train_end < train_start {
        return Err(DataError::Chronology(format!("training range {train_start}..={train_end} is empty")));
    }

    let in_train = |d: NaiveDate| d >= train_start && d <= train_end;
    let train_records: Vec<&DailyRecord> = records.iter().filter(|r| in_train(r.date)).collect();
    let load = MinMax::fit(train_records.iter().flat_map(|r| r.loads))
        .ok_or_else(|| DataError::Invalid(format!("no records in training range {train_start}..={train_end}")))?;
    let temperature = MinMax::fit(train_records.iter().flat_map(|r| r.temps)).expect("same records as loads");
    let stats = NormStats { load, temperature };

    let mut skipped = Vec::new();
    let mut build = |dates: &mut dyn Iterator<Item = NaiveDate>| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for d in dates {
            match build_feature_matrix(d, &history, &stats) {
                Ok(s) => out.push(s),
                Err(DataError::SkipDay { date, .. }) => skipped.push(date),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    };
    let train = build(&mut train_records.iter().map(|r| r.date))?;
    let test_dates: Vec<NaiveDate> = records
        .iter()
        .map(|r| r.date)
        .filter(|&d| d >= spec.test_start && d <= spec.test_end)
        .collect();
    let test = build(&mut test_dates.into_iter())?;
    if test.is_empty() {
        return Err(DataError::EmptyTestWindow {
            start: spec.test_start,
            end: spec.test_end,
        });
    }
    if train.is_empty() {
        return Err(DataError::Invalid("no usable training days".into()));
    }
    Ok(DatasetSplit {
        train,
        test,
        stats,
        train_range: (train_start, train_end),
        test_range: (spec.test_start, spec.test_end),
        skipped,
    })
}
