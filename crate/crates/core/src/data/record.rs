use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

/// Hourly slots per day.
pub const HOURS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DayType {
    Workday,
    /// Weekend or holiday.
    RestDay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "kW")]
    Kw,
    #[serde(rename = "MW")]
    Mw,
}

impl FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kw" => Ok(Unit::Kw),
            "mw" => Ok(Unit::Mw),
            other => Err(format!("unknown unit `{other}` (expected kW or MW)")),
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Kw => "kW",
            Unit::Mw => "MW",
        })
    }
}

/// One calendar day of hourly loads plus weather and calendar attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub loads: [f64; HOURS],
    pub temps: [f64; HOURS],
    pub humidity: Option<f64>,
    pub rainfall: Option<f64>,
    pub is_holiday: bool,
    /// Per-hour flag: the load value was replaced during cleaning.
    pub replaced: [bool; HOURS],
}

impl DailyRecord {
    pub fn new(date: NaiveDate, loads: [f64; HOURS], temps: [f64; HOURS]) -> Self {
        DailyRecord {
            date,
            loads,
            temps,
            humidity: None,
            rainfall: None,
            is_holiday: false,
            replaced: [false; HOURS],
        }
    }

    pub fn is_weekend(&self) -> bool {
        matches!(self.date.weekday(), Weekday::Sat | Weekday::Sun)
    }

    pub fn day_type(&self) -> DayType {
        day_type(self.date, self.is_holiday)
    }

    pub fn mean_load(&self) -> f64 {
        self.loads.iter().sum::<f64>() / HOURS as f64
    }
}

pub fn day_type(date: NaiveDate, is_holiday: bool) -> DayType {
    if is_holiday || matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        DayType::RestDay
    } else {
        DayType::Workday
    }
}
