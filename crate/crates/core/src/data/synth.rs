//! Deterministic synthetic load/temperature generator used as a test fixture
//! and for the end-to-end experiments.
//!
//! Temperature level is constant within a calendar month (the season band)
//! and follows an annual cosine across months; on top sits a fixed diurnal
//! swing and optional noise. Load is a base level plus a two-peak daily
//! profile scaled per weekday, a rest-day drop, a quadratic temperature
//! response and optional noise.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::record::{DailyRecord, DayType, HOURS};
use super::{DataError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub start: NaiveDate,
    pub base_load: f64,
    pub daily_amplitude: f64,
    pub rest_day_drop: f64,
    /// Load increase per squared degree away from `comfort_temp`.
    pub temp_coupling: f64,
    pub comfort_temp: f64,
    pub temp_mean: f64,
    pub temp_seasonal_amplitude: f64,
    pub temp_diurnal_amplitude: f64,
    pub load_noise_std: f64,
    pub temp_noise_std: f64,
}

impl Default for SynthProfile {
    /// Low-noise kW-scale profile (load noise about 1% of the mean).
    fn default() -> Self {
        SynthProfile {
            start: NaiveDate::from_ymd_opt(2004, 1, 1).expect("valid date"),
            base_load: 380.0,
            daily_amplitude: 260.0,
            rest_day_drop: 90.0,
            temp_coupling: 0.25,
            comfort_temp: 18.0,
            temp_mean: 14.0,
            temp_seasonal_amplitude: 12.0,
            temp_diurnal_amplitude: 5.0,
            load_noise_std: 5.0,
            temp_noise_std: 0.5,
        }
    }
}

impl SynthProfile {
    pub fn zero_noise() -> Self {
        SynthProfile {
            load_noise_std: 0.0,
            temp_noise_std: 0.0,
            ..Self::default()
        }
    }
}

/// Fixed synthetic holidays as (month, day).
const HOLIDAYS: [(u32, u32); 5] = [(1, 1), (5, 1), (7, 4), (10, 1), (12, 25)];

/// Multiplier on the daily profile, Monday first.
const WEEKDAY_SCALE: [f64; 7] = [0.97, 1.0, 1.02, 1.01, 0.96, 0.85, 0.82];

pub fn is_synthetic_holiday(date: NaiveDate) -> bool {
    HOLIDAYS.contains(&(date.month(), date.day()))
}

/// Band temperature level for a month.
pub fn month_temperature(profile: &SynthProfile, month: u32) -> f64 {
    profile.temp_mean + profile.temp_seasonal_amplitude * (2.0 * PI * (month as f64 - 7.0) / 12.0).cos()
}

/// Two-peak daily shape in [0, ~1.3], hour 1..=24.
pub fn daily_shape(hour: usize) -> f64 {
    let h = hour as f64;
    0.5 * (1.0 - (2.0 * PI * (h - 4.0) / 24.0).cos()) + 0.35 * (-((h - 19.0) / 2.0).powi(2)).exp()
}

/// Noise-free load for one hour.
pub fn expected_load(profile: &SynthProfile, date: NaiveDate, hour: usize, temp: f64, kind: DayType) -> f64 {
    let wd = date.weekday().num_days_from_monday() as usize;
    let rest = if kind == DayType::RestDay { 1.0 } else { 0.0 };
    profile.base_load + profile.daily_amplitude * WEEKDAY_SCALE[wd] * daily_shape(hour) - profile.rest_day_drop * rest
        + profile.temp_coupling * (temp - profile.comfort_temp).powi(2)
}

/// Noise-free temperature for one hour.
pub fn expected_temperature(profile: &SynthProfile, date: NaiveDate, hour: usize) -> f64 {
    month_temperature(profile, date.month())
        + profile.temp_diurnal_amplitude * (2.0 * PI * (hour as f64 - 9.0) / 24.0).sin()
}

pub fn synthesize_dataset(seed: u64, n_days: usize, profile: &SynthProfile) -> Result<Vec<DailyRecord>> {
    if n_days < 30 {
        return Err(DataError::Invalid(format!("synthetic dataset needs at least 30 days, got {n_days}")));
    }
    let bad_std = |s: f64| !(s.is_finite() && s >= 0.0);
    if bad_std(profile.load_noise_std) || bad_std(profile.temp_noise_std) {
        return Err(DataError::Invalid("noise std must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let load_noise = Normal::new(0.0, profile.load_noise_std).expect("validated std");
    let temp_noise = Normal::new(0.0, profile.temp_noise_std).expect("validated std");
    let mut out = Vec::with_capacity(n_days);
    for date in profile.start.iter_days().take(n_days) {
        let mut rec = DailyRecord::new(date, [0.0; HOURS], [0.0; HOURS]);
        rec.is_holiday = is_synthetic_holiday(date);
        let kind = rec.day_type();
        for h in 0..HOURS {
            // draw order is fixed: temperature then load, hour by hour
            let t = expected_temperature(profile, date, h + 1) + temp_noise.sample(&mut rng);
            let l = expected_load(profile, date, h + 1, t, kind) + load_noise.sample(&mut rng);
            rec.temps[h] = t;
            rec.loads[h] = l.max(0.0);
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Weekday;

    #[test]
    fn same_seed_same_series() {
        let p = SynthProfile::default();
        assert_eq!(synthesize_dataset(7, 60, &p).unwrap(), synthesize_dataset(7, 60, &p).unwrap());
        assert_ne!(synthesize_dataset(7, 60, &p).unwrap(), synthesize_dataset(8, 60, &p).unwrap());
        assert!(synthesize_dataset(7, 29, &p).is_err());
    }

    #[test]
    fn weekends_are_lighter() {
        let recs = synthesize_dataset(3, 365, &SynthProfile::default()).unwrap();
        let mean = |kind: DayType| {
            let v: Vec<f64> = recs.iter().filter(|r| r.day_type() == kind).map(|r| r.mean_load()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(DayType::RestDay) < mean(DayType::Workday));
    }

    #[test]
    fn noise_free_mondays_repeat_within_a_month() {
        let p = SynthProfile::zero_noise();
        let recs = synthesize_dataset(1, 365, &p).unwrap();
        let mut by_month: std::collections::BTreeMap<u32, Vec<&DailyRecord>> = Default::default();
        for r in recs.iter().filter(|r| r.date.weekday() == Weekday::Mon && !r.is_holiday) {
            by_month.entry(r.date.month()).or_default().push(r);
        }
        for mondays in by_month.values() {
            for m in mondays {
                assert_eq!(m.loads, mondays[0].loads);
                // and equals the generator formula evaluated directly
                for h in 0..HOURS {
                    let t = expected_temperature(&p, m.date, h + 1);
                    assert_eq!(m.loads[h], expected_load(&p, m.date, h + 1, t, DayType::Workday));
                }
            }
        }
    }
}
