use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use chrono::NaiveDate;
use serde::Serialize;

use crate::data::{DayType, FeatureMatrix, NormStats, Sample, HOURS};
use crate::model::{predict_day, DayPrediction, LoadModel};

use super::metrics::{daily_accuracy, daily_mean_error};
use super::residual::{residual_analysis, ResidualAnalysis};
use super::{EvalError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DayEval {
    pub date: NaiveDate,
    pub day_type: DayType,
    pub a_d: f64,
    pub e_d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceMetrics {
    pub days: usize,
    pub a_d: f64,
    pub e_d: f64,
}

impl SliceMetrics {
    fn of<'a>(days: impl Iterator<Item = &'a DayEval>) -> Option<Self> {
        let (mut n, mut a, mut e) = (0, 0.0, 0.0);
        for d in days {
            n += 1;
            a += d.a_d;
            e += d.e_d;
        }
        (n > 0).then(|| SliceMetrics {
            days: n,
            a_d: a / n as f64,
            e_d: e / n as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub days: Vec<DayEval>,
    pub first_day: SliceMetrics,
    /// `None` when the window holds no day of that kind.
    pub workday: Option<SliceMetrics>,
    pub restday: Option<SliceMetrics>,
    pub overall: SliceMetrics,
}

/// Metrics for any window of consecutive days.
pub fn period_report(
    forecasts: &[[f64; HOURS]],
    actuals: &[[f64; HOURS]],
    dates: &[NaiveDate],
    day_types: &[DayType],
) -> Result<EvalReport> {
    let n = forecasts.len();
    if n == 0 || actuals.len() != n || dates.len() != n {
        return Err(EvalError::Length(n, actuals.len().min(dates.len())));
    }
    if day_types.len() != n {
        return Err(EvalError::Invalid(format!(
            "day-type labels cover {} of {n} days",
            day_types.len()
        )));
    }
    if let Some(w) = dates.windows(2).find(|w| w[1] != w[0].succ_opt().unwrap_or(w[0])) {
        return Err(EvalError::Invalid(format!("days {} and {} are not consecutive", w[0], w[1])));
    }
    let days = (0..n)
        .map(|i| {
            Ok(DayEval {
                date: dates[i],
                day_type: day_types[i],
                a_d: daily_accuracy(&forecasts[i], &actuals[i])?,
                e_d: daily_mean_error(&forecasts[i], &actuals[i])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        first_day: SliceMetrics::of(days.iter().take(1)).expect("non-empty"),
        workday: SliceMetrics::of(days.iter().filter(|d| d.day_type == DayType::Workday)),
        restday: SliceMetrics::of(days.iter().filter(|d| d.day_type == DayType::RestDay)),
        overall: SliceMetrics::of(days.iter()).expect("non-empty"),
        days,
    })
}

/// [`period_report`] restricted to a seven-day week.
pub fn weekly_report(
    forecasts: &[[f64; HOURS]],
    actuals: &[[f64; HOURS]],
    dates: &[NaiveDate],
    day_types: &[DayType],
) -> Result<EvalReport> {
    if forecasts.len() != 7 {
        return Err(EvalError::Invalid(format!(
            "weekly report needs 7 consecutive days, got {}",
            forecasts.len()
        )));
    }
    period_report(forecasts, actuals, dates, day_types)
}

/// Median wall time in milliseconds of `runs` single-day predictions.
pub fn time_predict_day(model: &LoadModel, features: &FeatureMatrix, stats: &NormStats, runs: usize) -> Result<f64> {
    let mut times = Vec::with_capacity(runs.max(1));
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        predict_day(model, features, stats)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let m = times.len() / 2;
    Ok(if times.len() % 2 == 1 { times[m] } else { 0.5 * (times[m - 1] + times[m]) })
}

/// Everything reported for a trained model over a test window.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub predictions: Vec<DayPrediction>,
    pub actuals: Vec<[f64; HOURS]>,
    pub init: EvalReport,
    pub refined: EvalReport,
    pub residual_init: Option<ResidualAnalysis>,
    pub residual_refined: Option<ResidualAnalysis>,
    pub timing_ms: Option<f64>,
    pub warnings: Vec<String>,
}

/// Predict every sample and score both forecasts in load units.
/// `timing_runs == 0` skips the latency measurement.
pub fn evaluate_model(model: &LoadModel, samples: &[Sample], stats: &NormStats, timing_runs: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(EvalError::Invalid("test window is empty".into()));
    }
    let feats: Vec<&FeatureMatrix> = samples.iter().map(|s| &s.features).collect();
    let predictions = model.predict(&feats, stats)?;
    let actuals: Vec<[f64; HOURS]> = samples.iter().map(|s| s.target_raw).collect();
    let dates: Vec<NaiveDate> = predictions.iter().map(|p| p.date).collect();
    let types: Vec<DayType> = samples.iter().map(|s| s.day_type).collect();
    let init_f: Vec<[f64; HOURS]> = predictions.iter().map(|p| p.y_init_raw).collect();
    let ref_f: Vec<[f64; HOURS]> = predictions.iter().map(|p| p.y_refine_raw).collect();

    let mut warnings = Vec::new();
    let mut analyse = |f: &[[f64; HOURS]], label: &str| match residual_analysis(f, &actuals) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("{label} residuals: {e}");
            warnings.push(format!("{label} residuals: {e}"));
            None
        }
    };
    let residual_init = analyse(&init_f, "initial");
    let residual_refined = analyse(&ref_f, "refined");
    let timing_ms = if timing_runs > 0 {
        Some(time_predict_day(model, feats[0], stats, timing_runs)?)
    } else {
        None
    };
    Ok(Evaluation {
        init: period_report(&init_f, &actuals, &dates, &types)?,
        refined: period_report(&ref_f, &actuals, &dates, &types)?,
        predictions,
        actuals,
        residual_init,
        residual_refined,
        timing_ms,
        warnings,
    })
}

fn slice_cells(s: Option<SliceMetrics>) -> [String; 2] {
    match s {
        Some(s) => [format!("{:.2}", s.a_d), format!("{:.2}", s.e_d)],
        None => ["-".into(), "-".into()],
    }
}

/// Plain-text table with one row per day and one per slice.
pub fn format_report_table(label: &str, report: &EvalReport, timing_ms: Option<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{label}");
    let _ = writeln!(out, "{:<12} {:<8} {:>8} {:>10}", "day", "type", "A_d(%)", "E_d");
    for d in &report.days {
        let kind = match d.day_type {
            DayType::Workday => "work",
            DayType::RestDay => "rest",
        };
        let _ = writeln!(out, "{:<12} {:<8} {:>8.2} {:>10.2}", d.date.to_string(), kind, d.a_d, d.e_d);
    }
    for (name, s) in [
        ("first day", Some(report.first_day)),
        ("workdays", report.workday),
        ("rest days", report.restday),
        ("mean", Some(report.overall)),
    ] {
        let [a, e] = slice_cells(s);
        let _ = writeln!(out, "{name:<21} {a:>8} {e:>10}");
    }
    if let Some(t) = timing_ms {
        let _ = writeln!(out, "median predict_day time: {t:.3} ms");
    }
    out
}

/// `forecast,row,date,day_type,a_d,e_d`; slice rows leave date and day_type empty.
pub fn write_report_csv<W: Write>(reports: &[(&str, &EvalReport)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["forecast", "row", "date", "day_type", "a_d", "e_d"])?;
    for (label, r) in reports {
        for d in &r.days {
            let kind = match d.day_type {
                DayType::Workday => "workday",
                DayType::RestDay => "restday",
            };
            w.write_record([*label, "day", &d.date.to_string(), kind, &d.a_d.to_string(), &d.e_d.to_string()])?;
        }
        for (name, s) in [
            ("first_day", Some(r.first_day)),
            ("workday_mean", r.workday),
            ("restday_mean", r.restday),
            ("mean", Some(r.overall)),
        ] {
            let (a, e) = s.map_or((String::new(), String::new()), |s| (s.a_d.to_string(), s.e_d.to_string()));
            w.write_record([*label, name, "", "", &a, &e])?;
        }
    }
    w.flush().map_err(|source| EvalError::Io {
        path: "<report csv>".into(),
        source,
    })
}
